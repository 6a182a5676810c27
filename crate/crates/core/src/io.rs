//! On-disk formats: CSV tables, the versioned model file and TOML run
//! configurations.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backfit::{AdditiveFit, ComponentFit, Dataset, FitConfig};
use crate::component::ShapeSpec;
use crate::error::{Error, Result};
use crate::eval::GridSpec;

pub const MODEL_FORMAT: &str = "shapefit-model";
pub const MODEL_VERSION: u32 = 1;

/// A numeric CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Splits off the response column and builds a dataset from the rest.
    pub fn into_dataset(mut self, response: &str) -> Result<Dataset> {
        let idx = self.index_of(response).ok_or_else(|| {
            Error::invalid(format!("response column '{response}' not found in header"))
        })?;
        let y = self.columns.remove(idx);
        self.names.remove(idx);
        Dataset::with_names(self.columns, y, self.names)
    }

    /// Covariate columns matching `names`, in that order. Extra columns are
    /// ignored.
    pub fn select(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .map(|i| self.columns[i].clone())
                    .ok_or_else(|| Error::invalid(format!("column '{n}' not found in header")))
            })
            .collect()
    }
}

/// Reads a comma-separated table whose cells must all parse as finite
/// numbers. Row numbers in errors count data rows from 1.
pub fn read_table(reader: impl Read) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::invalid("CSV header is empty"));
    }
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::invalid(format!("CSV header has an empty name at position {}", i + 1)));
        }
        if names[..i].contains(n) {
            return Err(Error::invalid(format!("duplicate column name '{n}'")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, name) in names.iter().enumerate() {
            let cell = record.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::BadCell {
                row: r + 1,
                column: name.clone(),
                message: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("'{cell}' is not a number")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::BadCell {
                    row: r + 1,
                    column: name.clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            columns[c].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn read_table_file(path: &Path) -> Result<Table> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    read_table(std::io::BufReader::new(file))
}

/// Writes columns under a header. Numbers use the shortest representation
/// that parses back to the same value.
pub fn write_table(writer: impl Write, names: &[String], columns: &[Vec<f64>]) -> Result<()> {
    if names.len() != columns.len() {
        return Err(Error::LengthMismatch {
            expected: names.len(),
            actual: columns.len(),
        });
    }
    let rows = columns.first().map_or(0, Vec::len);
    if let Some(c) = columns.iter().find(|c| c.len() != rows) {
        return Err(Error::LengthMismatch {
            expected: rows,
            actual: c.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(names)?;
    let mut buf = Vec::with_capacity(names.len());
    for i in 0..rows {
        buf.clear();
        buf.extend(columns.iter().map(|c| c[i].to_string()));
        w.write_record(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a dataset with its response as the last column.
pub fn write_dataset(writer: impl Write, data: &Dataset, response: &str) -> Result<()> {
    let mut names = data.names().to_vec();
    names.push(response.to_string());
    let mut columns = data.columns().to_vec();
    columns.push(data.y().to_vec());
    write_table(writer, &names, &columns)
}

/// Writes bytes to a path, or to standard output when the path is `-`.
pub fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
        return Ok(());
    }
    fs::write(path, bytes)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// One stored component: knots as `(x, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentRecord {
    pub column: String,
    pub shape: ShapeSpec,
    pub norm: f64,
    pub knots: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Serialized model: pretty-printed JSON with a format tag and version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub response: String,
    pub intercept: f64,
    pub components: Vec<ComponentRecord>,
    pub fit: FitMetadata,
}

impl ModelFile {
    pub fn from_fit(fit: &AdditiveFit, names: &[String], response: &str, shape: &ShapeSpec) -> Result<Self> {
        if names.len() != fit.components().len() {
            return Err(Error::LengthMismatch {
                expected: fit.components().len(),
                actual: names.len(),
            });
        }
        let components = fit
            .components()
            .iter()
            .zip(names)
            .map(|(c, name)| ComponentRecord {
                column: name.clone(),
                shape: c.shape,
                norm: c.norm,
                knots: c.knots.iter().zip(&c.values).map(|(&x, &v)| [x, v]).collect(),
            })
            .collect();
        let objective = fit.objective();
        let model = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            response: response.to_string(),
            intercept: fit.intercept,
            components,
            fit: FitMetadata {
                lambda_d: shape.lambda_d,
                lambda_t: shape.lambda_t,
                lambda_s: shape.lambda_s,
                sweeps: fit.sweeps(),
                converged: fit.converged(),
                objective: if objective.is_finite() { objective } else { 0.0 },
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Model(format!("unknown format tag '{}'", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported version {} (this build reads version {MODEL_VERSION})",
                self.version
            )));
        }
        if !self.intercept.is_finite() {
            return Err(Error::Model("intercept is not finite".into()));
        }
        for c in &self.components {
            c.shape.validate().map_err(|e| Error::Model(format!("component '{}': {e}", c.column)))?;
            if c.knots.iter().flatten().any(|v| !v.is_finite()) || !c.norm.is_finite() {
                return Err(Error::Model(format!("component '{}' has non-finite values", c.column)));
            }
            if c.knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(Error::Model(format!(
                    "component '{}': knots must be strictly increasing",
                    c.column
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.components.iter().map(|c| c.column.clone()).collect()
    }

    pub fn to_fit(&self) -> AdditiveFit {
        let components = self
            .components
            .iter()
            .map(|c| ComponentFit {
                shape: c.shape,
                knots: c.knots.iter().map(|k| k[0]).collect(),
                values: c.knots.iter().map(|k| k[1]).collect(),
                norm: c.norm,
            })
            .collect();
        AdditiveFit::from_components(self.intercept, components)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("cannot parse model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_output(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_json(&text)
    }
}

/// Settings read from a TOML file; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<String>,
    pub lambda_d: Option<f64>,
    pub lambda_t: Option<f64>,
    pub lambda_s: Option<f64>,
    /// Select penalties on a grid instead of using fixed values.
    pub grid: Option<bool>,
    pub grid_spec: Option<GridSpec>,
    pub tol: Option<f64>,
    pub inner_tol: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub inner_max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub response: Option<String>,
    pub data: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Per-column shape overrides keyed by column name.
    pub overrides: BTreeMap<String, ShapeSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.mode {
            crate::eval::mode_from_name(m)?;
        }
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_t", self.lambda_t),
            ("lambda_s", self.lambda_s),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
                }
            }
        }
        for (name, v) in [("tol", self.tol), ("inner_tol", self.inner_tol)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.max_sweeps == Some(0) || self.inner_max_iter == Some(0) {
            return Err(Error::Config("iteration caps must be at least 1".into()));
        }
        if let Some(g) = &self.grid_spec {
            g.validate()?;
        }
        for spec in self.overrides.values() {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Fit controls with this file's tolerances applied to `base`.
    pub fn apply(&self, mut base: FitConfig) -> FitConfig {
        if let Some(v) = self.tol {
            base.outer_tol = v;
        }
        if let Some(v) = self.inner_tol {
            base.inner_tol = v;
        }
        if let Some(v) = self.max_sweeps {
            base.max_sweeps = v;
        }
        if let Some(v) = self.inner_max_iter {
            base.inner_max_iter = v;
        }
        base
    }
}
