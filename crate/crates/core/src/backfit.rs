//! Modified backfitting: block coordinate descent over additive components,
//! each block update being the exact structured prox of
//! [`crate::component`].
//!
//! The objective is
//! `sum_i (y_i - mu - sum_j z_ij)^2 + sum_j (pen_j(z_j) + lambda_s ||z_j||_2)`
//! with `mu = mean(y)` fixed up front. Because the squared loss carries no
//! `1/2`, each block update calls the subproblem solver with every weight
//! halved.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::component::{
    ComponentSolver, InnerOptions, ShapeSpec, SlopeParam, SortedCovariate, TieHandling,
};
use crate::error::{Error, Result};

/// Design matrix (stored by column) and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let names = (1..=columns.len()).map(|j| format!("x{j}")).collect();
        Self::with_names(columns, y, names)
    }

    pub fn with_names(columns: Vec<Vec<f64>>, y: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 observations, got {n}")));
        }
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                expected: columns.len(),
                actual: names.len(),
            });
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::invalid(format!(
                    "column {} has {} rows, response has {n}",
                    names[j],
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite value in column {} at row {i}",
                    names[j]
                )));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite response at row {i}")));
        }
        Ok(Dataset { columns, y, names })
    }

    /// Builds from row-major covariates.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("rows have differing lengths"));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::new(columns, y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Dataset restricted to the given rows, in that order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Self::with_names(columns, y, self.names.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SweepOrder {
    #[default]
    Cyclic,
    Randomized { seed: u64 },
}

/// Controls for [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub shape: ShapeSpec,
    /// Per-component shape overrides keyed by column index.
    pub overrides: BTreeMap<usize, ShapeSpec>,
    pub outer_tol: f64,
    pub max_sweeps: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub sweep_order: SweepOrder,
    pub ties: TieHandling,
    /// After two full sweeps, sweep only active components five times
    /// between full re-screening sweeps.
    pub active_set: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            shape: ShapeSpec::dc(0.0, 0.0),
            overrides: BTreeMap::new(),
            outer_tol: 1e-6,
            max_sweeps: 200,
            inner_tol: 1e-8,
            inner_max_iter: 2000,
            sweep_order: SweepOrder::Cyclic,
            ties: TieHandling::Group,
            active_set: true,
        }
    }
}

const ACTIVE_ONLY_SWEEPS: usize = 5;
const WARMUP_FULL_SWEEPS: usize = 2;

impl FitConfig {
    pub fn new(shape: ShapeSpec) -> Self {
        FitConfig {
            shape,
            ..Default::default()
        }
    }

    pub fn shape_for(&self, j: usize) -> &ShapeSpec {
        self.overrides.get(&j).unwrap_or(&self.shape)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        for spec in self.overrides.values() {
            spec.validate()?;
        }
        if !(self.outer_tol > 0.0) || !(self.inner_tol >= 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.max_sweeps == 0 || self.inner_max_iter == 0 {
            return Err(Error::invalid("iteration caps must be at least 1"));
        }
        Ok(())
    }

    fn inner_options(&self) -> InnerOptions {
        InnerOptions::new(self.inner_tol, self.inner_max_iter)
    }
}

/// One fitted component as knots for interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub shape: ShapeSpec,
    /// Strictly increasing covariate values.
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Euclidean norm of the fitted column.
    pub norm: f64,
}

impl ComponentFit {
    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    /// Piecewise-linear interpolation, clamped to the boundary values outside
    /// the knot range. The flag reports whether clamping happened.
    pub fn eval(&self, x: f64) -> (f64, bool) {
        let k = &self.knots;
        let m = k.len();
        if m == 0 {
            return (0.0, false);
        }
        if x < k[0] {
            return (self.values[0], true);
        }
        if x > k[m - 1] {
            return (self.values[m - 1], true);
        }
        let idx = k.partition_point(|&v| v <= x);
        if idx == 0 {
            return (self.values[0], false);
        }
        let lo = idx - 1;
        if lo == m - 1 || k[lo] == x {
            return (self.values[lo], false);
        }
        let t = (x - k[lo]) / (k[lo + 1] - k[lo]);
        (self.values[lo] + t * (self.values[lo + 1] - self.values[lo]), false)
    }
}

/// Predictions plus per-column counts of clamped (out-of-range) queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub values: Vec<f64>,
    pub out_of_range: Vec<usize>,
}

/// Fitted additive model.
#[derive(Debug, Clone)]
pub struct AdditiveFit {
    pub intercept: f64,
    z: Vec<Vec<f64>>,
    components: Vec<ComponentFit>,
    active_set: Vec<usize>,
    objective_trace: Vec<f64>,
    sweeps: usize,
    converged: bool,
    inner_nonconverged: usize,
    inner_iterations: usize,
    warm: Vec<Option<SlopeParam>>,
}

impl AdditiveFit {
    /// Fitted component columns (n x p, by column), original row order.
    pub fn z(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn components(&self) -> &[ComponentFit] {
        &self.components
    }

    /// Indices of components with a nonzero fit.
    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    /// Objective at the starting point followed by its value after each sweep.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::NAN)
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Block updates whose inner solver hit its iteration cap.
    pub fn inner_nonconverged(&self) -> usize {
        self.inner_nonconverged
    }

    /// Total inner solver iterations over all block updates.
    pub fn inner_iterations(&self) -> usize {
        self.inner_iterations
    }

    /// Training fitted values: intercept plus row sums of the components.
    pub fn fitted_values(&self) -> Vec<f64> {
        let n = self.z.first().map_or(0, Vec::len);
        let mut out = vec![self.intercept; n];
        for col in &self.z {
            out.iter_mut().zip(col).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Predicts at new covariate columns (m x p, by column).
    pub fn predict(&self, columns: &[Vec<f64>]) -> Result<Prediction> {
        predict_components(self.intercept, &self.components, columns)
    }

    /// Same as [`predict`](Self::predict) with row-major input.
    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Prediction> {
        let p = self.components.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::LengthMismatch {
                expected: p,
                actual: r.len(),
            });
        }
        let columns: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        if rows.is_empty() {
            return Ok(Prediction {
                values: Vec::new(),
                out_of_range: vec![0; p],
            });
        }
        self.predict(&columns)
    }

    /// Reassembles a fit from stored components (e.g. a loaded model file).
    /// Training columns are not available, so `z()` is empty.
    pub fn from_components(intercept: f64, components: Vec<ComponentFit>) -> Self {
        let active_set = components
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(j, _)| j)
            .collect();
        let p = components.len();
        AdditiveFit {
            intercept,
            z: Vec::new(),
            components,
            active_set,
            objective_trace: Vec::new(),
            sweeps: 0,
            converged: true,
            inner_nonconverged: 0,
            inner_iterations: 0,
            warm: vec![None; p],
        }
    }
}

pub(crate) fn predict_components(
    intercept: f64,
    components: &[ComponentFit],
    columns: &[Vec<f64>],
) -> Result<Prediction> {
    if columns.len() != components.len() {
        return Err(Error::invalid(format!(
            "model has {} components but {} columns were given",
            components.len(),
            columns.len()
        )));
    }
    let m = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != m) {
        return Err(Error::invalid("prediction columns have differing lengths"));
    }
    let mut values = vec![intercept; m];
    let mut out_of_range = vec![0; components.len()];
    for (j, (comp, col)) in components.iter().zip(columns).enumerate() {
        for (out, &x) in values.iter_mut().zip(col) {
            if !x.is_finite() {
                return Err(Error::invalid(format!("non-finite query in column {j}")));
            }
            let (v, clamped) = comp.eval(x);
            *out += v;
            out_of_range[j] += usize::from(clamped);
        }
    }
    Ok(Prediction {
        values,
        out_of_range,
    })
}

/// Covariates sorted once; reusable across fits on the same rows.
#[derive(Debug, Clone)]
pub struct PreparedData<'d> {
    data: &'d Dataset,
    covariates: Vec<SortedCovariate>,
    ties: TieHandling,
}

impl<'d> PreparedData<'d> {
    pub fn new(data: &'d Dataset, ties: TieHandling) -> Result<Self> {
        let covariates = data
            .columns()
            .iter()
            .map(|c| SortedCovariate::new(c, ties))
            .collect::<Result<_>>()?;
        Ok(PreparedData {
            data,
            covariates,
            ties,
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn covariates(&self) -> &[SortedCovariate] {
        &self.covariates
    }
}

/// Runs modified backfitting from zero.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<AdditiveFit> {
    let prepared = PreparedData::new(data, config.ties)?;
    fit_prepared(&prepared, config, None)
}

/// Runs modified backfitting, optionally starting from a previous fit on the
/// same rows (warm start along a penalty path).
pub fn fit_prepared(
    prepared: &PreparedData<'_>,
    config: &FitConfig,
    warm: Option<&AdditiveFit>,
) -> Result<AdditiveFit> {
    config.validate()?;
    if prepared.ties != config.ties {
        return Err(Error::invalid("prepared data uses a different tie handling"));
    }
    let data = prepared.data;
    let (n, p) = (data.n(), data.p());
    let mu = data.y().iter().sum::<f64>() / n as f64;

    let mut solvers: Vec<ComponentSolver<'_>> =
        prepared.covariates.iter().map(ComponentSolver::new).collect();
    let mut z: Vec<Vec<f64>> = vec![vec![0.0; n]; p];
    let mut values: Vec<Vec<f64>> = prepared
        .covariates
        .iter()
        .map(|c| vec![0.0; c.num_knots()])
        .collect();

    if let Some(w) = warm {
        if w.z.len() != p || w.z.first().is_some_and(|c| c.len() != n) {
            return Err(Error::invalid("warm start does not match the data shape"));
        }
        z.clone_from(&w.z);
        for (j, comp) in w.components.iter().enumerate() {
            if comp.values.len() == values[j].len() {
                values[j].clone_from(&comp.values);
            }
        }
        for (s, ws) in solvers.iter_mut().zip(&w.warm) {
            s.warm.clone_from(ws);
        }
    }

    let mut r = residual(data.y(), mu, &z);
    let block_specs: Vec<ShapeSpec> = (0..p).map(|j| config.shape_for(j).scaled(0.5)).collect();
    let opts = config.inner_options();

    let mut trace = vec![objective_parts(&r, &values, prepared, config)];
    let mut rng = match config.sweep_order {
        SweepOrder::Randomized { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        SweepOrder::Cyclic => None,
    };

    let mut sweeps = 0;
    let mut full_sweeps = 0;
    let mut pending_active = 0;
    let mut converged = false;
    let mut inner_nonconverged = 0;
    let mut inner_iterations = 0;
    let mut order: Vec<usize> = Vec::with_capacity(p);

    while sweeps < config.max_sweeps {
        let full = pending_active == 0;
        order.clear();
        if full {
            order.extend(0..p);
        } else {
            order.extend((0..p).filter(|&j| values[j].iter().any(|&v| v != 0.0)));
        }
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }

        for &j in &order {
            let spec = config.shape_for(j);
            let col = &mut z[j];
            r.iter_mut().zip(col.iter()).for_each(|(ri, zi)| *ri += zi);

            let gaps = prepared.covariates[j].gaps();
            let out = solvers[j].solve(&r, &block_specs[j], opts);
            if !out.converged {
                inner_nonconverged += 1;
            }
            inner_iterations += out.iterations;
            let old = block_objective(&r, col, &values[j], gaps, spec);
            let new = block_objective(&r, &out.z, &out.values, gaps, spec);
            // Inexact inner solves must never increase the objective.
            if new <= old {
                *col = out.z;
                values[j] = out.values;
            }

            r.iter_mut().zip(col.iter()).for_each(|(ri, zi)| *ri -= zi);
        }
        sweeps += 1;

        r = residual(data.y(), mu, &z);
        let obj = objective_parts(&r, &values, prepared, config);
        let prev = *trace.last().unwrap();
        trace.push(obj);
        let rel = (prev - obj) / prev.abs().max(f64::MIN_POSITIVE);

        if full {
            full_sweeps += 1;
            if rel < config.outer_tol {
                converged = true;
                break;
            }
            if config.active_set && full_sweeps >= WARMUP_FULL_SWEEPS {
                pending_active = ACTIVE_ONLY_SWEEPS;
            }
        } else {
            pending_active -= 1;
            if rel < config.outer_tol {
                pending_active = 0;
            }
        }
    }

    let components: Vec<ComponentFit> = (0..p)
        .map(|j| ComponentFit {
            shape: *config.shape_for(j),
            knots: prepared.covariates[j].knots().to_vec(),
            values: values[j].clone(),
            norm: z[j].iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
        .collect();
    let active_set = (0..p).filter(|&j| components[j].norm > 0.0).collect();
    Ok(AdditiveFit {
        intercept: mu,
        z,
        components,
        active_set,
        objective_trace: trace,
        sweeps,
        converged,
        inner_nonconverged,
        inner_iterations,
        warm: solvers.into_iter().map(|s| s.warm).collect(),
    })
}

fn residual(y: &[f64], mu: f64, z: &[Vec<f64>]) -> Vec<f64> {
    let mut r: Vec<f64> = y.iter().map(|v| v - mu).collect();
    for col in z {
        r.iter_mut().zip(col).for_each(|(ri, zi)| *ri -= zi);
    }
    r
}

/// `||r - z||^2 + pen(z) + lambda_s ||z||` for one block.
fn block_objective(r: &[f64], z: &[f64], values: &[f64], gaps: &[f64], spec: &ShapeSpec) -> f64 {
    let mut loss = 0.0;
    let mut norm_sq = 0.0;
    for (ri, zi) in r.iter().zip(z) {
        loss += (ri - zi) * (ri - zi);
        norm_sq += zi * zi;
    }
    loss + spec.shape_penalty_value(values, gaps) + spec.lambda_s * norm_sq.sqrt()
}

fn objective_parts(
    r: &[f64],
    values: &[Vec<f64>],
    prepared: &PreparedData<'_>,
    config: &FitConfig,
) -> f64 {
    let rss: f64 = r.iter().map(|v| v * v).sum();
    let mut penalty = 0.0;
    for (j, (vals, cov)) in values.iter().zip(&prepared.covariates).enumerate() {
        let spec = config.shape_for(j);
        let norm_sq: f64 = vals.iter().zip(cov.counts()).map(|(v, c)| c * v * v).sum();
        penalty += spec.shape_penalty_value(vals, cov.gaps()) + spec.lambda_s * norm_sq.sqrt();
    }
    rss + penalty
}

/// Penalized objective of component columns `z` (n x p, by column).
///
/// Columns are read at their per-knot means, so `z` is expected to be
/// constant on groups of tied covariate values. Hard shape constraints
/// contribute nothing here; see [`shape_violation`].
pub fn objective(data: &Dataset, z: &[Vec<f64>], config: &FitConfig) -> Result<f64> {
    let prepared = PreparedData::new(data, config.ties)?;
    check_z_shape(data, z)?;
    let mu = data.y().iter().sum::<f64>() / data.n() as f64;
    let r = residual(data.y(), mu, z);
    let values: Vec<Vec<f64>> = prepared
        .covariates
        .iter()
        .zip(z)
        .map(|(cov, col)| cov.group_means(col))
        .collect();
    Ok(objective_parts(&r, &values, &prepared, config))
}

/// Largest violation of the hard shape constraints over all columns.
pub fn shape_violation(data: &Dataset, z: &[Vec<f64>], config: &FitConfig) -> Result<f64> {
    let prepared = PreparedData::new(data, config.ties)?;
    check_z_shape(data, z)?;
    Ok(prepared
        .covariates
        .iter()
        .zip(z)
        .enumerate()
        .map(|(j, (cov, col))| config.shape_for(j).violation(&cov.group_means(col), cov.gaps()))
        .fold(0.0, f64::max))
}

fn check_z_shape(data: &Dataset, z: &[Vec<f64>]) -> Result<()> {
    if z.len() != data.p() {
        return Err(Error::LengthMismatch {
            expected: data.p(),
            actual: z.len(),
        });
    }
    if let Some(c) = z.iter().find(|c| c.len() != data.n()) {
        return Err(Error::LengthMismatch {
            expected: data.n(),
            actual: c.len(),
        });
    }
    Ok(())
}
