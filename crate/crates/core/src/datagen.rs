//! Synthetic scenarios with four active components and spurious-column
//! augmentation.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backfit::Dataset;
use crate::error::{Error, Result};

/// Covariates are drawn from `Uniform(-DOMAIN, DOMAIN)`.
pub const DOMAIN: f64 = 2.5;

/// Number of nonzero components in every scenario.
pub const ACTIVE: usize = 4;

const CALIBRATION_DRAWS: usize = 100_000;
const CALIBRATION_SEED: u64 = 0x5eed_ca11_b4a7_e000;
const QUADRATURE_INTERVALS: usize = 200_000;

/// Univariate function descriptor. Evaluation is centered separately by
/// [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentFn {
    /// `levels[k]` on `[breaks[k-1], breaks[k])`.
    Step { breaks: Vec<f64>, levels: Vec<f64> },
    /// `amplitude * sin(frequency * x + phase)`
    Sine { amplitude: f64, frequency: f64, phase: f64 },
    /// `coefficient * x^3`
    Cubic { coefficient: f64 },
    /// `amplitude * exp(-(x - center)^2 / (2 width^2))`
    GaussianBump { amplitude: f64, center: f64, width: f64 },
    /// `amplitude * |x - center|`
    Abs { amplitude: f64, center: f64 },
    /// `amplitude * max(x - knot, 0)`
    Hinge { amplitude: f64, knot: f64 },
    /// `amplitude * max(1 - |x - center| / half_width, 0)`
    Triangle { amplitude: f64, center: f64, half_width: f64 },
}

/// Structural class of a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnClass {
    PiecewiseConstant,
    PiecewiseLinear,
    Smooth,
}

impl ComponentFn {
    pub fn eval_raw(&self, x: f64) -> f64 {
        match self {
            ComponentFn::Step { breaks, levels } => levels[breaks.partition_point(|&b| b <= x)],
            ComponentFn::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).sin(),
            ComponentFn::Cubic { coefficient } => coefficient * x * x * x,
            ComponentFn::GaussianBump {
                amplitude,
                center,
                width,
            } => amplitude * (-(x - center).powi(2) / (2.0 * width * width)).exp(),
            ComponentFn::Abs { amplitude, center } => amplitude * (x - center).abs(),
            ComponentFn::Hinge { amplitude, knot } => amplitude * (x - knot).max(0.0),
            ComponentFn::Triangle {
                amplitude,
                center,
                half_width,
            } => amplitude * (1.0 - (x - center).abs() / half_width).max(0.0),
        }
    }

    pub fn class(&self) -> FnClass {
        match self {
            ComponentFn::Step { .. } => FnClass::PiecewiseConstant,
            ComponentFn::Abs { .. } | ComponentFn::Hinge { .. } | ComponentFn::Triangle { .. } => {
                FnClass::PiecewiseLinear
            }
            _ => FnClass::Smooth,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ComponentFn::Step { breaks, levels } => {
                levels.len() == breaks.len() + 1 && breaks.windows(2).all(|w| w[0] < w[1])
            }
            ComponentFn::GaussianBump { width, .. } => *width > 0.0,
            ComponentFn::Triangle { half_width, .. } => *half_width > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("malformed component descriptor {self:?}")))
        }
    }

    /// Mean over `Uniform(-DOMAIN, DOMAIN)`: exact for steps, composite
    /// Simpson otherwise (kinks only cost O(h^2) locally).
    pub fn domain_mean(&self) -> f64 {
        if let ComponentFn::Step { breaks, levels } = self {
            let mut lo = -DOMAIN;
            let mut acc = 0.0;
            for (k, &level) in levels.iter().enumerate() {
                let hi = breaks.get(k).copied().unwrap_or(DOMAIN).clamp(-DOMAIN, DOMAIN);
                acc += level * (hi - lo).max(0.0);
                lo = lo.max(hi);
            }
            return acc / (2.0 * DOMAIN);
        }
        let m = QUADRATURE_INTERVALS;
        let h = 2.0 * DOMAIN / m as f64;
        let mut acc = self.eval_raw(-DOMAIN) + self.eval_raw(DOMAIN);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.eval_raw(-DOMAIN + k as f64 * h);
        }
        acc * h / 3.0 / (2.0 * DOMAIN)
    }
}

/// Four component functions; columns 0..4 carry the signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioDescriptor", into = "ScenarioDescriptor")]
pub struct Scenario {
    pub id: u8,
    pub functions: Vec<ComponentFn>,
    means: Vec<f64>,
}

impl Scenario {
    pub fn new(id: u8, functions: Vec<ComponentFn>) -> Result<Self> {
        if functions.len() != ACTIVE {
            return Err(Error::invalid(format!(
                "a scenario needs exactly {ACTIVE} component functions, got {}",
                functions.len()
            )));
        }
        for f in &functions {
            f.validate()?;
        }
        let means = functions.iter().map(ComponentFn::domain_mean).collect();
        Ok(Scenario { id, functions, means })
    }

    /// Built-in scenario 1 (piecewise constant), 2 (smooth) or 3
    /// (piecewise linear with one smooth component).
    pub fn builtin(id: u8) -> Result<Self> {
        use ComponentFn::*;
        let functions = match id {
            1 => vec![
                Step {
                    breaks: vec![-1.0, 1.0],
                    levels: vec![-1.5, 0.5, 1.5],
                },
                Step {
                    breaks: vec![-1.5, 0.0, 1.5],
                    levels: vec![1.0, -1.0, 1.5, -0.5],
                },
                Step {
                    breaks: vec![-0.5, 1.0],
                    levels: vec![1.5, -1.0, 0.5],
                },
                Step {
                    breaks: vec![-1.0, 0.5, 1.8],
                    levels: vec![-1.0, 1.0, 0.0, 2.0],
                },
            ],
            2 => vec![
                Sine {
                    amplitude: 1.5,
                    frequency: 1.2,
                    phase: 0.0,
                },
                Sine {
                    amplitude: 1.5,
                    frequency: 1.0,
                    phase: std::f64::consts::FRAC_PI_2,
                },
                Cubic { coefficient: 0.12 },
                GaussianBump {
                    amplitude: 2.5,
                    center: 0.0,
                    width: 0.7,
                },
            ],
            3 => vec![
                Abs {
                    amplitude: 1.2,
                    center: 0.0,
                },
                Sine {
                    amplitude: 1.5,
                    frequency: 1.5,
                    phase: 0.0,
                },
                Hinge {
                    amplitude: 1.5,
                    knot: 0.0,
                },
                Triangle {
                    amplitude: 2.5,
                    center: -0.5,
                    half_width: 1.2,
                },
            ],
            _ => return Err(Error::invalid(format!("unknown scenario {id}; expected 1, 2 or 3"))),
        };
        Self::new(id, functions)
    }

    /// Centered value of component `j` at `x`.
    pub fn eval(&self, j: usize, x: f64) -> f64 {
        self.functions[j].eval_raw(x) - self.means[j]
    }

    pub fn signal(&self, row: &[f64]) -> f64 {
        (0..ACTIVE).map(|j| self.eval(j, row[j])).sum()
    }

    /// Standard deviation of the signal over a fixed Monte Carlo draw.
    pub fn signal_sd(&self) -> f64 {
        static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
        let key = serde_json::to_string(&self.functions).unwrap_or_default();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(&sd) = cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return sd;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
        let mut row = [0.0; ACTIVE];
        let draws: Vec<f64> = (0..CALIBRATION_DRAWS)
            .map(|_| {
                row.iter_mut().for_each(|v| *v = rng.random_range(-DOMAIN..DOMAIN));
                self.signal(&row)
            })
            .collect();
        let sd = sample_sd(&draws);
        cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, sd);
        sd
    }
}

/// Serialized form of a [`Scenario`]; centering constants are recomputed
/// on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDescriptor {
    pub id: u8,
    pub functions: Vec<ComponentFn>,
}

impl TryFrom<ScenarioDescriptor> for Scenario {
    type Error = Error;

    fn try_from(d: ScenarioDescriptor) -> Result<Self> {
        Scenario::new(d.id, d.functions)
    }
}

impl From<Scenario> for ScenarioDescriptor {
    fn from(s: Scenario) -> Self {
        ScenarioDescriptor {
            id: s.id,
            functions: s.functions,
        }
    }
}

pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Size, dimension, signal-to-noise ratio and seed of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// `sd(signal) / sigma`; infinity gives noiseless responses.
    pub snr: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p < ACTIVE {
            return Err(Error::invalid(format!("p must be at least {ACTIVE}, got {}", self.p)));
        }
        if !(self.snr > 0.0) {
            return Err(Error::invalid(format!("snr must be positive, got {}", self.snr)));
        }
        Ok(())
    }
}

/// A simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: Dataset,
    /// Column indices of the nonzero components.
    pub support: Vec<usize>,
    pub sigma: f64,
    /// Noiseless regression function at each row.
    pub signal: Vec<f64>,
}

/// Draws one dataset.
pub fn generate(scenario: &Scenario, cfg: &SimConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    draw(scenario, cfg, &mut rng)
}

/// Draws training, validation and test sets of the same size from one
/// seeded stream.
pub fn generate_splits(scenario: &Scenario, cfg: &SimConfig) -> Result<[Simulation; 3]> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok([
        draw(scenario, cfg, &mut rng)?,
        draw(scenario, cfg, &mut rng)?,
        draw(scenario, cfg, &mut rng)?,
    ])
}

fn draw(scenario: &Scenario, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Simulation> {
    let (n, p) = (cfg.n, cfg.p);
    let sigma = if cfg.snr.is_infinite() {
        0.0
    } else {
        scenario.signal_sd() / cfg.snr
    };
    let mut columns = vec![Vec::with_capacity(n); p];
    let mut signal = Vec::with_capacity(n);
    let mut row = vec![0.0; p];
    for _ in 0..n {
        row.iter_mut().for_each(|v| *v = rng.random_range(-DOMAIN..DOMAIN));
        for (c, &v) in columns.iter_mut().zip(&row) {
            c.push(v);
        }
        signal.push(scenario.signal(&row));
    }
    let y: Vec<f64> = if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        signal.iter().map(|s| s + noise.sample(rng)).collect()
    } else {
        signal.clone()
    };
    Ok(Simulation {
        data: Dataset::new(columns, y)?,
        support: (0..ACTIVE).collect(),
        sigma,
        signal,
    })
}

/// Rescales every column to `[0, 1]` and appends `p_total - p` columns of
/// `Uniform(0, 1)` noise. Constant columns become all zeros.
pub fn augment_spurious(data: &Dataset, p_total: usize, seed: u64) -> Result<Dataset> {
    let p = data.p();
    if p_total < p {
        return Err(Error::invalid(format!(
            "p_total ({p_total}) is smaller than the current number of columns ({p})"
        )));
    }
    let n = data.n();
    let mut columns: Vec<Vec<f64>> = data.columns().iter().map(|c| rescale_unit(c)).collect();
    let mut names = data.names().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..p_total - p {
        columns.push((0..n).map(|_| rng.random::<f64>()).collect());
        let mut name = format!("spurious{}", k + 1);
        while names.contains(&name) {
            name.push('_');
        }
        names.push(name);
    }
    Dataset::with_names(columns, data.y().to_vec(), names)
}

fn rescale_unit(c: &[f64]) -> Vec<f64> {
    let lo = c.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        c.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; c.len()]
    }
}
