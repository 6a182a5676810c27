//! Support recovery metrics, penalty grids, validation-set and K-fold
//! selection, and replicated simulation studies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backfit::{fit_prepared, AdditiveFit, Dataset, FitConfig, PreparedData};
use crate::component::{solve_subproblem, InnerProblem, ShapeMode, ShapePenalty, ShapeSpec};
use crate::datagen::{self, Scenario, SimConfig};
use crate::error::{Error, Result};

/// Default threshold on component norms in [`support_of`].
pub const SUPPORT_EPS: f64 = 1e-8;

/// Environment variable capping worker threads for grids and replicates.
pub const THREADS_ENV: &str = "SHAPEFIT_THREADS";

/// Runs `f` on a pool sized by `SHAPEFIT_THREADS` (all cores if unset).
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Indices of components whose fitted norm exceeds `eps`.
pub fn support_of(fit: &AdditiveFit, eps: f64) -> Vec<usize> {
    fit.components()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm > eps)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` when nothing was selected but the true support is nonempty.
    pub precision: Option<f64>,
    pub recall: f64,
    pub model_size: usize,
    pub test_mse: f64,
}

/// Precision and recall of an estimated support.
pub fn support_scores(estimated: &[usize], truth: &[usize]) -> (Option<f64>, f64) {
    let hits = estimated.iter().filter(|j| truth.contains(j)).count() as f64;
    let precision = match (estimated.is_empty(), truth.is_empty()) {
        (true, true) => Some(1.0),
        (true, false) => None,
        _ => Some(hits / estimated.len() as f64),
    };
    let recall = if truth.is_empty() { 1.0 } else { hits / truth.len() as f64 };
    (precision, recall)
}

pub fn mse(y: &[f64], pred: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

pub fn metrics(fit: &AdditiveFit, truth: &[usize], test: &Dataset) -> Result<MetricsReport> {
    let support = support_of(fit, SUPPORT_EPS);
    let (precision, recall) = support_scores(&support, truth);
    let pred = fit.predict(test.columns())?;
    Ok(MetricsReport {
        precision,
        recall,
        model_size: support.len(),
        test_mse: mse(test.y(), &pred.values),
    })
}

/// Shape of the default grid relative to data-driven maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_lambda_s: usize,
    /// Smallest `lambda_s` as a fraction of the largest.
    pub lambda_s_ratio: f64,
    pub n_lambda_shape: usize,
    /// Largest and smallest shape penalty as fractions of the value that
    /// flattens every component.
    pub shape_ratio_hi: f64,
    pub shape_ratio_lo: f64,
    /// Stop a validation path after this many consecutive `lambda_s` values
    /// without a new best error. `None` fits the whole path.
    pub patience: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_lambda_s: 30,
            lambda_s_ratio: 1e-3,
            n_lambda_shape: 5,
            shape_ratio_hi: 1.0,
            shape_ratio_lo: 1e-2,
            patience: Some(3),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ratio_ok = |r: f64| r > 0.0 && r <= 1.0;
        if self.n_lambda_s == 0
            || self.n_lambda_shape == 0
            || !ratio_ok(self.lambda_s_ratio)
            || !ratio_ok(self.shape_ratio_hi)
            || !ratio_ok(self.shape_ratio_lo)
            || self.shape_ratio_lo > self.shape_ratio_hi
            || self.patience == Some(0)
        {
            return Err(Error::Config(format!("invalid grid specification {self:?}")));
        }
        Ok(())
    }
}

/// `n` log-spaced values from `hi` down to `hi * ratio`.
pub fn log_spaced(hi: f64, ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let step = ratio.ln() / (n - 1) as f64;
    (0..n).map(|k| hi * (step * k as f64).exp()).collect()
}

/// Cartesian grid of (shape penalty, group penalty) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    /// Strictly decreasing.
    pub lambda_s: Vec<f64>,
    /// Strictly decreasing; `[0]` for modes without a shape penalty.
    pub lambda_shape: Vec<f64>,
    /// Early stopping of validation paths, see [`GridSpec::patience`].
    #[serde(default)]
    pub patience: Option<usize>,
}

impl LambdaGrid {
    pub fn new(mut lambda_s: Vec<f64>, mut lambda_shape: Vec<f64>) -> Result<Self> {
        for v in [&mut lambda_s, &mut lambda_shape] {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("grid values must be finite, nonnegative and nonempty".into()));
            }
            v.sort_by(|a, b| b.total_cmp(a));
            v.dedup();
        }
        Ok(LambdaGrid {
            lambda_s,
            lambda_shape,
            patience: None,
        })
    }

    pub fn with_patience(mut self, patience: Option<usize>) -> Self {
        self.patience = patience.filter(|&k| k > 0);
        self
    }

    pub fn single(lambda_shape: f64, lambda_s: f64) -> Result<Self> {
        Self::new(vec![lambda_s], vec![lambda_shape])
    }

    pub fn len(&self) -> usize {
        self.lambda_s.len() * self.lambda_shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Data-driven default: `lambda_s` from the value that zeroes every
    /// component downwards, crossed with shape penalties below the value
    /// that flattens every component.
    pub fn default_for(data: &Dataset, base: &ShapeSpec, config: &FitConfig, spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let prepared = PreparedData::new(data, config.ties)?;
        let shape_max = shape_lambda_max(&prepared, base);
        // Plain isotonic fits carry no variation penalty; LISO does.
        let gridded = match base.mode {
            ShapeMode::Isotonic => base.lambda_t > 0.0,
            mode => mode.shape_penalty().is_some(),
        };
        let lambda_shape = match gridded {
            true if shape_max > 0.0 => log_spaced(
                shape_max * spec.shape_ratio_hi,
                spec.shape_ratio_lo / spec.shape_ratio_hi,
                spec.n_lambda_shape,
            ),
            _ => vec![base.shape_lambda()],
        };
        let smallest = lambda_shape.iter().cloned().fold(f64::INFINITY, f64::min);
        let s_max = lambda_s_max(&prepared, &base.with_shape_lambda(smallest), config)?;
        let lambda_s = if s_max > 0.0 {
            log_spaced(s_max, spec.lambda_s_ratio, spec.n_lambda_s)
        } else {
            vec![0.0]
        };
        Ok(Self::new(lambda_s, lambda_shape)?.with_patience(spec.patience))
    }
}

impl ShapeSpec {
    /// Sets whichever shape weight the mode reads.
    pub fn with_shape_lambda(self, v: f64) -> Self {
        match self.mode.shape_penalty() {
            Some(ShapePenalty::Curvature) => self.with_lambda_d(v),
            Some(ShapePenalty::Variation) => self.with_lambda_t(v),
            None => self,
        }
    }
}

fn centered_response(data: &Dataset) -> Vec<f64> {
    let mu = data.y().iter().sum::<f64>() / data.n() as f64;
    data.y().iter().map(|v| v - mu).collect()
}

/// Smallest shape penalty (objective scaling) at which every component's
/// shape prox of the centered response is affine (curvature modes) or
/// constant (variation modes).
pub fn shape_lambda_max(prepared: &PreparedData<'_>, base: &ShapeSpec) -> f64 {
    let r = centered_response(prepared.data());
    let mut worst: f64 = 0.0;
    for cov in prepared.covariates() {
        let target = cov.group_means(&r);
        let weights = cov.weights();
        let value = match base.mode.shape_penalty() {
            Some(ShapePenalty::Curvature) => InnerProblem {
                target: &target,
                weights,
                gaps: cov.gaps(),
            }
            .dc_lambda_max(),
            Some(ShapePenalty::Variation) => {
                let mean = crate::prox::weighted_mean(&target, weights);
                let mut acc: f64 = 0.0;
                let mut best: f64 = 0.0;
                for (i, t) in target.iter().enumerate() {
                    acc += weights.map_or(1.0, |w| w[i]) * (t - mean);
                    best = best.max(acc.abs());
                }
                best
            }
            None => 0.0,
        };
        worst = worst.max(value);
    }
    // Block updates solve the half-weighted problem.
    2.0 * worst
}

/// Smallest `lambda_s` (objective scaling) at which a fit from zero keeps
/// every component at zero.
pub fn lambda_s_max(prepared: &PreparedData<'_>, base: &ShapeSpec, config: &FitConfig) -> Result<f64> {
    let r = centered_response(prepared.data());
    let half = base.with_lambda_s(0.0).scaled(0.5);
    let mut worst: f64 = 0.0;
    for cov in prepared.covariates() {
        let out = solve_subproblem(&r, cov, &half, config.inner_tol, config.inner_max_iter)?;
        worst = worst.max(out.pre_shrink_norm);
    }
    Ok(2.0 * worst)
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda_shape: f64,
    pub lambda_s: f64,
    pub validation_mse: f64,
    pub model_size: usize,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub spec: ShapeSpec,
    pub fit: AdditiveFit,
    pub validation_mse: f64,
    pub curve: Vec<GridPoint>,
    /// No grid point converged; the result is the best available.
    pub all_nonconverged: bool,
}

/// Fits one warm-started path over descending `lambda_s` at a fixed shape
/// penalty, calling `visit` with each fit until it returns `false`.
fn run_path(
    prepared: &PreparedData<'_>,
    base: &ShapeSpec,
    lambda_shape: f64,
    grid: &LambdaGrid,
    config: &FitConfig,
    mut visit: impl FnMut(ShapeSpec, &AdditiveFit) -> Result<bool>,
) -> Result<()> {
    let mut warm: Option<AdditiveFit> = None;
    for &ls in &grid.lambda_s {
        let spec = base.with_shape_lambda(lambda_shape).with_lambda_s(ls);
        let cfg = FitConfig {
            shape: spec,
            ..config.clone()
        };
        let fit = fit_prepared(prepared, &cfg, warm.as_ref())?;
        if !visit(spec, &fit)? {
            break;
        }
        warm = Some(fit);
    }
    Ok(())
}

/// Chooses the grid point with the smallest validation MSE. Ties go to the
/// larger `lambda_s`, then the larger shape penalty.
pub fn grid_select(
    train: &Dataset,
    validation: &Dataset,
    grid: &LambdaGrid,
    base: &ShapeSpec,
    config: &FitConfig,
) -> Result<Selection> {
    if train.p() != validation.p() {
        return Err(Error::LengthMismatch {
            expected: train.p(),
            actual: validation.p(),
        });
    }
    let prepared = PreparedData::new(train, config.ties)?;
    let paths: Vec<Result<(Vec<GridPoint>, Option<(f64, bool, ShapeSpec, AdditiveFit)>)>> = grid
        .lambda_shape
        .par_iter()
        .map(|&lt| {
            let mut points = Vec::new();
            let mut best: Option<(f64, bool, ShapeSpec, AdditiveFit)> = None;
            let mut path_min = f64::INFINITY;
            let mut stale = 0;
            run_path(&prepared, base, lt, grid, config, |spec, fit| {
                let pred = fit.predict(validation.columns())?;
                let err = mse(validation.y(), &pred.values);
                points.push(GridPoint {
                    lambda_shape: lt,
                    lambda_s: spec.lambda_s,
                    validation_mse: err,
                    model_size: support_of(fit, SUPPORT_EPS).len(),
                    sweeps: fit.sweeps(),
                    converged: fit.converged(),
                });
                if better(err, fit.converged(), best.as_ref().map(|b| (b.0, b.1))) {
                    best = Some((err, fit.converged(), spec, fit.clone()));
                }
                if err < path_min {
                    path_min = err;
                    stale = 0;
                } else {
                    stale += 1;
                }
                Ok(grid.patience.is_none_or(|k| stale < k))
            })?;
            Ok((points, best))
        })
        .collect();

    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, bool, ShapeSpec, AdditiveFit)> = None;
    for path in paths {
        let (points, path_best) = path?;
        curve.extend(points);
        if let Some(b) = path_best {
            if better(b.0, b.1, best.as_ref().map(|x| (x.0, x.1))) {
                best = Some(b);
            }
        }
    }
    let (err, converged, spec, fit) =
        best.ok_or_else(|| Error::invalid("grid produced no finite validation error"))?;
    Ok(Selection {
        spec,
        fit,
        validation_mse: err,
        curve,
        all_nonconverged: !converged,
    })
}

/// Strictly better: converged beats nonconverged, then smaller error.
fn better(err: f64, converged: bool, current: Option<(f64, bool)>) -> bool {
    if !err.is_finite() {
        return false;
    }
    match current {
        None => true,
        Some((e, c)) => (converged && !c) || (converged == c && err < e),
    }
}

/// Validation folds: a seeded shuffle dealt round-robin, so sizes differ
/// by at most one. Each fold's indices are sorted.
pub fn fold_assignments(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::invalid(format!("need 2 <= K <= n, got K={k}, n={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda_shape: f64,
    pub lambda_s: f64,
    pub mean_mse: f64,
    pub se: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub spec: ShapeSpec,
    pub curve: Vec<CvPoint>,
    /// Refit on all rows at the chosen penalties.
    pub fit: AdditiveFit,
}

/// K-fold cross-validation over the grid, then a refit on all rows. Paths
/// are always fitted in full; `grid.patience` is ignored.
pub fn kfold_cv(
    data: &Dataset,
    k: usize,
    grid: &LambdaGrid,
    base: &ShapeSpec,
    config: &FitConfig,
    seed: u64,
) -> Result<CvResult> {
    let folds = fold_assignments(data.n(), k, seed)?;
    let per_fold: Vec<Result<Vec<f64>>> = folds
        .par_iter()
        .map(|held| {
            let mut in_fold = vec![false; data.n()];
            held.iter().for_each(|&i| in_fold[i] = true);
            let train_rows: Vec<usize> = (0..data.n()).filter(|&i| !in_fold[i]).collect();
            let train = data.subset(&train_rows)?;
            // Held-out rows stay raw so single-row folds (K = n) work.
            let test_cols: Vec<Vec<f64>> = data.columns().iter().map(|c| held.iter().map(|&i| c[i]).collect()).collect();
            let test_y: Vec<f64> = held.iter().map(|&i| data.y()[i]).collect();
            let prepared = PreparedData::new(&train, config.ties)?;
            let mut errs = Vec::with_capacity(grid.len());
            for &lt in &grid.lambda_shape {
                run_path(&prepared, base, lt, grid, config, |_, fit| {
                    let pred = fit.predict(&test_cols)?;
                    errs.push(mse(&test_y, &pred.values));
                    Ok(true)
                })?;
            }
            Ok(errs)
        })
        .collect();
    let per_fold: Vec<Vec<f64>> = per_fold.into_iter().collect::<Result<_>>()?;

    let mut curve = Vec::with_capacity(grid.len());
    let mut pos = 0;
    for &lt in &grid.lambda_shape {
        for &ls in &grid.lambda_s {
            let vals: Vec<f64> = per_fold.iter().map(|f| f[pos]).collect();
            let s = MeanSe::of(&vals);
            curve.push(CvPoint {
                lambda_shape: lt,
                lambda_s: ls,
                mean_mse: s.mean,
                se: s.se,
            });
            pos += 1;
        }
    }
    let mut best: Option<&CvPoint> = None;
    for pt in &curve {
        if pt.mean_mse.is_finite() && best.is_none_or(|b| pt.mean_mse < b.mean_mse) {
            best = Some(pt);
        }
    }
    let best = *best.ok_or_else(|| Error::invalid("cross-validation produced no finite error"))?;
    let spec = base.with_shape_lambda(best.lambda_shape).with_lambda_s(best.lambda_s);
    // Refit along the same path so the chosen point sees the same warm start.
    let prepared = PreparedData::new(data, config.ties)?;
    let path = LambdaGrid::new(
        grid.lambda_s.iter().copied().filter(|&v| v >= best.lambda_s).collect(),
        vec![best.lambda_shape],
    )?;
    let mut last = None;
    run_path(&prepared, base, best.lambda_shape, &path, config, |_, fit| {
        last = Some(fit.clone());
        Ok(true)
    })?;
    Ok(CvResult {
        spec,
        curve,
        fit: last.expect("path has at least one point"),
    })
}

/// Fraction of runs whose support contains none of that run's spurious
/// columns. Each run is (support, spurious indices).
pub fn spurious_elimination_rate(runs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs to score"));
    }
    let clean = runs
        .iter()
        .filter(|(support, spurious)| !support.iter().any(|j| spurious.contains(j)))
        .count();
    Ok(clean as f64 / runs.len() as f64)
}

/// Mean with standard error `sd / sqrt(count)` (sample sd, `count - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(v: &[f64]) -> Self {
        let count = v.len();
        if count == 0 {
            return MeanSe {
                mean: f64::NAN,
                se: f64::NAN,
                count,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let se = if count > 1 {
            datagen::sample_sd(v) / (count as f64).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se, count }
    }
}

/// A named fitting method: a shape mode with its penalty family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    pub base: ShapeSpec,
}

impl Method {
    /// Accepts CLI mode names (`dc`, `convex`, `convex-inc`, `isotonic`,
    /// `liso`, `tv`, `ac`, `none`).
    pub fn parse(name: &str) -> Result<Self> {
        let mode = mode_from_name(name)?;
        let mut base = ShapeSpec::new(mode);
        if name == "liso" {
            // Grid selection fills in lambda_t; a placeholder marks the family.
            base = base.with_lambda_t(f64::MIN_POSITIVE);
        }
        Ok(Method {
            name: name.to_string(),
            base,
        })
    }
}

pub fn mode_from_name(name: &str) -> Result<ShapeMode> {
    Ok(match name {
        "dc" | "sdcam" => ShapeMode::Dc,
        "convex" | "scam" => ShapeMode::Convex,
        "convex-inc" | "convex_increasing" => ShapeMode::ConvexIncreasing,
        "isotonic" | "liso" => ShapeMode::Isotonic,
        "tv" | "flam" => ShapeMode::Tv,
        "ac" | "approx-convex" | "approx_convex" => ShapeMode::ApproxConvex,
        "none" | "unconstrained" => ShapeMode::Unconstrained,
        _ => {
            return Err(Error::Config(format!(
                "unknown mode '{name}'; expected dc|convex|convex-inc|isotonic|liso|tv|ac|none"
            )))
        }
    })
}

/// Replicated train/validation/test study for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub snr: f64,
    pub replicates: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub fit: FitConfig,
    pub grid: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub method: String,
    pub spec: ShapeSpec,
    pub metrics: MetricsReport,
    pub all_nonconverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub method: String,
    pub replicates: usize,
    /// Replicates with an undefined precision are left out.
    pub precision: MeanSe,
    pub recall: MeanSe,
    pub model_size: MeanSe,
    pub test_mse: MeanSe,
}

/// Seed of replicate `r`: independent streams from one base seed.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(r as u64)
}

pub fn run_study(cfg: &StudyConfig) -> Result<(Vec<ReplicateResult>, Vec<StudySummary>)> {
    if cfg.replicates == 0 || cfg.methods.is_empty() {
        return Err(Error::Config("a study needs at least one replicate and one method".into()));
    }
    cfg.grid.validate()?;
    let per_rep: Vec<Result<Vec<ReplicateResult>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let sim = SimConfig {
                n: cfg.n,
                p: cfg.p,
                snr: cfg.snr,
                seed: replicate_seed(cfg.seed, r),
            };
            let [train, val, test] = datagen::generate_splits(&cfg.scenario, &sim)?;
            cfg.methods
                .iter()
                .map(|m| {
                    let grid = LambdaGrid::default_for(&train.data, &m.base, &cfg.fit, &cfg.grid)?;
                    let sel = grid_select(&train.data, &val.data, &grid, &m.base, &cfg.fit)?;
                    Ok(ReplicateResult {
                        replicate: r,
                        method: m.name.clone(),
                        spec: sel.spec,
                        metrics: metrics(&sel.fit, &train.support, &test.data)?,
                        all_nonconverged: sel.all_nonconverged,
                    })
                })
                .collect()
        })
        .collect();
    let results: Vec<ReplicateResult> = per_rep
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let summaries = summarize(&results, &cfg.methods);
    Ok((results, summaries))
}

pub fn summarize(results: &[ReplicateResult], methods: &[Method]) -> Vec<StudySummary> {
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&ReplicateResult> = results.iter().filter(|r| r.method == m.name).collect();
            let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> MeanSe {
                MeanSe::of(&rows.iter().filter_map(|r| f(&r.metrics)).collect::<Vec<_>>())
            };
            StudySummary {
                method: m.name.clone(),
                replicates: rows.len(),
                precision: col(&|x| x.precision),
                recall: col(&|x| Some(x.recall)),
                model_size: col(&|x| Some(x.model_size as f64)),
                test_mse: col(&|x| Some(x.test_mse)),
            }
        })
        .collect()
}

/// Settings of the real-data protocol: rescale, add spurious columns,
/// select by K-fold CV, refit on all rows; repeated over random partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub p_total: usize,
    pub folds: usize,
    pub partitions: usize,
    pub seed: u64,
    pub grid: GridSpec,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            p_total: 50,
            folds: 10,
            partitions: 20,
            seed: 0,
            grid: GridSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub partition: usize,
    pub spec: ShapeSpec,
    pub support: Vec<usize>,
    pub spurious: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub runs: Vec<ProtocolRun>,
    pub elimination_rate: f64,
    pub model_size: MeanSe,
}

pub fn real_data_protocol(
    data: &Dataset,
    base: &ShapeSpec,
    config: &FitConfig,
    protocol: &ProtocolConfig,
) -> Result<ProtocolResult> {
    if protocol.partitions == 0 {
        return Err(Error::Config("partitions must be at least 1".into()));
    }
    let p = data.p();
    let runs: Vec<Result<ProtocolRun>> = (0..protocol.partitions)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(protocol.seed, r);
            let augmented = datagen::augment_spurious(data, protocol.p_total, seed)?;
            let grid = LambdaGrid::default_for(&augmented, base, config, &protocol.grid)?;
            let cv = kfold_cv(&augmented, protocol.folds, &grid, base, config, seed)?;
            Ok(ProtocolRun {
                partition: r,
                spec: cv.spec,
                support: support_of(&cv.fit, SUPPORT_EPS),
                spurious: (p..protocol.p_total).collect(),
            })
        })
        .collect();
    let runs: Vec<ProtocolRun> = runs.into_iter().collect::<Result<_>>()?;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> =
        runs.iter().map(|r| (r.support.clone(), r.spurious.clone())).collect();
    let sizes: Vec<f64> = runs.iter().map(|r| r.support.len() as f64).collect();
    Ok(ProtocolResult {
        elimination_rate: spurious_elimination_rate(&pairs)?,
        model_size: MeanSe::of(&sizes),
        runs,
    })
}
