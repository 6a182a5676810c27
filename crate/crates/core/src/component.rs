//! Per-component subproblem: given a partial residual, find the shaped,
//! centered and group-thresholded component fit.
//!
//! Shape penalties on slopes (DC, approximate convexity, convexity cones) are
//! handled in the slope parameterization `z = A (s, w)` where `s` is the
//! value at the smallest covariate and `w` the slopes between consecutive
//! knots. `A` is never materialized; products with it and its transpose are
//! prefix/suffix sums.
//!
//! Tied covariate values are grouped: the fit is constant on a tie group, so
//! the subproblem lives on the `m` unique values with group sizes as weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prox::{self, chain_prox, pav_weighted_in_place, ChainWorkspace};

/// How repeated covariate values are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieHandling {
    /// Tied observations share one fitted value; gaps are between unique values.
    #[default]
    Group,
    /// Ties are broken by a deterministic offset of order `1e-9 * range`.
    Jitter,
}

/// A covariate column sorted once, with its permutation and knot gaps.
#[derive(Debug, Clone)]
pub struct SortedCovariate {
    perm: Vec<usize>,
    sorted_x: Vec<f64>,
    knots: Vec<f64>,
    group_end: Vec<usize>,
    counts: Vec<f64>,
    gaps: Vec<f64>,
}

impl SortedCovariate {
    pub fn new(x: &[f64], ties: TieHandling) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("covariate column is empty"));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite covariate value at row {i}")));
        }
        let mut perm: Vec<usize> = (0..x.len()).collect();
        perm.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
        let mut sorted_x: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        if ties == TieHandling::Jitter {
            jitter_ties(&mut sorted_x);
        }

        let mut knots = Vec::new();
        let mut group_end = Vec::new();
        for (k, &v) in sorted_x.iter().enumerate() {
            if knots.last().is_some_and(|&last| v <= last) {
                *group_end.last_mut().unwrap() = k + 1;
            } else {
                knots.push(v);
                group_end.push(k + 1);
            }
        }
        let mut counts = Vec::with_capacity(knots.len());
        let mut start = 0;
        for &end in &group_end {
            counts.push((end - start) as f64);
            start = end;
        }
        let gaps = knots.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(SortedCovariate {
            perm,
            sorted_x,
            knots,
            group_end,
            counts,
            gaps,
        })
    }

    /// `perm[k]` is the original row of the k-th smallest value.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn sorted_x(&self) -> &[f64] {
        &self.sorted_x
    }

    /// Unique sorted covariate values.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Gaps between consecutive knots; all strictly positive.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Number of observations sharing each knot.
    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    pub(crate) fn has_ties(&self) -> bool {
        self.knots.len() < self.perm.len()
    }

    pub(crate) fn weights(&self) -> Option<&[f64]> {
        self.has_ties().then_some(self.counts.as_slice())
    }

    /// Per-knot means of `r` (given in original row order).
    pub fn group_means(&self, r: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.knots.len());
        let mut start = 0;
        for &end in &self.group_end {
            let sum: f64 = self.perm[start..end].iter().map(|&i| r[i]).sum();
            out.push(sum / (end - start) as f64);
            start = end;
        }
        out
    }

    /// Writes per-knot values back to original row order.
    pub fn scatter(&self, values: &[f64], out: &mut [f64]) {
        let mut start = 0;
        for (&end, &v) in self.group_end.iter().zip(values) {
            for &i in &self.perm[start..end] {
                out[i] = v;
            }
            start = end;
        }
    }
}

fn jitter_ties(sorted: &mut [f64]) {
    let n = sorted.len();
    let range = sorted[n - 1] - sorted[0];
    let scale = if range > 0.0 { range } else { 1.0 };
    let min_gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let spread = (1e-9 * scale).min(0.5 * min_gap);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted[end] == sorted[start] {
            end += 1;
        }
        let size = end - start;
        if size > 1 {
            let step = spread / size as f64;
            for (t, v) in sorted[start..end].iter_mut().enumerate() {
                *v += t as f64 * step;
            }
        }
        start = end;
    }
}

/// Intercept and slopes of a fit in the change-of-variables form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeParam {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl SlopeParam {
    pub fn zeros(num_knots: usize) -> Self {
        SlopeParam {
            intercept: 0.0,
            slopes: vec![0.0; num_knots.saturating_sub(1)],
        }
    }

    /// Inverse of [`apply_a`]: value at the first knot plus divided differences.
    pub fn from_values(z_sorted: &[f64], gaps: &[f64]) -> Result<Self> {
        check_lengths(z_sorted.len(), gaps)?;
        Ok(SlopeParam {
            intercept: z_sorted[0],
            slopes: z_sorted
                .windows(2)
                .zip(gaps)
                .map(|(w, g)| (w[1] - w[0]) / g)
                .collect(),
        })
    }
}

fn check_lengths(n: usize, gaps: &[f64]) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("empty fit vector"));
    }
    if gaps.len() + 1 != n {
        return Err(Error::LengthMismatch {
            expected: n.saturating_sub(1),
            actual: gaps.len(),
        });
    }
    Ok(())
}

fn check_gaps(gaps: &[f64]) -> Result<()> {
    match gaps.iter().position(|&g| !(g > 0.0)) {
        Some(i) => Err(Error::invalid(format!("gap {i} is not positive ({})", gaps[i]))),
        None => Ok(()),
    }
}

/// `z_1 = s`, `z_i = s + sum_{k<i} w_k * gaps_k`.
pub fn apply_a(param: &SlopeParam, gaps: &[f64]) -> Result<Vec<f64>> {
    if param.slopes.len() != gaps.len() {
        return Err(Error::LengthMismatch {
            expected: gaps.len(),
            actual: param.slopes.len(),
        });
    }
    let mut out = vec![0.0; gaps.len() + 1];
    apply_a_into(param.intercept, &param.slopes, gaps, &mut out);
    Ok(out)
}

/// Adjoint of [`apply_a`]: `(sum v, gaps_k * sum_{i>k} v_i)`.
pub fn apply_a_transpose(v: &[f64], gaps: &[f64]) -> Result<SlopeParam> {
    check_lengths(v.len(), gaps)?;
    let mut slopes = vec![0.0; gaps.len()];
    let intercept = apply_at_into(v, gaps, &mut slopes);
    Ok(SlopeParam { intercept, slopes })
}

fn apply_a_into(s: f64, w: &[f64], gaps: &[f64], out: &mut [f64]) {
    let mut acc = s;
    out[0] = acc;
    for k in 0..w.len() {
        acc += w[k] * gaps[k];
        out[k + 1] = acc;
    }
}

fn apply_at_into(v: &[f64], gaps: &[f64], out_w: &mut [f64]) -> f64 {
    let mut tail = 0.0;
    for k in (0..gaps.len()).rev() {
        tail += v[k + 1];
        out_w[k] = gaps[k] * tail;
    }
    tail + v[0]
}

fn slopes_of<'a>(z: &'a [f64], gaps: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    z.windows(2).zip(gaps).map(|(w, g)| (w[1] - w[0]) / g)
}

/// Total variation of the slope sequence (zero exactly on affine fits).
pub fn dc_seminorm(z_sorted: &[f64], gaps: &[f64]) -> Result<f64> {
    check_lengths(z_sorted.len(), gaps)?;
    check_gaps(gaps)?;
    let slopes: Vec<f64> = slopes_of(z_sorted, gaps).collect();
    Ok(prox::total_variation(&slopes))
}

/// Sum of slope decreases (zero exactly on convex fits).
pub fn ac_seminorm(z_sorted: &[f64], gaps: &[f64]) -> Result<f64> {
    check_lengths(z_sorted.len(), gaps)?;
    check_gaps(gaps)?;
    let slopes: Vec<f64> = slopes_of(z_sorted, gaps).collect();
    Ok(prox::downward_variation(&slopes))
}

/// Largest eigenvalue of `A^T A`, by power iteration.
pub fn operator_norm_sq(gaps: &[f64]) -> f64 {
    weighted_operator_norm_sq(gaps, None)
}

/// Largest eigenvalue of `A^T C A` for diagonal weights `C`.
pub(crate) fn weighted_operator_norm_sq(gaps: &[f64], weights: Option<&[f64]>) -> f64 {
    let m = gaps.len() + 1;
    if m == 1 {
        return weights.map_or(1.0, |w| w[0]);
    }
    // Start from a vector with no sign changes so it overlaps the Perron
    // direction (A has nonnegative entries).
    let mut p = vec![1.0; m];
    let mut z = vec![0.0; m];
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        p.iter_mut().for_each(|v| *v /= norm);
        apply_a_into(p[0], &p[1..], gaps, &mut z);
        if let Some(w) = weights {
            z.iter_mut().zip(w).for_each(|(v, c)| *v *= c);
        }
        let (head, tail) = p.split_at_mut(1);
        head[0] = apply_at_into(&z, gaps, tail);
        let next = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let done = (next - estimate).abs() <= 1e-10 * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

/// Shape family of a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeMode {
    /// Only centering and group sparsity.
    Unconstrained,
    /// Nondecreasing fit; with `lambda_t > 0` the total variation is also penalized.
    Isotonic,
    /// Slopes nondecreasing.
    Convex,
    /// Slopes nonnegative and nondecreasing.
    ConvexIncreasing,
    /// Difference of convex, penalized by the slope total variation.
    Dc,
    /// Penalized by the sum of slope decreases.
    ApproxConvex,
    /// Penalized by the total variation of the fit (piecewise constant fits).
    Tv,
}

impl ShapeMode {
    pub const ALL: [ShapeMode; 7] = [
        ShapeMode::Unconstrained,
        ShapeMode::Isotonic,
        ShapeMode::Convex,
        ShapeMode::ConvexIncreasing,
        ShapeMode::Dc,
        ShapeMode::ApproxConvex,
        ShapeMode::Tv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeMode::Unconstrained => "unconstrained",
            ShapeMode::Isotonic => "isotonic",
            ShapeMode::Convex => "convex",
            ShapeMode::ConvexIncreasing => "convex_increasing",
            ShapeMode::Dc => "dc",
            ShapeMode::ApproxConvex => "approx_convex",
            ShapeMode::Tv => "tv",
        }
    }

    /// Modes solved by accelerated proximal gradient over slopes.
    pub fn uses_slopes(self) -> bool {
        matches!(
            self,
            ShapeMode::Convex | ShapeMode::ConvexIncreasing | ShapeMode::Dc | ShapeMode::ApproxConvex
        )
    }

    /// Which of `lambda_d` / `lambda_t` the mode reads, if any.
    pub fn shape_penalty(self) -> Option<ShapePenalty> {
        match self {
            ShapeMode::Dc | ShapeMode::ApproxConvex => Some(ShapePenalty::Curvature),
            ShapeMode::Tv | ShapeMode::Isotonic => Some(ShapePenalty::Variation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapePenalty {
    /// `lambda_d`
    Curvature,
    /// `lambda_t`
    Variation,
}

/// Shape mode plus penalty weights for one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub mode: ShapeMode,
    #[serde(default)]
    pub lambda_d: f64,
    #[serde(default)]
    pub lambda_t: f64,
    #[serde(default)]
    pub lambda_s: f64,
}

impl ShapeSpec {
    pub fn new(mode: ShapeMode) -> Self {
        ShapeSpec {
            mode,
            lambda_d: 0.0,
            lambda_t: 0.0,
            lambda_s: 0.0,
        }
    }

    pub fn dc(lambda_d: f64, lambda_s: f64) -> Self {
        ShapeSpec {
            lambda_d,
            lambda_s,
            ..ShapeSpec::new(ShapeMode::Dc)
        }
    }

    pub fn tv(lambda_t: f64, lambda_s: f64) -> Self {
        ShapeSpec {
            lambda_t,
            lambda_s,
            ..ShapeSpec::new(ShapeMode::Tv)
        }
    }

    pub fn with_lambda_d(mut self, v: f64) -> Self {
        self.lambda_d = v;
        self
    }

    pub fn with_lambda_t(mut self, v: f64) -> Self {
        self.lambda_t = v;
        self
    }

    pub fn with_lambda_s(mut self, v: f64) -> Self {
        self.lambda_s = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_d", self.lambda_d),
            ("lambda_t", self.lambda_t),
            ("lambda_s", self.lambda_s),
        ] {
            if !(v >= 0.0) || v.is_nan() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The shape penalty weight this mode actually uses (0 for pure constraints).
    pub fn shape_lambda(&self) -> f64 {
        match self.mode.shape_penalty() {
            Some(ShapePenalty::Curvature) => self.lambda_d,
            Some(ShapePenalty::Variation) => self.lambda_t,
            None => 0.0,
        }
    }

    /// All weights multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ShapeSpec {
            mode: self.mode,
            lambda_d: self.lambda_d * factor,
            lambda_t: self.lambda_t * factor,
            lambda_s: self.lambda_s * factor,
        }
    }

    /// Shape penalty of a sorted per-knot fit (no group-sparsity term).
    pub fn shape_penalty_value(&self, values: &[f64], gaps: &[f64]) -> f64 {
        let lam = self.shape_lambda();
        if lam == 0.0 || values.len() < 2 {
            return 0.0;
        }
        let slopes = || slopes_of(values, gaps);
        let value = match self.mode {
            ShapeMode::Dc => {
                let s: Vec<f64> = slopes().collect();
                prox::total_variation(&s)
            }
            ShapeMode::ApproxConvex => {
                let s: Vec<f64> = slopes().collect();
                prox::downward_variation(&s)
            }
            ShapeMode::Tv | ShapeMode::Isotonic => prox::total_variation(values),
            _ => 0.0,
        };
        lam * value
    }

    /// Largest violation of the mode's hard constraints (0 when feasible).
    pub fn violation(&self, values: &[f64], gaps: &[f64]) -> f64 {
        match self.mode {
            ShapeMode::Isotonic => prox::downward_variation_max(values),
            ShapeMode::Convex | ShapeMode::ConvexIncreasing => {
                let s: Vec<f64> = slopes_of(values, gaps).collect();
                let mut worst = prox::downward_variation_max(&s);
                if self.mode == ShapeMode::ConvexIncreasing {
                    if let Some(&first) = s.first() {
                        worst = worst.max(-first);
                    }
                }
                worst.max(0.0)
            }
            _ => 0.0,
        }
    }
}

/// Stopping controls for the inner accelerated proximal gradient loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the objective value of every accepted iterate.
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            tol: 1e-8,
            max_iter: 2000,
            record_trace: false,
        }
    }
}

impl InnerOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        InnerOptions {
            tol,
            max_iter,
            record_trace: false,
        }
    }
}

/// Result of an inner prox solve, in sorted per-knot order.
#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl InnerOutcome {
    fn exact(z: Vec<f64>) -> Self {
        InnerOutcome {
            z,
            iterations: 0,
            converged: true,
            objective_trace: Vec::new(),
        }
    }
}

/// Shape-only prox of a sorted residual (no centering or group shrinkage):
/// minimizes `0.5 * ||z - r||^2 + penalty/constraint` for the given mode.
pub fn inner_prox_solve(
    r_sorted: &[f64],
    gaps: &[f64],
    spec: &ShapeSpec,
    tol: f64,
    max_iter: usize,
) -> Result<InnerOutcome> {
    inner_prox_solve_with(r_sorted, gaps, spec, InnerOptions::new(tol, max_iter))
}

/// [`inner_prox_solve`] with full options (e.g. objective tracing).
pub fn inner_prox_solve_with(
    r_sorted: &[f64],
    gaps: &[f64],
    spec: &ShapeSpec,
    opts: InnerOptions,
) -> Result<InnerOutcome> {
    check_lengths(r_sorted.len(), gaps)?;
    check_gaps(gaps)?;
    spec.validate()?;
    let problem = InnerProblem {
        target: r_sorted,
        weights: None,
        gaps,
    };
    let metric = Metric::for_problem(gaps, None);
    // Group shrinkage is not part of this prox; without it the zero-block
    // screen would stop early at a point that is not the shape optimum.
    let shape_only = spec.with_lambda_s(0.0);
    Ok(problem.solve(&shape_only, opts, &metric, None))
}

/// Iterations between duality-gap evaluations in the DC solver.
const GAP_CHECK_EVERY: usize = 10;

/// Safety margin over the power-iteration estimate, which approaches the
/// true top eigenvalue from below.
fn step_denominator(norm_sq: f64) -> f64 {
    norm_sq * (1.0 + 1e-6)
}

/// Diagonal majorizer `M >= A^T C A` of the loss curvature in `(s, w)`; the
/// proximal gradient step is `M^{-1}` times the gradient.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Metric {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl Metric {
    /// `||A||^2` on every coordinate: the plain `1 / L` step.
    pub fn uniform(gaps: &[f64], weights: Option<&[f64]>) -> Self {
        let l = step_denominator(weighted_operator_norm_sq(gaps, weights));
        Metric {
            intercept: l,
            slopes: vec![l; gaps.len()],
        }
    }

    /// Row sums of `A^T C A`. The matrix is entrywise nonnegative, so the
    /// difference is diagonally dominant and hence positive semidefinite.
    pub fn row_sums(gaps: &[f64], weights: Option<&[f64]>) -> Self {
        let m = gaps.len() + 1;
        let ones = vec![1.0; m - 1];
        let mut a1 = vec![0.0; m];
        apply_a_into(1.0, &ones, gaps, &mut a1);
        if let Some(w) = weights {
            a1.iter_mut().zip(w).for_each(|(v, c)| *v *= c);
        }
        let mut slopes = vec![0.0; m - 1];
        let intercept = apply_at_into(&a1, gaps, &mut slopes);
        let pad = 1.0 + 1e-12;
        Metric {
            intercept: intercept * pad,
            slopes: slopes.into_iter().map(|v| v * pad).collect(),
        }
    }

    pub fn for_problem(gaps: &[f64], weights: Option<&[f64]>) -> Self {
        Self::row_sums(gaps, weights)
    }
}

/// Weighted least-squares problem on knots: `0.5 * sum c_i (z_i - target_i)^2`.
pub(crate) struct InnerProblem<'a> {
    pub target: &'a [f64],
    pub weights: Option<&'a [f64]>,
    pub gaps: &'a [f64],
}

impl InnerProblem<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub fn solve(
        &self,
        spec: &ShapeSpec,
        opts: InnerOptions,
        metric: &Metric,
        warm: Option<&SlopeParam>,
    ) -> InnerOutcome {
        let m = self.target.len();
        if m == 1 {
            return InnerOutcome::exact(self.target.to_vec());
        }
        match spec.mode {
            ShapeMode::Unconstrained => InnerOutcome::exact(self.target.to_vec()),
            ShapeMode::Tv => InnerOutcome::exact(chain_prox(
                self.target,
                self.weights,
                spec.lambda_t,
                spec.lambda_t,
            )),
            ShapeMode::Isotonic => {
                // On the isotonic cone the variation is last - first, a linear
                // term that folds into the two end targets.
                let mut v = self.target.to_vec();
                v[0] += spec.lambda_t / self.weight(0);
                v[m - 1] -= spec.lambda_t / self.weight(m - 1);
                pav_weighted_in_place(&mut v, self.weights);
                InnerOutcome::exact(v)
            }
            ShapeMode::ConvexIncreasing if m == 2 => {
                let mut v = self.target.to_vec();
                pav_weighted_in_place(&mut v, self.weights);
                InnerOutcome::exact(v)
            }
            _ if m == 2 => InnerOutcome::exact(self.target.to_vec()),
            ShapeMode::Dc | ShapeMode::ApproxConvex if spec.lambda_d == 0.0 => {
                InnerOutcome::exact(self.target.to_vec())
            }
            ShapeMode::Dc if spec.lambda_d >= self.dc_lambda_max() => {
                InnerOutcome::exact(self.affine_fit().1)
            }
            _ => self.fista(spec, opts, metric, warm),
        }
    }

    /// Weighted least-squares line through the targets, as (param, values).
    fn affine_fit(&self) -> (SlopeParam, Vec<f64>) {
        let m = self.target.len();
        let mut x = vec![0.0; m];
        for k in 1..m {
            x[k] = x[k - 1] + self.gaps[k - 1];
        }
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for i in 0..m {
            let c = self.weight(i);
            sw += c;
            sx += c * x[i];
            sy += c * self.target[i];
        }
        let (mx, my) = (sx / sw, sy / sw);
        let (mut sxx, mut sxy) = (0.0, 0.0);
        for i in 0..m {
            let c = self.weight(i);
            sxx += c * (x[i] - mx) * (x[i] - mx);
            sxy += c * (x[i] - mx) * (self.target[i] - my);
        }
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let values = x.iter().map(|xi| intercept + slope * xi).collect();
        let param = SlopeParam {
            intercept,
            slopes: vec![slope; m - 1],
        };
        (param, values)
    }

    /// Smallest `lambda_d` at which the DC prox returns the affine fit.
    ///
    /// At constant slopes the optimality condition reduces to the partial
    /// sums of the slope gradient lying in `[-lambda, lambda]`.
    pub fn dc_lambda_max(&self) -> f64 {
        let m = self.target.len();
        if m < 3 {
            return 0.0;
        }
        let (_, values) = self.affine_fit();
        let resid: Vec<f64> = (0..m)
            .map(|i| self.weight(i) * (values[i] - self.target[i]))
            .collect();
        let mut grad = vec![0.0; m - 1];
        apply_at_into(&resid, self.gaps, &mut grad);
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for g in &grad[..m - 2] {
            acc += g;
            worst = worst.max(acc.abs());
        }
        worst
    }

    /// Upper bound on the centered norm of the DC prox at `lambda`.
    ///
    /// The prox keeps the affine part `a` of the target and shrinks the
    /// remainder `e`; since `e` lies in `lambda_max` times the unit dual ball,
    /// the shrunk remainder has norm at most `(1 - lambda / lambda_max)_+ ||e||`.
    pub fn dc_centered_norm_bound(&self, lambda: f64) -> Option<f64> {
        let lambda_max = self.dc_lambda_max();
        if !(lambda_max > 0.0) {
            return None;
        }
        let (_, affine) = self.affine_fit();
        let mean = prox::weighted_mean(&affine, self.weights);
        let (mut affine_sq, mut rest_sq) = (0.0, 0.0);
        for (i, (a, t)) in affine.iter().zip(self.target).enumerate() {
            let c = self.weight(i);
            affine_sq += c * (a - mean) * (a - mean);
            rest_sq += c * (t - a) * (t - a);
        }
        let shrink = (1.0 - lambda / lambda_max).max(0.0);
        Some((affine_sq + shrink * shrink * rest_sq).sqrt())
    }

    fn centered_norm(&self, z: &[f64]) -> f64 {
        let mean = prox::weighted_mean(z, self.weights);
        z.iter()
            .enumerate()
            .map(|(i, v)| self.weight(i) * (v - mean) * (v - mean))
            .sum::<f64>()
            .sqrt()
    }

    /// Duality gap of the DC prox at fitted values `z` with primal value `f_z`.
    ///
    /// The dual point is built from the weighted residual projected
    /// orthogonally to constants and knot positions. It is made feasible
    /// either by scaling or by clipping the partial sums of its slope image
    /// to `[-lambda, lambda]`; the better of the two is used.
    pub fn dc_duality_gap(&self, lambda: f64, z: &[f64], f_z: f64) -> f64 {
        let m = self.target.len();
        let mut x = vec![0.0; m];
        for k in 1..m {
            x[k] = x[k - 1] + self.gaps[k - 1];
        }
        let mut nu: Vec<f64> = (0..m).map(|i| self.weight(i) * (z[i] - self.target[i])).collect();
        let (mut sc, mut scx, mut scxx, mut sr, mut srx) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..m {
            let c = self.weight(i);
            sc += c;
            scx += c * x[i];
            scxx += c * x[i] * x[i];
            sr += nu[i];
            srx += nu[i] * x[i];
        }
        let det = sc * scxx - scx * scx;
        if !(det > 0.0) {
            return f64::INFINITY;
        }
        let alpha = (scxx * sr - scx * srx) / det;
        let beta = (sc * srx - scx * sr) / det;
        for i in 0..m {
            nu[i] -= self.weight(i) * (alpha + beta * x[i]);
        }
        let mut q = vec![0.0; m - 1];
        apply_at_into(&nu, self.gaps, &mut q);
        let dual_value = |nu: &[f64], cap: f64| {
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..m {
                a += nu[i] * nu[i] / self.weight(i);
                b += nu[i] * self.target[i];
            }
            let theta = if a > 0.0 { (-b / a).clamp(0.0, cap) } else { 0.0 };
            -0.5 * theta * theta * a - theta * b
        };
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for g in &q[..m - 2] {
            acc += g;
            worst = worst.max(acc.abs());
        }
        let scaled = dual_value(&nu, if worst > lambda { lambda / worst } else { 1.0 });
        if worst <= lambda {
            return (f_z - scaled).max(0.0);
        }
        // Clip partial sums; the last one is zero after the projection.
        let mut acc = 0.0;
        let mut prev = 0.0;
        for k in 0..m - 1 {
            acc += q[k];
            let clipped = if k == m - 2 { 0.0 } else { acc.clamp(-lambda, lambda) };
            q[k] = clipped - prev;
            prev = clipped;
        }
        // Invert the slope image: tail sums of nu are q / gaps.
        let mut next_tail = 0.0;
        for k in (0..m - 1).rev() {
            let tail = q[k] / self.gaps[k];
            nu[k + 1] = tail - next_tail;
            next_tail = tail;
        }
        nu[0] = -next_tail;
        let clipped = dual_value(&nu, 1.0);
        (f_z - scaled.max(clipped)).max(0.0)
    }

    fn slope_penalty(&self, spec: &ShapeSpec, w: &[f64]) -> f64 {
        match spec.mode {
            ShapeMode::Dc => spec.lambda_d * prox::total_variation(w),
            ShapeMode::ApproxConvex => spec.lambda_d * prox::downward_variation(w),
            _ => 0.0,
        }
    }

    /// Prox of the slope penalty in the metric `M`.
    fn slope_prox(&self, spec: &ShapeSpec, metric: &Metric, w: &mut [f64], ws: &mut ChainWorkspace) {
        let c = Some(metric.slopes.as_slice());
        match spec.mode {
            ShapeMode::Dc => ws.solve_in_place(w, c, spec.lambda_d, spec.lambda_d),
            ShapeMode::ApproxConvex => ws.solve_in_place(w, c, spec.lambda_d, 0.0),
            ShapeMode::Convex => pav_weighted_in_place(w, c),
            ShapeMode::ConvexIncreasing => {
                pav_weighted_in_place(w, c);
                w.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            _ => {}
        }
    }

    fn loss(&self, z: &[f64]) -> f64 {
        0.5 * z
            .iter()
            .zip(self.target)
            .enumerate()
            .map(|(i, (a, b))| self.weight(i) * (a - b) * (a - b))
            .sum::<f64>()
    }

    /// The better of two starting points: the affine fit (right for heavy
    /// penalties) and the target itself (right for light ones), each passed
    /// through the slope prox.
    fn cold_start(&self, spec: &ShapeSpec, metric: &Metric, ws: &mut ChainWorkspace) -> SlopeParam {
        let mut ax = vec![0.0; self.target.len()];
        let mut value = |p: &SlopeParam| {
            apply_a_into(p.intercept, &p.slopes, self.gaps, &mut ax);
            self.loss(&ax) + self.slope_penalty(spec, &p.slopes)
        };
        let (mut affine, _) = self.affine_fit();
        self.slope_prox(spec, metric, &mut affine.slopes, ws);
        let Ok(mut raw) = SlopeParam::from_values(self.target, self.gaps) else {
            return affine;
        };
        self.slope_prox(spec, metric, &mut raw.slopes, ws);
        if value(&raw) < value(&affine) {
            raw
        } else {
            affine
        }
    }

    /// Monotone accelerated proximal gradient with function-value restarts.
    fn fista(
        &self,
        spec: &ShapeSpec,
        opts: InnerOptions,
        metric: &Metric,
        warm: Option<&SlopeParam>,
    ) -> InnerOutcome {
        let m = self.target.len();
        let gaps = self.gaps;
        let mut ws = ChainWorkspace::default();
        let mut x = match warm {
            Some(p) if p.slopes.len() == m - 1 && p.intercept.is_finite() => p.clone(),
            _ => self.cold_start(spec, metric, &mut ws),
        };
        // Warm starts may come from a different penalty; make them feasible.
        if !matches!(spec.mode, ShapeMode::Dc | ShapeMode::ApproxConvex) {
            self.slope_prox(spec, metric, &mut x.slopes, &mut ws);
        }

        let mut ax = vec![0.0; m];
        apply_a_into(x.intercept, &x.slopes, gaps, &mut ax);
        let mut f_x = self.loss(&ax) + self.slope_penalty(spec, &x.slopes);

        let mut y = x.clone();
        let mut ay = ax.clone();
        let mut t = 1.0_f64;
        let mut momentum = false;

        let mut resid = vec![0.0; m];
        let mut grad_w = vec![0.0; m - 1];
        let mut next = SlopeParam::zeros(m);
        let mut a_next = vec![0.0; m];
        let mut trace = Vec::new();
        if opts.record_trace {
            trace.push(f_x);
        }

        let certify = spec.mode == ShapeMode::Dc && spec.lambda_d > 0.0;
        let target_norm_sq = self.loss(&vec![0.0; m]) * 2.0;
        let floor = 1e-30 + 1e-16 * target_norm_sq;
        let mut converged = false;
        let mut iterations = 0;
        if certify && spec.lambda_s > 0.0 {
            let gap = self.dc_duality_gap(spec.lambda_d, &ax, f_x);
            if self.centered_norm(&ax) + (2.0 * gap).sqrt() <= spec.lambda_s {
                return InnerOutcome {
                    z: ax,
                    iterations,
                    converged: true,
                    objective_trace: trace,
                };
            }
        }

        while iterations < opts.max_iter {
            iterations += 1;
            for i in 0..m {
                resid[i] = self.weight(i) * (ay[i] - self.target[i]);
            }
            let grad_s = apply_at_into(&resid, gaps, &mut grad_w);
            next.intercept = y.intercept - grad_s / metric.intercept;
            for k in 0..m - 1 {
                next.slopes[k] = y.slopes[k] - grad_w[k] / metric.slopes[k];
            }
            self.slope_prox(spec, metric, &mut next.slopes, &mut ws);
            apply_a_into(next.intercept, &next.slopes, gaps, &mut a_next);
            let f_next = self.loss(&a_next) + self.slope_penalty(spec, &next.slopes);

            if f_next > f_x {
                if momentum {
                    // Restart from the last accepted point without momentum.
                    y.clone_from(&x);
                    ay.copy_from_slice(&ax);
                    t = 1.0;
                    momentum = false;
                    continue;
                }
                // A plain prox-gradient step failed to descend: roundoff floor.
                converged = true;
                break;
            }

            let decrease = f_x - f_next;

            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for i in 0..m {
                ay[i] = a_next[i] + beta * (a_next[i] - ax[i]);
            }
            y.intercept = next.intercept + beta * (next.intercept - x.intercept);
            for k in 0..m - 1 {
                y.slopes[k] = next.slopes[k] + beta * (next.slopes[k] - x.slopes[k]);
            }
            std::mem::swap(&mut x, &mut next);
            std::mem::swap(&mut ax, &mut a_next);
            f_x = f_next;
            t = t_next;
            momentum = true;
            if opts.record_trace {
                trace.push(f_x);
            }

            if decrease <= opts.tol * f_x.abs().max(floor) {
                converged = true;
                break;
            }
            if certify && (iterations % GAP_CHECK_EVERY == 0 || iterations.is_power_of_two()) {
                let gap = self.dc_duality_gap(spec.lambda_d, &ax, f_x);
                if gap <= opts.tol * f_x.abs().max(floor) {
                    converged = true;
                    break;
                }
                // Strong convexity in z: ||z - z*|| <= sqrt(2 gap).
                let centered = self.centered_norm(&ax);
                if centered + (2.0 * gap).sqrt() <= spec.lambda_s {
                    converged = true;
                    break;
                }
            }
        }

        InnerOutcome {
            z: ax,
            iterations,
            converged,
            objective_trace: trace,
        }
    }
}

/// Component fit produced by [`solve_subproblem`].
#[derive(Debug, Clone)]
pub struct SubproblemOutcome {
    /// Fit in original row order.
    pub z: Vec<f64>,
    /// Per-knot fitted values (sorted).
    pub values: Vec<f64>,
    /// Norm of the centered shape fit before group shrinkage. When the
    /// block is screened out without solving, this is the centered target
    /// norm, an upper bound.
    pub pre_shrink_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full block update: shape prox, then centering, then group soft
/// threshold, mapped back to original row order.
pub fn solve_subproblem(
    r: &[f64],
    cov: &SortedCovariate,
    spec: &ShapeSpec,
    tol: f64,
    max_iter: usize,
) -> Result<SubproblemOutcome> {
    if r.len() != cov.len() {
        return Err(Error::LengthMismatch {
            expected: cov.len(),
            actual: r.len(),
        });
    }
    spec.validate()?;
    let mut solver = ComponentSolver::new(cov);
    Ok(solver.solve(r, spec, InnerOptions::new(tol, max_iter)))
}

/// Per-component solver state reused across backfitting sweeps: the
/// cached metric and the warm-start slope parameters.
#[derive(Debug, Clone)]
pub(crate) struct ComponentSolver<'a> {
    pub cov: &'a SortedCovariate,
    pub metric: Option<Metric>,
    pub warm: Option<SlopeParam>,
}

impl<'a> ComponentSolver<'a> {
    pub fn new(cov: &'a SortedCovariate) -> Self {
        ComponentSolver {
            cov,
            metric: None,
            warm: None,
        }
    }

    fn metric(&mut self) -> Metric {
        self.metric
            .get_or_insert_with(|| Metric::for_problem(self.cov.gaps(), self.cov.weights()))
            .clone()
    }

    pub fn solve(&mut self, r: &[f64], spec: &ShapeSpec, opts: InnerOptions) -> SubproblemOutcome {
        let cov = self.cov;
        let target = cov.group_means(r);
        let weights = cov.weights();
        // The shape prox preserves the mean and is non-expansive, so the
        // centered target norm bounds the centered prox norm.
        let mean = prox::weighted_mean(&target, weights);
        let spread = target
            .iter()
            .enumerate()
            .map(|(i, t)| weights.map_or(1.0, |w| w[i]) * (t - mean) * (t - mean))
            .sum::<f64>()
            .sqrt();
        if spread <= spec.lambda_s {
            return SubproblemOutcome {
                z: vec![0.0; cov.len()],
                values: vec![0.0; target.len()],
                pre_shrink_norm: spread,
                iterations: 0,
                converged: true,
            };
        }
        let problem = InnerProblem {
            target: &target,
            weights,
            gaps: cov.gaps(),
        };
        if spec.mode == ShapeMode::Dc && spec.lambda_d > 0.0 && target.len() > 2 {
            if let Some(bound) = problem.dc_centered_norm_bound(spec.lambda_d) {
                if bound <= spec.lambda_s {
                    return SubproblemOutcome {
                        z: vec![0.0; cov.len()],
                        values: vec![0.0; target.len()],
                        pre_shrink_norm: bound,
                        iterations: 0,
                        converged: true,
                    };
                }
            }
        }
        let mut inner = if spec.mode.uses_slopes() {
            let metric = self.metric();
            let inner = problem.solve(spec, opts, &metric, self.warm.as_ref());
            self.warm = SlopeParam::from_values(&inner.z, cov.gaps()).ok();
            inner
        } else {
            problem.solve(spec, opts, &Metric::uniform(&[], None), None)
        };
        self.finish(&mut inner, spec, weights)
    }

    fn finish(
        &self,
        inner: &mut InnerOutcome,
        spec: &ShapeSpec,
        weights: Option<&[f64]>,
    ) -> SubproblemOutcome {
        let mut values = std::mem::take(&mut inner.z);
        prox::center_weighted_in_place(&mut values, weights);
        let pre_shrink_norm = prox::block_soft_threshold_in_place(&mut values, weights, spec.lambda_s);
        let mut z = vec![0.0; self.cov.len()];
        self.cov.scatter(&values, &mut z);
        SubproblemOutcome {
            z,
            values,
            pre_shrink_norm,
            iterations: inner.iterations,
            converged: inner.converged,
        }
    }
}
