//! Exact univariate proximal operators and projections.
//!
//! Everything here acts on a single ordered vector (a component fit sorted by
//! its covariate) and runs in linear time. The chain operators (`tv_prox`,
//! `oneside_tv_prox`) share one dynamic program over piecewise-linear message
//! derivatives; it handles any penalty of the form
//! `up * max(z[i] - z[i-1], 0) + down * max(z[i-1] - z[i], 0)` exactly.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Penalty scale paired with a proximal step size.
///
/// The proximal map of `lambda * g` with step `step` is the proximal map of
/// `g` scaled by `lambda * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyScale {
    lambda: f64,
    step: f64,
}

impl PenaltyScale {
    pub fn new(lambda: f64, step: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("penalty must be finite and >= 0, got {lambda}")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!("step must be finite and > 0, got {step}")));
        }
        Ok(PenaltyScale { lambda, step })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Threshold actually applied by the prox: `lambda * step`.
    pub fn effective(&self) -> f64 {
        self.lambda * self.step
    }
}

/// Euclidean projection onto `{z : sum(z) = 0}`.
pub fn center(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::invalid("cannot center an empty vector"));
    }
    let mut out = z.to_vec();
    center_weighted_in_place(&mut out, None);
    Ok(out)
}

pub(crate) fn center_weighted_in_place(z: &mut [f64], weights: Option<&[f64]>) {
    if z.is_empty() {
        return;
    }
    let mean = weighted_mean(z, weights);
    for v in z.iter_mut() {
        *v -= mean;
    }
}

pub(crate) fn weighted_mean(z: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => z.iter().sum::<f64>() / z.len() as f64,
        Some(w) => {
            let (num, den) = z
                .iter()
                .zip(w)
                .fold((0.0, 0.0), |(a, b), (v, c)| (a + c * v, b + c));
            num / den
        }
    }
}

pub(crate) fn weighted_norm(z: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => z.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Some(w) => z.iter().zip(w).map(|(v, c)| c * v * v).sum::<f64>().sqrt(),
    }
}

/// Proximal map of `lambda_s * ||.||_2`: `(1 - lambda_s / ||r||)_+ r`.
///
/// A negative `lambda_s` is treated as zero.
pub fn block_soft_threshold(r: &[f64], lambda_s: f64) -> Vec<f64> {
    let mut out = r.to_vec();
    block_soft_threshold_in_place(&mut out, None, lambda_s);
    out
}

/// Returns the norm of the input before shrinking.
pub(crate) fn block_soft_threshold_in_place(
    z: &mut [f64],
    weights: Option<&[f64]>,
    lambda_s: f64,
) -> f64 {
    let norm = weighted_norm(z, weights);
    if lambda_s <= 0.0 {
        return norm;
    }
    if norm <= lambda_s {
        z.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let factor = 1.0 - lambda_s / norm;
        z.iter_mut().for_each(|v| *v *= factor);
    }
    norm
}

/// Total-variation denoising: the exact minimizer of
/// `0.5 * ||z - v||^2 + lambda * sum |z[i] - z[i-1]|`.
pub fn tv_prox(v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    Ok(chain_prox(v, None, lambda, lambda))
}

/// Exact minimizer of `0.5 * ||z - v||^2 + lambda * sum max(z[i-1] - z[i], 0)`.
///
/// Only decreases are penalized; a nondecreasing `v` is a fixed point and the
/// result tends to the isotonic projection as `lambda` grows.
pub fn oneside_tv_prox(v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    Ok(chain_prox(v, None, lambda, 0.0))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")))
    }
}

/// Knot of a piecewise-linear derivative: crossing it left to right adds
/// `slope` and `offset` to the active linear piece.
#[derive(Clone, Copy, Debug)]
struct Knot {
    at: f64,
    slope: f64,
    offset: f64,
}

/// Exact chain prox with asymmetric penalty on consecutive differences.
///
/// Minimizes `sum_i 0.5 * c_i (z_i - v_i)^2 + sum_i g(z_i - z_{i-1})` with
/// `g(t) = up * max(t, 0) + down * max(-t, 0)`, where `c` defaults to ones.
pub(crate) fn chain_prox(v: &[f64], weights: Option<&[f64]>, down: f64, up: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    ChainWorkspace::default().solve_in_place(&mut out, weights, down, up);
    out
}

/// Reusable buffers for [`chain_prox`]. The forward pass keeps the
/// derivative of the message function as a deque of knots; each knot is
/// pushed and popped at most once, so the cost is O(n).
#[derive(Debug, Default, Clone)]
pub(crate) struct ChainWorkspace {
    knots: VecDeque<Knot>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ChainWorkspace {
    pub fn solve_in_place(&mut self, v: &mut [f64], weights: Option<&[f64]>, down: f64, up: f64) {
        let n = v.len();
        if n <= 1 || (down == 0.0 && up == 0.0) {
            return;
        }
        let weight = |i: usize| weights.map_or(1.0, |w| w[i]);

        // The constant solution is optimal when every partial weighted sum of
        // deviations from the mean lies in [-up, down]. Checking it first
        // avoids cancellation in the message recursion for huge penalties.
        let total: f64 = (0..n).map(weight).sum();
        let mean = (0..n).map(|i| weight(i) * v[i]).sum::<f64>() / total;
        let mut partial = 0.0;
        let constant = (0..n - 1).all(|i| {
            partial += weight(i) * (v[i] - mean);
            partial >= -up && partial <= down
        });
        if constant {
            v.iter_mut().for_each(|z| *z = mean);
            return;
        }

        let knots = &mut self.knots;
        knots.clear();
        self.lo.clear();
        self.hi.clear();
        // Constant values of the message derivative beyond its outermost knots.
        let (mut left_const, mut right_const) = (0.0, 0.0);

        for i in 0..n - 1 {
            let c = weight(i);

            let (mut a, mut b) = (c, left_const - c * v[i]);
            let target = -down;
            while let Some(k) = knots.front() {
                if a * k.at + b > target {
                    break;
                }
                a += k.slope;
                b += k.offset;
                knots.pop_front();
            }
            let lo_i = (target - b) / a;
            let (lo_slope, lo_offset) = (a, b);

            let (mut a, mut b) = (c, right_const - c * v[i]);
            let target = up;
            while let Some(k) = knots.back() {
                if a * k.at + b < target {
                    break;
                }
                a -= k.slope;
                b -= k.offset;
                knots.pop_back();
            }
            let hi_i = (target - b) / a;

            knots.push_front(Knot {
                at: lo_i,
                slope: lo_slope,
                offset: lo_offset + down,
            });
            knots.push_back(Knot {
                at: hi_i,
                slope: -a,
                offset: up - b,
            });
            left_const = -down;
            right_const = up;
            self.lo.push(lo_i);
            self.hi.push(hi_i.max(lo_i));
        }

        let c = weight(n - 1);
        let (mut a, mut b) = (c, left_const - c * v[n - 1]);
        for k in knots.iter() {
            if a * k.at + b > 0.0 {
                break;
            }
            a += k.slope;
            b += k.offset;
        }
        v[n - 1] = -b / a;
        for i in (0..n - 1).rev() {
            v[i] = v[i + 1].clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Euclidean projection onto the isotonic cone `{z : z_1 <= ... <= z_n}`
/// by pool-adjacent-violators.
pub fn pav_isotonic(v: &[f64]) -> Vec<f64> {
    pav_weighted(v, None)
}

/// Euclidean projection onto `{z : 0 <= z_1 <= ... <= z_n}`.
pub fn pav_isotonic_nonneg(v: &[f64]) -> Vec<f64> {
    let mut out = pav_isotonic(v);
    out.iter_mut().for_each(|z| *z = z.max(0.0));
    out
}

pub(crate) fn pav_weighted(v: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let mut out = v.to_vec();
    pav_weighted_in_place(&mut out, weights);
    out
}

/// In-place weighted PAV. Blocks are kept on a stack as (weighted sum,
/// total weight, length); a new point merges with the top while the top's
/// mean is not below it.
pub(crate) fn pav_weighted_in_place(v: &mut [f64], weights: Option<&[f64]>) {
    let n = v.len();
    if n < 2 {
        return;
    }
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut totals: Vec<f64> = Vec::with_capacity(n);
    let mut lens: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        let mut sum = w * v[i];
        let mut total = w;
        let mut len = 1;
        while let (Some(&s), Some(&t)) = (sums.last(), totals.last()) {
            if s / t < sum / total {
                break;
            }
            sum += s;
            total += t;
            len += lens.pop().unwrap_or(0);
            sums.pop();
            totals.pop();
        }
        sums.push(sum);
        totals.push(total);
        lens.push(len);
    }
    let mut pos = 0;
    for ((s, t), len) in sums.iter().zip(&totals).zip(&lens) {
        let mean = s / t;
        v[pos..pos + len].iter_mut().for_each(|z| *z = mean);
        pos += len;
    }
}

/// Total variation `sum |z[i] - z[i-1]|`.
pub fn total_variation(z: &[f64]) -> f64 {
    z.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// One-sided variation `sum max(z[i-1] - z[i], 0)`.
pub fn downward_variation(z: &[f64]) -> f64 {
    z.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum()
}

/// Largest single decrease `max(z[i-1] - z[i], 0)`.
pub(crate) fn downward_variation_max(z: &[f64]) -> f64 {
    z.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max)
}
