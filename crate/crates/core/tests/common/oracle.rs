//! Exact solutions of small structured prox problems by enumerating
//! active sets.
//!
//! Every problem handled here has the form
//!
//! ```text
//! min 0.5 ||z - r||^2 + sum_j pen_j(D_j z) [+ lambda_s ||z||]  s.t. constraints
//! [and mean(z) = 0]
//! ```
//!
//! where `D_j z` is either a first difference of `z` or a difference of
//! consecutive slopes. Fixing which differences are zero and the sign of the
//! others turns the penalty into a linear term over a subspace, where the
//! problem has a closed form. The optimum is recovered by the pattern of
//! its own nonzero differences, so the minimum of the true objective over
//! all candidates is the exact solution.

/// Which sequence the penalty and constraints act on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Level {
    Values,
    Slopes,
}

#[derive(Clone, Copy, Debug)]
pub struct Problem {
    pub level: Level,
    /// Cost per unit of increase of the differenced sequence.
    pub cost_up: f64,
    /// Cost per unit of decrease.
    pub cost_down: f64,
    /// Differences must be nonnegative.
    pub monotone: bool,
    /// First slope must be nonnegative (slopes level only).
    pub first_nonneg: bool,
    /// No fusion at all: `z` is free.
    pub free: bool,
    /// Impose mean zero and apply group shrinkage with this weight.
    pub center_and_shrink: Option<f64>,
}

impl Problem {
    pub fn values(cost_up: f64, cost_down: f64) -> Self {
        Problem {
            level: Level::Values,
            cost_up,
            cost_down,
            monotone: false,
            first_nonneg: false,
            free: false,
            center_and_shrink: None,
        }
    }

    pub fn slopes(cost_up: f64, cost_down: f64) -> Self {
        Problem {
            level: Level::Slopes,
            ..Self::values(cost_up, cost_down)
        }
    }

    pub fn free() -> Self {
        Problem {
            free: true,
            ..Self::values(0.0, 0.0)
        }
    }

    pub fn monotone(mut self) -> Self {
        self.monotone = true;
        self
    }

    pub fn first_nonneg(mut self) -> Self {
        self.first_nonneg = true;
        self
    }

    pub fn with_group(mut self, lambda_s: f64) -> Self {
        self.center_and_shrink = Some(lambda_s);
        self
    }

    fn diffs(&self, z: &[f64], x: &[f64]) -> Vec<f64> {
        let d1: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
        match self.level {
            Level::Values => d1,
            Level::Slopes => {
                let s: Vec<f64> = d1.iter().zip(x.windows(2)).map(|(d, w)| d / (w[1] - w[0])).collect();
                s.windows(2).map(|w| w[1] - w[0]).collect()
            }
        }
    }

    /// True objective; infinite when a constraint is violated beyond `tol`.
    pub fn objective(&self, r: &[f64], x: &[f64], z: &[f64], tol: f64) -> f64 {
        let scale = 1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut obj: f64 = 0.5 * z.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if self.free {
            // no shape term
        } else {
            for d in self.diffs(z, x) {
                if self.monotone && d < -tol * scale {
                    return f64::INFINITY;
                }
                obj += self.cost_up * d.max(0.0) + self.cost_down * (-d).max(0.0);
            }
            if self.first_nonneg && z.len() >= 2 && z[1] - z[0] < -tol * scale {
                return f64::INFINITY;
            }
        }
        if let Some(ls) = self.center_and_shrink {
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            if mean.abs() > tol * scale {
                return f64::INFINITY;
            }
            obj += ls * norm(z);
        }
        obj
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Orthogonal projection of `u` onto the span of `basis` (modified
/// Gram-Schmidt with one re-orthogonalization pass).
fn project(u: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut v = b.clone();
        let orig = norm(&v);
        for _ in 0..2 {
            for e in &q {
                let d: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(e).for_each(|(a, b)| *a -= d * b);
            }
        }
        let nv = norm(&v);
        if nv > 1e-10 * orig.max(1e-300) && nv > 1e-13 {
            v.iter_mut().for_each(|a| *a /= nv);
            q.push(v);
        }
    }
    let mut out = vec![0.0; u.len()];
    for e in &q {
        let d: f64 = u.iter().zip(e).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(e).for_each(|(o, b)| *o += d * b);
    }
    out
}

/// Exact minimizer for sorted knots `x` and targets `r`.
pub fn solve(problem: &Problem, r: &[f64], x: &[f64]) -> Vec<f64> {
    let n = r.len();
    assert_eq!(x.len(), n);
    if problem.free || n == 1 {
        let identity: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        return finish(problem, r.to_vec(), &identity);
    }
    let d = match problem.level {
        Level::Values => n - 1,
        Level::Slopes => n.saturating_sub(2),
    };
    let first_flags: &[bool] = if problem.first_nonneg { &[false, true] } else { &[false] };
    let mut best = if problem.center_and_shrink.is_some() { vec![0.0; n] } else { r.to_vec() };
    let mut best_obj = problem.objective(r, x, &best, 1e-9);

    let total = 3usize.pow(d as u32);
    let mut signs = vec![0i8; d];
    for code in 0..total {
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i8 - 1;
            c /= 3;
        }
        if problem.monotone && signs.iter().any(|&s| s < 0) {
            continue;
        }
        for &first_zero in first_flags {
            let z = candidate(problem, r, x, &signs, first_zero);
            let obj = problem.objective(r, x, &z, 1e-9);
            if obj < best_obj {
                best_obj = obj;
                best = z;
            }
        }
    }
    best
}

fn candidate(problem: &Problem, r: &[f64], x: &[f64], signs: &[i8], first_zero: bool) -> Vec<f64> {
    let n = r.len();
    let coef = |s: i8| match s {
        1 => problem.cost_up,
        -1 => -problem.cost_down,
        _ => 0.0,
    };
    // Gradient of the linearized penalty.
    let mut c = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::new();
    match problem.level {
        Level::Values => {
            for (j, &s) in signs.iter().enumerate() {
                let a = coef(s);
                c[j + 1] += a;
                c[j] -= a;
            }
            let mut start = 0;
            for j in 0..n {
                if j == n - 1 || signs[j] != 0 {
                    let mut col = vec![0.0; n];
                    col[start..=j].iter_mut().for_each(|v| *v = 1.0);
                    basis.push(col);
                    start = j + 1;
                }
            }
        }
        Level::Slopes => {
            let m = n - 1;
            let a: Vec<f64> = signs.iter().map(|&s| coef(s)).collect();
            for k in 0..m {
                let prev = if k > 0 { a[k - 1] } else { 0.0 };
                let next = if k < a.len() { a[k] } else { 0.0 };
                let b = prev - next;
                let g = x[k + 1] - x[k];
                c[k + 1] += b / g;
                c[k] -= b / g;
            }
            basis.push(vec![1.0; n]);
            if !first_zero {
                basis.push(x.to_vec());
            }
            for (j, &s) in signs.iter().enumerate() {
                if s != 0 {
                    let t = x[j + 1];
                    basis.push(x.iter().map(|&v| (v - t).max(0.0)).collect());
                }
            }
        }
    }
    let u: Vec<f64> = r.iter().zip(&c).map(|(a, b)| a - b).collect();
    finish(problem, u, &basis)
}

fn finish(problem: &Problem, u: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    match problem.center_and_shrink {
        None => project(&u, basis),
        Some(ls) => {
            let centered: Vec<Vec<f64>> = basis
                .iter()
                .map(|b| {
                    let m = b.iter().sum::<f64>() / b.len() as f64;
                    b.iter().map(|v| v - m).collect()
                })
                .collect();
            let mut z = project(&u, &centered);
            let nz = norm(&z);
            let f = if nz > ls { 1.0 - ls / nz } else { 0.0 };
            z.iter_mut().for_each(|v| *v *= f);
            z
        }
    }
}

/// Closed-form isotonic regression by the min-max formula
/// `z_i = max_{a<=i} min_{b>=i} mean(v[a..=b])`.
pub fn isotonic_minmax(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
    }
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|a| {
                    (i..n)
                        .map(|b| (prefix[b + 1] - prefix[a]) / (b + 1 - a) as f64)
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Projection onto `{0 <= z_1 <= ... <= z_n}` by enumerating block
/// partitions with the leading block optionally pinned at zero.
pub fn nonneg_isotonic(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best = vec![f64::NAN; n];
    let mut best_obj = f64::INFINITY;
    for cuts in 0..(1usize << (n - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for j in 0..n {
            if j == n - 1 || cuts >> j & 1 == 1 {
                blocks.push((start, j + 1));
                start = j + 1;
            }
        }
        for pin_first in [false, true] {
            let mut z = vec![0.0; n];
            for (b, &(s, e)) in blocks.iter().enumerate() {
                let mean = v[s..e].iter().sum::<f64>() / (e - s) as f64;
                let val = if b == 0 && pin_first { 0.0 } else { mean };
                z[s..e].iter_mut().for_each(|x| *x = val);
            }
            let feasible = z[0] >= -1e-12 && z.windows(2).all(|w| w[1] >= w[0] - 1e-12);
            if feasible && sq_dist(v, &z) < best_obj {
                best_obj = sq_dist(v, &z);
                best = z;
            }
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
