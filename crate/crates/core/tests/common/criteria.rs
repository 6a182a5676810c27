//! Checks shared by the regular tests and the acceptance report. Each
//! returns the worst observed deviation or a description of the first
//! failure, so callers can either assert or print.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use shapefit::backfit::{fit, fit_prepared, objective, shape_violation, AdditiveFit, Dataset, FitConfig, PreparedData};
use shapefit::datagen::{generate, Scenario, SimConfig};
use shapefit::{
    dc_seminorm, inner_prox_solve, oneside_tv_prox, pav_isotonic, pav_isotonic_nonneg, solve_subproblem, tv_prox,
    ShapeMode, ShapeSpec, SortedCovariate, TieHandling,
};

use super::oracle::{self, Problem};
use super::{gaps_of, knots, max_abs_diff, normals, rng};

pub const TOL: f64 = 1e-5;
const TIGHT: f64 = 1e-15;
const MANY: usize = 200_000;

/// Worst error and instance count of one oracle comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tally {
    pub worst: f64,
    pub cases: usize,
}

impl Tally {
    fn add(&mut self, err: f64) {
        self.worst = self.worst.max(if err.is_nan() { f64::INFINITY } else { err });
        self.cases += 1;
    }

    pub fn ok(&self) -> bool {
        self.worst <= TOL
    }
}

fn positions(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

/// All vectors in `{-1, 0, 1}^n`.
pub fn ternary(n: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..3usize.pow(n as u32)).map(move |code| {
        let mut c = code;
        (0..n)
            .map(|_| {
                let t = (c % 3) as f64 - 1.0;
                c /= 3;
                t
            })
            .collect()
    })
}

fn random_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
}

pub fn tv_random(cases: usize, seed: u64) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for _ in 0..cases {
        let n = r.random_range(1..=12);
        let v = random_vec(&mut r, n);
        let lam = r.random_range(0.0..2.0);
        let want = oracle::solve(&Problem::values(lam, lam), &v, &positions(n));
        t.add(max_abs_diff(&tv_prox(&v, lam).unwrap(), &want));
    }
    t
}

pub fn oneside_random(cases: usize, seed: u64) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for _ in 0..cases {
        let n = r.random_range(1..=12);
        let v = random_vec(&mut r, n);
        let lam = r.random_range(0.0..2.0);
        let want = oracle::solve(&Problem::values(0.0, lam), &v, &positions(n));
        t.add(max_abs_diff(&oneside_tv_prox(&v, lam).unwrap(), &want));
    }
    t
}

pub fn pav_random(cases: usize, seed: u64) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for _ in 0..cases {
        let n = r.random_range(1..=12);
        let v = random_vec(&mut r, n);
        t.add(max_abs_diff(&pav_isotonic(&v), &oracle::isotonic_minmax(&v)));
        t.add(max_abs_diff(&pav_isotonic_nonneg(&v), &oracle::nonneg_isotonic(&v)));
    }
    t
}

/// Every ternary vector up to `max_len`, for the four chain operators.
/// TV-type operators use each penalty in `lambdas`.
pub fn ternary_exhaustive(max_len: usize, lambdas: &[f64]) -> Tally {
    let mut t = Tally::default();
    for n in 1..=max_len {
        let x = positions(n);
        for v in ternary(n) {
            t.add(max_abs_diff(&pav_isotonic(&v), &oracle::isotonic_minmax(&v)));
            t.add(max_abs_diff(&pav_isotonic_nonneg(&v), &oracle::nonneg_isotonic(&v)));
            for &lam in lambdas {
                t.add(max_abs_diff(&tv_prox(&v, lam).unwrap(), &oracle::solve(&Problem::values(lam, lam), &v, &x)));
                t.add(max_abs_diff(
                    &oneside_tv_prox(&v, lam).unwrap(),
                    &oracle::solve(&Problem::values(0.0, lam), &v, &x),
                ));
            }
        }
    }
    t
}

pub fn problem_for(spec: &ShapeSpec) -> Problem {
    match spec.mode {
        ShapeMode::Unconstrained => Problem::free(),
        ShapeMode::Isotonic => Problem::values(spec.lambda_t, 0.0).monotone(),
        ShapeMode::Convex => Problem::slopes(0.0, 0.0).monotone(),
        ShapeMode::ConvexIncreasing => Problem::slopes(0.0, 0.0).monotone().first_nonneg(),
        ShapeMode::Dc => Problem::slopes(spec.lambda_d, spec.lambda_d),
        ShapeMode::ApproxConvex => Problem::slopes(0.0, spec.lambda_d),
        ShapeMode::Tv => Problem::values(spec.lambda_t, spec.lambda_t),
    }
}

pub fn random_spec(r: &mut impl Rng, mode: ShapeMode, scale: f64) -> ShapeSpec {
    ShapeSpec::new(mode)
        .with_lambda_d(r.random_range(0.0..1.0) * scale)
        .with_lambda_t(r.random_range(0.0..1.0) * scale)
        .with_lambda_s(r.random_range(0.0..1.0) * scale)
}

/// The inner prox on random knots against the enumeration oracle.
pub fn inner_prox_random(mode: ShapeMode, cases: usize, max_n: usize, seed: u64) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for _ in 0..cases {
        let n = r.random_range(2..=max_n);
        let x = knots(&mut r, n);
        let y = normals(&mut r, n, 1.5);
        let spec = random_spec(&mut r, mode, 1.5);
        let want = oracle::solve(&problem_for(&spec), &y, &x);
        let got = inner_prox_solve(&y, &gaps_of(&x), &spec, TIGHT, MANY).unwrap();
        t.add(max_abs_diff(&got.z, &want));
    }
    t
}

/// The full per-component subproblem, rows presented unsorted, against
/// the joint oracle with centering and group shrinkage. Sizes run over
/// 2..=9 with every tenth instance at 12.
pub fn subproblem_random(mode: ShapeMode, cases: usize, seed: u64) -> Tally {
    let mut r = rng(seed);
    let mut t = Tally::default();
    for case in 0..cases {
        let n = if case % 10 == 9 { 12 } else { r.random_range(2..=9) };
        let x = knots(&mut r, n);
        let y = normals(&mut r, n, 1.5);
        let spec = random_spec(&mut r, mode, 1.5);
        let want = oracle::solve(&problem_for(&spec).with_group(spec.lambda_s), &y, &x);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let cov = SortedCovariate::new(&xs, TieHandling::Group).unwrap();
        let got = solve_subproblem(&ys, &cov, &spec, TIGHT, MANY).unwrap();
        let mut unshuffled = vec![0.0; n];
        for (k, &i) in order.iter().enumerate() {
            unshuffled[i] = got.z[k];
        }
        t.add(max_abs_diff(&unshuffled, &want));
    }
    t
}

pub fn sim(scenario: u8, n: usize, p: usize, seed: u64) -> Dataset {
    let s = Scenario::builtin(scenario).unwrap();
    generate(&s, &SimConfig { n, p, snr: 5.0, seed }).unwrap().data
}

/// One fit per shape family with moderate penalties.
pub fn modes() -> Vec<ShapeSpec> {
    vec![
        ShapeSpec::dc(0.5, 0.5),
        ShapeSpec::new(ShapeMode::Convex).with_lambda_s(0.5),
        ShapeSpec::new(ShapeMode::ConvexIncreasing).with_lambda_s(0.5),
        ShapeSpec::new(ShapeMode::Isotonic).with_lambda_s(0.5),
        ShapeSpec::new(ShapeMode::Isotonic).with_lambda_t(0.3).with_lambda_s(0.5),
        ShapeSpec::tv(0.3, 0.5),
        ShapeSpec::new(ShapeMode::ApproxConvex).with_lambda_d(0.5).with_lambda_s(0.5),
        ShapeSpec::new(ShapeMode::Unconstrained).with_lambda_s(2.0),
    ]
}

/// Largest increase between consecutive sweeps beyond the allowed slack
/// `1e-6 (1 + |obj|)`; zero or negative means the trace is monotone.
pub fn trace_excess(f: &AdditiveFit) -> f64 {
    f.objective_trace()
        .windows(2)
        .map(|w| w[1] - w[0] - 1e-6 * (1.0 + w[1].abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Worst violation of: intercept equals the mean of y, residual equals y
/// minus intercept minus the component sum, and every column sums to zero.
pub fn identity_error(data: &Dataset, f: &AdditiveFit) -> f64 {
    let n = data.n();
    let mean = data.y().iter().sum::<f64>() / n as f64;
    let mut worst = (f.intercept - mean).abs();
    let fitted = f.fitted_values();
    for i in 0..n {
        let rows: f64 = f.z().iter().map(|c| c[i]).sum();
        worst = worst.max(((data.y()[i] - mean - rows) - (data.y()[i] - fitted[i])).abs());
    }
    for col in f.z() {
        worst = worst.max(col.iter().sum::<f64>().abs());
    }
    worst
}

/// Largest shape violation over convex-type fits, on three scenarios.
pub fn convex_violation() -> f64 {
    let mut worst: f64 = 0.0;
    for scenario in 1..=3 {
        let data = sim(scenario, 100, 6, 5 + scenario as u64);
        for mode in [ShapeMode::Convex, ShapeMode::ConvexIncreasing] {
            let config = FitConfig::new(ShapeSpec::new(mode).with_lambda_s(0.5));
            let f = fit(&data, &config).unwrap();
            worst = worst.max(shape_violation(&data, f.z(), &config).unwrap());
            for c in f.components().iter().filter(|c| !c.is_zero()) {
                let slopes: Vec<f64> = (1..c.values.len())
                    .map(|k| (c.values[k] - c.values[k - 1]) / (c.knots[k] - c.knots[k - 1]))
                    .collect();
                for w in slopes.windows(2) {
                    worst = worst.max(w[0] - w[1]);
                }
                if mode == ShapeMode::ConvexIncreasing && !slopes.is_empty() {
                    worst = worst.max(-slopes[0]);
                }
            }
        }
    }
    worst
}

/// Penalty difference between a huge and a zero DC weight for centered
/// affine components, relative to the objective, plus the seminorm itself.
pub fn affine_dc_penalty() -> f64 {
    let data = sim(2, 50, 4, 2);
    let z: Vec<Vec<f64>> = (0..4)
        .map(|j| {
            let x = data.column(j);
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (j as f64 + 0.5) * (v - m)).collect()
        })
        .collect();
    let with = objective(&data, &z, &FitConfig::new(ShapeSpec::dc(1e3, 0.0))).unwrap();
    let without = objective(&data, &z, &FitConfig::new(ShapeSpec::dc(0.0, 0.0))).unwrap();
    let mut worst = (with - without).abs() / (1.0 + without);
    for (j, col) in z.iter().enumerate() {
        let x = data.column(j);
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let zs: Vec<f64> = idx.iter().map(|&i| col[i]).collect();
        worst = worst.max(dc_seminorm(&zs, &gaps_of(&xs)).unwrap());
    }
    worst
}

fn one_sweep_seconds(n: usize, p: usize) -> f64 {
    let mut rng = rng(n as u64);
    let columns: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.random_range(-2.5..2.5)).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| columns[0][i].sin() + columns[1][i].abs() + 0.3 * rng.random::<f64>()).collect();
    let data = Dataset::new(columns, y).unwrap();
    let prepared = PreparedData::new(&data, Default::default()).unwrap();
    let config = FitConfig {
        max_sweeps: 1,
        inner_max_iter: 50,
        inner_tol: 0.0,
        ..FitConfig::new(ShapeSpec::dc(1.0, 1.0))
    };
    (0..3)
        .map(|_| {
            let t = Instant::now();
            fit_prepared(&prepared, &config, None).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Wall time of one sweep at n = 20000 over n = 10000, ten columns.
pub fn sweep_time_ratio() -> f64 {
    one_sweep_seconds(20_000, 10) / one_sweep_seconds(10_000, 10)
}
