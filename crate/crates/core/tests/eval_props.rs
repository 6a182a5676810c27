mod common;

use proptest::prelude::*;
use shapefit::backfit::{fit, fit_prepared, AdditiveFit, Dataset, FitConfig, PreparedData};
use shapefit::component::{ShapeMode, ShapeSpec};
use shapefit::datagen::{generate_splits, Scenario, SimConfig};
use shapefit::eval::{
    fold_assignments, grid_select, kfold_cv, metrics, mse, real_data_protocol, run_study, support_of,
    support_scores, GridSpec, LambdaGrid, Method, ProtocolConfig, StudyConfig,
};

fn splits(scenario: u8, n: usize, p: usize, seed: u64) -> [Dataset; 3] {
    let s = Scenario::builtin(scenario).unwrap();
    generate_splits(&s, &SimConfig { n, p, snr: 5.0, seed }).unwrap().map(|x| x.data)
}

/// Piecewise-linear interpolation with constant extension, written
/// independently of the library's predictor.
fn interp(knots: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= knots[0] {
        return values[0];
    }
    let last = knots.len() - 1;
    if x >= knots[last] {
        return values[last];
    }
    let k = knots.iter().position(|&t| t > x).unwrap();
    let w = (x - knots[k - 1]) / (knots[k] - knots[k - 1]);
    values[k - 1] * (1.0 - w) + values[k] * w
}

fn predict_oracle(f: &AdditiveFit, data: &Dataset) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            f.intercept
                + f.components()
                    .iter()
                    .enumerate()
                    .map(|(j, c)| if c.knots.is_empty() { 0.0 } else { interp(&c.knots, &c.values, data.column(j)[i]) })
                    .sum::<f64>()
        })
        .collect()
}

#[test]
fn test_mse_matches_recomputation() {
    let [train, _, test] = splits(2, 80, 10, 1);
    let f = fit(&train, &FitConfig::new(ShapeSpec::dc(0.5, 2.0))).unwrap();
    let report = metrics(&f, &[0, 1, 2, 3], &test).unwrap();
    let pred = predict_oracle(&f, &test);
    let want = test.y().iter().zip(&pred).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / test.n() as f64;
    assert!((report.test_mse - want).abs() <= 1e-10 * (1.0 + want));
    assert_eq!(report.model_size, support_of(&f, 1e-8).len());
}

#[test]
fn warm_path_matches_cold_fits() {
    let [train, _, _] = splits(3, 80, 12, 2);
    let base = ShapeSpec::dc(0.0, 0.0);
    let config = FitConfig {
        outer_tol: 1e-10,
        inner_tol: 1e-12,
        max_sweeps: 2000,
        inner_max_iter: 20_000,
        ..FitConfig::new(base)
    };
    let grid = LambdaGrid::default_for(
        &train,
        &base,
        &config,
        &GridSpec {
            n_lambda_s: 8,
            n_lambda_shape: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let prepared = PreparedData::new(&train, config.ties).unwrap();
    for &lt in &grid.lambda_shape {
        let mut warm: Option<AdditiveFit> = None;
        for &ls in &grid.lambda_s {
            let cfg = FitConfig {
                shape: base.with_lambda_d(lt).with_lambda_s(ls),
                ..config.clone()
            };
            let w = fit_prepared(&prepared, &cfg, warm.as_ref()).unwrap();
            let c = fit(&train, &cfg).unwrap();
            let rel = (w.objective() - c.objective()).abs() / (1.0 + c.objective());
            assert!(rel <= 1e-5, "lambda_d {lt} lambda_s {ls}: {} vs {}", w.objective(), c.objective());
            warm = Some(w);
        }
    }
}

#[test]
fn single_point_grid_returns_that_point() {
    let [train, val, _] = splits(2, 60, 8, 3);
    let base = ShapeSpec::tv(0.0, 0.0);
    let grid = LambdaGrid::single(0.4, 1.5).unwrap();
    let sel = grid_select(&train, &val, &grid, &base, &FitConfig::new(base)).unwrap();
    assert_eq!(sel.spec.lambda_t, 0.4);
    assert_eq!(sel.spec.lambda_s, 1.5);
    assert_eq!(sel.curve.len(), 1);
}

#[test]
fn validation_on_train_picks_least_penalty() {
    let [train, _, _] = splits(2, 50, 6, 4);
    let base = ShapeSpec::new(ShapeMode::Unconstrained);
    let grid = LambdaGrid::new(vec![5.0, 1.0, 0.1, 0.0], vec![0.0]).unwrap().with_patience(None);
    let sel = grid_select(&train, &train, &grid, &base, &FitConfig::new(base)).unwrap();
    assert_eq!(sel.spec.lambda_s, 0.0);
}

#[test]
fn leave_one_out_runs() {
    let [train, _, _] = splits(1, 12, 4, 5);
    let base = ShapeSpec::tv(0.0, 0.0);
    let grid = LambdaGrid::new(vec![3.0, 1.0], vec![0.5, 0.1]).unwrap();
    let cv = kfold_cv(&train, 12, &grid, &base, &FitConfig::new(base), 0).unwrap();
    assert_eq!(cv.curve.len(), 4);
    assert!(cv.curve.iter().all(|p| p.mean_mse.is_finite()));
    assert!(kfold_cv(&train, 13, &grid, &base, &FitConfig::new(base), 0).is_err());
    assert!(kfold_cv(&train, 1, &grid, &base, &FitConfig::new(base), 0).is_err());
}

#[test]
fn cv_choice_is_stable_across_seeds() {
    let s = Scenario::builtin(2).unwrap();
    let train = generate_splits(&s, &SimConfig { n: 100, p: 50, snr: 5.0, seed: 6 }).unwrap()[0].data.clone();
    let base = ShapeSpec::dc(0.0, 0.0);
    let config = FitConfig::new(base);
    let grid = LambdaGrid::default_for(
        &train,
        &base,
        &config,
        &GridSpec {
            n_lambda_s: 10,
            n_lambda_shape: 1,
            shape_ratio_hi: 0.1,
            shape_ratio_lo: 0.1,
            ..Default::default()
        },
    )
    .unwrap();
    let step = |v: f64| grid.lambda_s.iter().position(|&l| l == v).unwrap() as i64;
    let steps: Vec<i64> = (0..20).map(|seed| step(kfold_cv(&train, 10, &grid, &base, &config, seed).unwrap().spec.lambda_s)).collect();
    let reference = steps[0];
    for (seed, got) in steps.iter().enumerate() {
        assert!((got - reference).abs() <= 1, "seed {seed}: step {got} vs {reference}");
    }
}

#[test]
fn study_scenario_two_recovers_the_support() {
    let cfg = StudyConfig {
        scenario: Scenario::builtin(2).unwrap(),
        n: 100,
        p: 200,
        snr: 5.0,
        replicates: 3,
        seed: 1,
        methods: vec![Method::parse("dc").unwrap()],
        fit: FitConfig::default(),
        grid: GridSpec::default(),
    };
    let (rows, summary) = run_study(&cfg).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(summary[0].recall.mean, 1.0);
}

#[test]
fn protocol_reports_rate_and_size() {
    let [data, _, _] = splits(2, 60, 5, 9);
    let base = ShapeSpec::dc(0.0, 0.0);
    let protocol = ProtocolConfig {
        p_total: 12,
        folds: 3,
        partitions: 2,
        seed: 4,
        grid: GridSpec {
            n_lambda_s: 6,
            n_lambda_shape: 2,
            ..Default::default()
        },
    };
    let out = real_data_protocol(&data, &base, &FitConfig::new(base), &protocol).unwrap();
    assert_eq!(out.runs.len(), 2);
    assert!((0.0..=1.0).contains(&out.elimination_rate));
    assert_eq!(out.model_size.count, 2);
    for run in &out.runs {
        assert_eq!(run.spurious, (5..12).collect::<Vec<_>>());
    }
}

#[test]
fn mse_definition() {
    assert_eq!(mse(&[1.0, 2.0], &[1.0, 4.0]), 2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_invariant_to_relabeling(
        est in prop::collection::btree_set(0usize..30, 0..10),
        truth in prop::collection::btree_set(0usize..30, 1..10),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut labels: Vec<usize> = (0..30).collect();
        labels.shuffle(&mut common::rng(seed));
        let est: Vec<usize> = est.into_iter().collect();
        let truth: Vec<usize> = truth.into_iter().collect();
        let relabel = |v: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = v.iter().map(|&j| labels[j]).collect();
            out.sort_unstable();
            out
        };
        let a = support_scores(&est, &truth);
        let b = support_scores(&relabel(&est), &relabel(&truth));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fold_sizes_differ_by_at_most_one(n in 2usize..200, k in 2usize..20, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = fold_assignments(n, k, seed).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
