mod common;

use common::oracle::{self, Problem};
use common::{max_abs_diff, rng};
use proptest::prelude::*;
use rand::Rng;
use shapefit::prox::{downward_variation, total_variation};
use shapefit::{block_soft_threshold, center, oneside_tv_prox, pav_isotonic, pav_isotonic_nonneg, tv_prox};
use std::time::Instant;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn tv_obj(v: &[f64], z: &[f64], lam: f64) -> f64 {
    0.5 * sq(v, z) + lam * total_variation(z)
}

fn oneside_obj(v: &[f64], z: &[f64], lam: f64) -> f64 {
    0.5 * sq(v, z) + lam * downward_variation(z)
}

fn positions(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

#[test]
fn tv_prox_matches_enumeration() {
    let mut r = rng(11);
    for _ in 0..300 {
        let n = r.random_range(1..=8);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let lam = r.random_range(0.0..2.0);
        let got = tv_prox(&v, lam).unwrap();
        let want = oracle::solve(&Problem::values(lam, lam), &v, &positions(n));
        assert!(max_abs_diff(&got, &want) < 1e-9, "{v:?} {lam} {got:?} {want:?}");
    }
}

#[test]
fn oneside_tv_prox_matches_enumeration() {
    let mut r = rng(12);
    for _ in 0..300 {
        let n = r.random_range(1..=8);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let lam = r.random_range(0.0..2.0);
        let got = oneside_tv_prox(&v, lam).unwrap();
        let want = oracle::solve(&Problem::values(0.0, lam), &v, &positions(n));
        assert!(max_abs_diff(&got, &want) < 1e-9, "{v:?} {lam} {got:?} {want:?}");
    }
}

#[test]
fn pav_exhaustive_ternary() {
    for n in 1..=8usize {
        for code in 0..3usize.pow(n as u32) {
            let mut c = code;
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    let t = (c % 3) as f64 - 1.0;
                    c /= 3;
                    t
                })
                .collect();
            let got = pav_isotonic(&v);
            let want = oracle::isotonic_minmax(&v);
            assert!(max_abs_diff(&got, &want) < 1e-8, "{v:?}");
        }
    }
}

#[test]
fn pav_random_length_twelve() {
    let mut r = rng(13);
    for _ in 0..100 {
        let v: Vec<f64> = (0..12).map(|_| r.random_range(-5.0..5.0)).collect();
        let got = pav_isotonic(&v);
        let want = oracle::solve(&Problem::values(0.0, 0.0).monotone(), &v, &positions(12));
        assert!(max_abs_diff(&got, &want) < 1e-8);
        assert!(max_abs_diff(&got, &oracle::isotonic_minmax(&v)) < 1e-8);
    }
}

#[test]
fn pav_nonneg_both_ways() {
    let mut r = rng(14);
    for _ in 0..200 {
        let n = r.random_range(1..=9);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let got = pav_isotonic_nonneg(&v);
        let clamped: Vec<f64> = pav_isotonic(&v).iter().map(|z| z.max(0.0)).collect();
        assert_eq!(got, clamped);
        assert!(max_abs_diff(&got, &oracle::nonneg_isotonic(&v)) < 1e-9, "{v:?}");
    }
}

#[test]
fn tv_optimal_under_perturbation() {
    let mut r = rng(15);
    for _ in 0..20 {
        let n = r.random_range(3..30);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let lam = r.random_range(0.05..1.0);
        let z = tv_prox(&v, lam).unwrap();
        let z1 = oneside_tv_prox(&v, lam).unwrap();
        let base = tv_obj(&v, &z, lam);
        let base1 = oneside_obj(&v, &z1, lam);
        for _ in 0..200 {
            let d: Vec<f64> = (0..n).map(|_| r.random_range(-1e-4..1e-4)).collect();
            let zp: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(tv_obj(&v, &zp, lam) >= base - 1e-12);
            let zp1: Vec<f64> = z1.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(oneside_obj(&v, &zp1, lam) >= base1 - 1e-12);
        }
    }
}

#[test]
fn pav_optimal_under_feasible_perturbation() {
    let mut r = rng(16);
    for _ in 0..20 {
        let n = r.random_range(3..30);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let z = pav_isotonic(&v);
        let zn = pav_isotonic_nonneg(&v);
        for _ in 0..200 {
            let d: Vec<f64> = (0..n).map(|_| r.random_range(-1e-4..1e-4)).collect();
            let zp = pav_isotonic(&z.iter().zip(&d).map(|(a, b)| a + b).collect::<Vec<_>>());
            assert!(zp.windows(2).all(|w| w[0] <= w[1]));
            assert!(sq(&v, &zp) >= sq(&v, &z) - 1e-12);
            let zpn = pav_isotonic_nonneg(&zn.iter().zip(&d).map(|(a, b)| a + b).collect::<Vec<_>>());
            assert!(zpn.iter().all(|&x| x >= 0.0));
            assert!(sq(&v, &zpn) >= sq(&v, &zn) - 1e-12);
        }
    }
}

#[test]
fn tv_collapses_to_mean_for_huge_lambda() {
    let mut r = rng(17);
    for n in [2, 5, 50, 500] {
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-4.0..7.0)).collect();
        let range = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / n as f64;
        let z = tv_prox(&v, 10.0 * n as f64 * range).unwrap();
        assert!(z.iter().all(|x| (x - mean).abs() < 1e-8));
    }
}

#[test]
fn error_cases() {
    assert!(center(&[]).is_err());
    assert!(tv_prox(&[1.0, 2.0], -0.1).is_err());
    assert!(oneside_tv_prox(&[1.0, 2.0], -0.1).is_err());
    assert!(tv_prox(&[1.0, 2.0], f64::NAN).is_err());
}

fn time_tv(n: usize) -> f64 {
    let mut r = rng(n as u64);
    let v: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    (0..5)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(tv_prox(&v, 0.3).unwrap());
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn tv_prox_scales_linearly() {
    let t1 = time_tv(100_000);
    let t2 = time_tv(200_000);
    assert!(t2 <= 3.0 * t1, "n=1e5: {t1:.4}s, n=2e5: {t2:.4}s");
}

fn vec_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq(a, b).sqrt()
}

proptest! {
    #[test]
    fn prox_maps_are_nonexpansive((a, b) in vec_pair(40), lam in 0.0..3.0f64) {
        let d = dist(&a, &b) * (1.0 + 1e-12) + 1e-12;
        prop_assert!(dist(&tv_prox(&a, lam).unwrap(), &tv_prox(&b, lam).unwrap()) <= d);
        prop_assert!(dist(&oneside_tv_prox(&a, lam).unwrap(), &oneside_tv_prox(&b, lam).unwrap()) <= d);
        prop_assert!(dist(&pav_isotonic(&a), &pav_isotonic(&b)) <= d);
        prop_assert!(dist(&pav_isotonic_nonneg(&a), &pav_isotonic_nonneg(&b)) <= d);
        prop_assert!(dist(&center(&a).unwrap(), &center(&b).unwrap()) <= d);
        prop_assert!(dist(&block_soft_threshold(&a, lam), &block_soft_threshold(&b, lam)) <= d);
    }

    #[test]
    fn tv_prox_preserves_mean(a in prop::collection::vec(-10.0..10.0f64, 1..60), lam in 0.0..5.0f64) {
        let z = tv_prox(&a, lam).unwrap();
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mz = z.iter().sum::<f64>() / z.len() as f64;
        prop_assert!((ma - mz).abs() < 1e-9);
        prop_assert!(total_variation(&z) <= total_variation(&a) + 1e-9);
    }

    #[test]
    fn pav_output_is_isotonic(a in prop::collection::vec(-10.0..10.0f64, 1..60)) {
        let z = pav_isotonic(&a);
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
        let s: f64 = a.iter().sum::<f64>() - z.iter().sum::<f64>();
        prop_assert!(s.abs() < 1e-9);
    }

    #[test]
    fn center_has_zero_mean(a in prop::collection::vec(-1e3..1e3f64, 1..60)) {
        let z = center(&a).unwrap();
        prop_assert!((z.iter().sum::<f64>() / z.len() as f64).abs() < 1e-9);
    }
}
