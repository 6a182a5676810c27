//! Shared helpers for integration tests: brute-force oracles and small
//! random instance generators.
#![allow(dead_code)]

pub mod cli;
pub mod criteria;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    use rand_distr::{Distribution, Normal};
    let d = Normal::new(0.0, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Strictly increasing knots with gaps in [0.5, 1.5].
pub fn knots(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    let mut cur = rng.random_range(-1.0..1.0);
    for _ in 0..n {
        x.push(cur);
        cur += rng.random_range(0.5..1.5);
    }
    x
}

pub fn gaps_of(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}
