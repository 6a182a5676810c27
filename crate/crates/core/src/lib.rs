//! Sparse shape-constrained additive regression.
//!
//! Fits `y ~ mu + sum_j f_j(x_j)` where each component is isotonic, convex,
//! convex-increasing, of bounded variation or a penalized difference of
//! convex functions, with a group penalty that zeroes whole components.
//! Fitting is block coordinate descent whose block updates are exact
//! compositions of structured proximal maps.
//!
//! ```
//! use shapefit::{fit, Dataset, FitConfig, ShapeSpec};
//!
//! let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
//! let noise: Vec<f64> = (0..40).map(|i| ((i * 7) % 5) as f64 / 50.0).collect();
//! let y: Vec<f64> = x.iter().zip(&noise).map(|(v, e)| (v - 0.5).abs() + e).collect();
//! let data = Dataset::new(vec![x, noise], y).unwrap();
//! let model = fit(&data, &FitConfig::new(ShapeSpec::dc(0.05, 0.5))).unwrap();
//! assert!(model.active_set().contains(&0));
//! ```

pub mod backfit;
pub mod cli;
pub mod component;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod prox;

pub use backfit::{
    fit, fit_prepared, objective, shape_violation, AdditiveFit, ComponentFit, Dataset, FitConfig,
    Prediction, PreparedData, SweepOrder,
};
pub use component::{
    ac_seminorm, apply_a, apply_a_transpose, dc_seminorm, inner_prox_solve, inner_prox_solve_with, operator_norm_sq,
    solve_subproblem, InnerOptions, InnerOutcome, ShapeMode, ShapeSpec, SlopeParam,
    SortedCovariate, SubproblemOutcome, TieHandling,
};
pub use error::{Error, Result};
pub use prox::{
    block_soft_threshold, center, oneside_tv_prox, pav_isotonic, pav_isotonic_nonneg, tv_prox,
    PenaltyScale,
};
