//! Regularized Maronna M-estimators of covariance.
//!
//! The crate covers four layers:
//!
//! * [`weights`]: the scalar calculus of the M-Tyler and M-Huber weight functions.
//! * [`sampling`] and [`estimators`]: synthetic (possibly contaminated) data and
//!   the matrix estimators computed from it.
//! * [`asymptotics`]: deterministic equivalents of those estimators in the
//!   regime where dimension and sample size grow together.
//! * [`calibration`] and [`robustness`]: choosing the shrinkage level and
//!   measuring sensitivity to outliers.
//!
//! [`experiments`] turns all of the above into declarative sweeps used by the
//! `regmest` binary.

pub mod asymptotics;
pub mod calibration;
pub mod linalg;
pub mod matrix_io;
pub mod robustness;
pub mod estimators;
pub mod experiments;
pub mod sampling;
pub mod weights;

pub use weights::{
    min_admissible_rho, DerivativeMode, EquivalentWeight, RegularizedContext, Side, WeightError, WeightFunction,
    WeightKind,
};
