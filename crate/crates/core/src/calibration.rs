//! Choosing the shrinkage level.
//!
//! Trace-normalized, every regularized M-estimator behaves like the RSCM with
//! the mapped parameter `rho_bar = rho / ((1 - rho) v(gamma) + rho)`, so the
//! quadratic-loss optimum is the same for all of them:
//! `rho* = c / (c + M2 - 1)` and `L* = c (M2 - 1) / (c + M2 - 1) M1^2`.

use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticError};
use crate::estimators::{self, EstimatorError, EstimatorResult, SolverOptions, Start};
use crate::linalg::{self, CMatrix};
use crate::sampling::{CovarianceModel, Dataset, SamplingError};
use crate::weights::{min_admissible_rho, RegularizedContext, WeightError, WeightFunction};

/// Left end of the bracket used when inverting the `rho -> rho_bar` map.
pub const RHO_FLOOR: f64 = 1e-8;
/// Left end of the bracket searched for the data-driven `rho`.
pub const RHO_HAT_FLOOR: f64 = 1e-3;
const MAX_RHO_HAT_EVALUATIONS: usize = 40;
const JENSEN_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Asymptotic(#[from] AsymptoticError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("matrix has non-positive trace")]
    ZeroTrace,
    #[error("second spectral moment {m2} is below the squared first moment, which is impossible")]
    Jensen { m2: f64 },
    #[error("no rho in ({lo:.3e}, 1] maps to rho_bar = {target}")]
    NoPreimage { target: f64, lo: f64 },
    #[error("invalid argument: {0}")]
    Parameter(String),
}

/// How the data-driven root search ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RootStatus {
    Converged,
    /// No sign change: the left side already exceeds the target at the lower bracket end.
    LowerBoundary,
    /// The target is at least 1 (or the denominator is not positive); `rho = 1`.
    UpperBoundary,
    /// The evaluation budget ran out; the best bracket point is returned.
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub rho_star: f64,
    #[serde(rename = "L_star")]
    pub l_star: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    pub rho_hat: Option<f64>,
    pub rho_bar_of_rho_hat: Option<f64>,
    pub status: Option<RootStatus>,
    pub evaluations: usize,
    /// The clean-data formula was applied to a dataset that contains outliers.
    pub contaminated_input: bool,
}

impl CalibrationReport {
    fn from_moments(c: f64, m1: f64, m2: f64) -> Self {
        let excess = m2 / (m1 * m1) - 1.0;
        let (rho_star, l_star) = if excess <= JENSEN_SLACK { (1.0, 0.0) } else { (c / (c + excess), c * excess / (c + excess)) };
        Self {
            rho_star,
            l_star,
            m1,
            m2,
            rho_hat: None,
            rho_bar_of_rho_hat: None,
            status: None,
            evaluations: 0,
            contaminated_input: false,
        }
    }
}

fn trace_normalized(m: &CMatrix) -> Result<CMatrix, CalibrationError> {
    let tr = linalg::normalized_trace(m);
    if !(tr > 0.0) {
        return Err(CalibrationError::ZeroTrace);
    }
    Ok(m / linalg::Cplx::new(tr, 0.0))
}

/// `(1/N) |A / ((1/N) tr A) - C / ((1/N) tr C)|_F^2`.
pub fn quadratic_loss(a: &CMatrix, c: &CovarianceModel) -> Result<f64, CalibrationError> {
    if a.nrows() != c.dim() || a.ncols() != c.dim() {
        return Err(SamplingError::DimensionMismatch(a.nrows(), c.dim()).into());
    }
    let diff = trace_normalized(a)? - trace_normalized(c.matrix())?;
    Ok(linalg::frobenius(&diff).powi(2) / c.dim() as f64)
}

/// `rho_bar = rho / ((1 - rho) v(gamma) + rho)` with `gamma` solved on `C`.
pub fn rho_to_rho_bar(w: &WeightFunction, ctx: RegularizedContext, c_model: &CovarianceModel) -> Result<f64, CalibrationError> {
    let rho = ctx.rho();
    if !(rho > 0.0) {
        return Err(CalibrationError::Parameter(format!("rho = {rho} must lie in (0, 1]")));
    }
    let state = asymptotics::solve_gamma(w, ctx, c_model)?;
    Ok(rho / ((1.0 - rho) * state.v_gamma + rho))
}

/// Smallest `rho` with `rho_to_rho_bar(rho) = rho_bar`.
///
/// The map is continuous on the admissible range, so a grid scan from the
/// left end locates the first sign change, which bisection then refines.
pub fn rho_bar_to_rho(rho_bar: f64, w: &WeightFunction, c: f64, c_model: &CovarianceModel) -> Result<f64, CalibrationError> {
    if !(rho_bar > 0.0 && rho_bar <= 1.0) {
        return Err(CalibrationError::Parameter(format!("rho_bar = {rho_bar} must lie in (0, 1]")));
    }
    if rho_bar == 1.0 {
        return Ok(1.0);
    }
    let lo = lower_bracket(w, c, RHO_FLOOR);
    let gap = |rho: f64| -> Result<f64, CalibrationError> { Ok(rho_to_rho_bar(w, RegularizedContext::new(rho, c)?, c_model)? - rho_bar) };
    const GRID: usize = 200;
    let mut prev = (lo, gap(lo)?);
    if prev.1 >= 0.0 {
        return if prev.1 == 0.0 { Ok(lo) } else { Err(CalibrationError::NoPreimage { target: rho_bar, lo }) };
    }
    for k in 1..=GRID {
        // Geometric spacing resolves the steep part of the map near the left end.
        let rho = lo * (1.0 / lo).powf(k as f64 / GRID as f64);
        let cur = (rho, gap(rho)?);
        if cur.1 >= 0.0 {
            let (mut a, mut b) = (prev.0, cur.0);
            while b - a > 1e-15 * b {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if gap(mid)? < 0.0 {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Ok(b);
        }
        prev = cur;
    }
    Err(CalibrationError::NoPreimage { target: rho_bar, lo })
}

/// Just above the admissibility threshold, and at least `floor`.
fn lower_bracket(w: &WeightFunction, c: f64, floor: f64) -> f64 {
    let rho0 = min_admissible_rho(w, c);
    if rho0 > 0.0 {
        (rho0 + floor.max(1e-9 * rho0)).max(floor)
    } else {
        floor
    }
}

/// `rho*` and `L*` from the finite spectrum of `C`.
///
/// The loss compares trace-normalized matrices, so the formulas use the
/// moments of `C / ((1/N) tr C)`: `L*` is reported in those units, and the
/// report carries the raw `M1` and `M2`.
pub fn oracle_optimum(c: f64, c_model: &CovarianceModel) -> Result<CalibrationReport, CalibrationError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(CalibrationError::Parameter(format!("aspect ratio {c} must be positive")));
    }
    let (m1, m2) = (c_model.m1(), c_model.m2());
    if !(m1 > 0.0) {
        return Err(CalibrationError::ZeroTrace);
    }
    if m2 < m1 * m1 * (1.0 - JENSEN_SLACK) {
        return Err(CalibrationError::Jensen { m2: m2 / (m1 * m1) });
    }
    Ok(CalibrationReport::from_moments(c, m1, m2.max(m1 * m1)))
}

/// `(1/N) tr[((1/n) sum_i y_i y_i^H / ((1/N) |y_i|^2))^2]`.
fn normalized_sample_moment(y: &Dataset) -> Result<f64, CalibrationError> {
    let dim = y.dim() as f64;
    let weights: Vec<f64> = y
        .samples()
        .column_iter()
        .map(|col| {
            let energy = col.norm_squared() / dim;
            if energy > 0.0 { Ok(1.0 / energy) } else { Err(CalibrationError::Parameter("a sample is identically zero".into())) }
        })
        .collect::<Result<_, _>>()?;
    let s = linalg::weighted_gram(y.samples(), &weights, 1.0 / y.len() as f64, 0.0);
    Ok(linalg::frobenius(&s).powi(2) / dim)
}

pub struct RhoHatFit {
    pub report: CalibrationReport,
    /// The estimator at `rho_hat`.
    pub estimate: EstimatorResult,
}

/// Data-driven shrinkage: solves
/// `rho / ((1/N) tr C_hat(rho)) = c / ((1/N) tr S^2 - 1)` where `S` is the SCM
/// of the norm-normalized samples.
///
/// The left side equals `rho_bar` in the limit and the right side estimates
/// `rho*`, so the report's `rho_star`, `M2` and `L_star` are the estimated
/// quantities (with `M1 = 1`: the formula is scale free). The search runs a
/// regula falsi (Illinois) on `(max(rho0, 1e-3), 1]` with at most 40 solves,
/// each warm-started from the previous fixed point.
pub fn estimate_rho_hat(y: &Dataset, w: &WeightFunction, opts: &SolverOptions) -> Result<RhoHatFit, CalibrationError> {
    let c = y.aspect_ratio();
    let excess = normalized_sample_moment(y)? - 1.0;
    let target = if excess > 0.0 { c / excess } else { f64::INFINITY };
    let mut report = if excess > 0.0 {
        CalibrationReport::from_moments(c, 1.0, (excess - c).max(0.0) + 1.0)
    } else {
        CalibrationReport::from_moments(c, 1.0, 1.0)
    };
    report.contaminated_input = y.n_outlier() > 0;
    if report.contaminated_input {
        log::warn!("rho_hat uses the clean-data formula on a dataset with {} outliers", y.n_outlier());
    }

    let evaluations = std::cell::Cell::new(0usize);
    let mut warm: Option<Vec<f64>> = None;
    let mut eval = |rho: f64| -> Result<(f64, EstimatorResult), CalibrationError> {
        evaluations.set(evaluations.get() + 1);
        let start = warm.as_deref().map_or(Start::Options, Start::Weights);
        let fit = estimators::regularized_maronna_from(y, w, rho, opts, start)?;
        warm = Some(fit.weights.clone());
        let lhs = rho / linalg::normalized_trace(&fit.estimate);
        Ok((lhs - target, fit))
    };

    let finish = |mut report: CalibrationReport, rho: f64, fit: EstimatorResult, status, evaluations| {
        report.rho_hat = Some(rho);
        report.rho_bar_of_rho_hat = Some(rho / linalg::normalized_trace(&fit.estimate));
        report.status = Some(status);
        report.evaluations = evaluations;
        RhoHatFit { report, estimate: fit }
    };

    if target >= 1.0 {
        let (_, fit) = eval(1.0)?;
        return Ok(finish(report, 1.0, fit, RootStatus::UpperBoundary, evaluations.get()));
    }
    let lo = lower_bracket(w, c, RHO_HAT_FLOOR);
    let (f_lo, fit_lo) = eval(lo)?;
    if f_lo >= 0.0 {
        log::warn!("rho_hat equation has no sign change on ({lo:.3e}, 1]; returning the lower end");
        return Ok(finish(report, lo, fit_lo, RootStatus::LowerBoundary, evaluations.get()));
    }
    // F(1) = 1 - target > 0.
    let (mut a, mut fa) = (lo, f_lo);
    let (mut b, mut fb) = (1.0, 1.0 - target);
    let mut best = (lo, f_lo, fit_lo);
    let mut side = 0i8;
    let mut status = RootStatus::Budget;
    while evaluations.get() < MAX_RHO_HAT_EVALUATIONS {
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let (fx, fit) = eval(x)?;
        let done = fx.abs() <= 1e-12 || (b - a) <= 1e-10 * b;
        if fx.abs() < best.1.abs() {
            best = (x, fx, fit);
        }
        if done {
            status = RootStatus::Converged;
            break;
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        if (b - a) <= 1e-10 * b {
            status = RootStatus::Converged;
            break;
        }
    }
    let (rho, _, fit) = best;
    Ok(finish(report, rho, fit, status, evaluations.get()))
}
