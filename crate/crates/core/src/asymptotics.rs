//! Deterministic equivalents of the M-estimators.
//!
//! For large `N` and `n` with `N/n -> c`, the regularized estimator behaves
//! like a weighted SCM where every legitimate sample carries the weight
//! `v(gamma)` and every outlier `v(alpha)`. This module solves for `gamma`
//! and `alpha` on the empirical spectrum of the supplied covariance models
//! and builds the equivalent matrices.
//!
//! All systems are written with `f(x) = phi(g^{-1}(x))`, which equals
//! `x v(x) / (1 + (1 - rho) c x v(x))`. With `k(x) = (1 - rho) f(x) / x`,
//!
//! ```text
//! B(q0, q1) = (1 - eps) k(q0) C + eps k(q1) D + rho I
//! gamma = (1/N) tr C B^{-1},   alpha = (1/N) tr D B^{-1}
//! ```

use thiserror::Error;

use crate::estimators;
use crate::linalg::{self, CMatrix};
use crate::sampling::{outlier_count, CovarianceModel, Dataset, SamplingError};
use crate::weights::{EquivalentWeight, RegularizedContext, WeightError, WeightFunction};

/// Relative plug-back residual every solver must reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000;
const STEP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AsymptoticError {
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("covariance spectrum is degenerate (all eigenvalues zero)")]
    DegenerateSpectrum,
    #[error("no sign change of the gamma equation on [{lo:.3e}, {hi:.3e}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("fixed-point iteration stopped after {iterations} steps with residual {residual:.3e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("a matrix in the fixed-point system lost positive definiteness")]
    Singular,
    #[error("state does not match the data: {0}")]
    Mismatch(String),
}

/// Relative plug-back residuals `|h(q) - q| / q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals {
    pub gamma: f64,
    pub alpha: Option<f64>,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.gamma.max(self.alpha.unwrap_or(0.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AsymptoticState {
    pub gamma: f64,
    pub alpha: Option<f64>,
    pub v_gamma: f64,
    pub v_alpha: Option<f64>,
    pub rho: f64,
    pub c: f64,
    pub eps: f64,
    pub weight: WeightFunction,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl AsymptoticState {
    fn build(
        ew: &EquivalentWeight,
        eps: f64,
        gamma: f64,
        alpha: Option<f64>,
        residuals: Residuals,
        iterations: usize,
    ) -> Self {
        let ctx = ew.context();
        Self {
            gamma,
            alpha,
            v_gamma: ew.v_raw(gamma),
            v_alpha: alpha.map(|a| ew.v_raw(a)),
            rho: ctx.rho(),
            c: ctx.c(),
            eps,
            weight: *ew.weight(),
            residuals,
            iterations,
        }
    }

    /// Weight of the SCM in the equivalent, `(1 - rho) v(gamma)`.
    pub fn scm_weight(&self) -> f64 {
        (1.0 - self.rho) * self.v_gamma
    }
}

/// `k(x) = (1 - rho) f(x) / x`, the coefficient of a covariance in `B`.
pub(crate) fn coupling(ew: &EquivalentWeight, x: f64) -> f64 {
    (1.0 - ew.context().rho()) * ew.phi_of_g_inverse_raw(x) / x
}

/// `diag(U^H D U)` in the eigenbasis `U` of `C`.
pub(crate) fn diagonal_in_basis(c: &CovarianceModel, d: &CovarianceModel) -> Vec<f64> {
    let u = c.eigenvectors();
    let du = linalg::matmul(d.matrix(), u);
    (0..u.ncols()).map(|i| u.column(i).iter().zip(du.column(i).iter()).map(|(a, b)| (a.conj() * b).re).sum()).collect()
}

fn check_pair(c: &CovarianceModel, d: &CovarianceModel) -> Result<(), AsymptoticError> {
    if c.dim() != d.dim() {
        return Err(SamplingError::DimensionMismatch(c.dim(), d.dim()).into());
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), AsymptoticError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(AsymptoticError::Precondition(format!("contamination level {eps} must lie in [0, 1)")));
    }
    Ok(())
}

/// Non-regularized regime: `0 < c < 1` and `1 < phi_inf < 1/c`.
pub fn check_non_regularized_regime(w: &WeightFunction, c: f64) -> Result<(), AsymptoticError> {
    if !(c > 0.0 && c < 1.0) {
        return Err(AsymptoticError::Precondition(format!("aspect ratio c = {c} must lie in (0, 1)")));
    }
    let phi_inf = w.phi_infinity();
    if !(phi_inf > 1.0 && phi_inf < 1.0 / c) {
        return Err(AsymptoticError::Precondition(format!("phi_inf = {phi_inf} must lie in (1, 1/c = {})", 1.0 / c)));
    }
    Ok(())
}

/// `gamma^0 = phi^{-1}(1) / (1 - c)`, the non-regularized clean solution.
fn gamma_non_regularized(w: &WeightFunction, c: f64) -> Result<f64, AsymptoticError> {
    Ok(w.phi_inverse(1.0)? / (1.0 - c))
}

/// Solves the clean equation for `gamma`.
///
/// For `rho > 0` the left side of
/// `(1/N) sum_i lambda_i / ((1 - rho) f(gamma) lambda_i + rho gamma) = 1`
/// decreases strictly in `gamma`, and bisection runs on
/// `[1e-12, lambda_max / rho + 1]` until the bracket no longer splits.
/// `rho = 0` (only for `c < 1`) gives `gamma = phi^{-1}(1) / (1 - c)`.
pub fn solve_gamma(w: &WeightFunction, ctx: RegularizedContext, c_model: &CovarianceModel) -> Result<AsymptoticState, AsymptoticError> {
    let ew = EquivalentWeight::new(*w, ctx)?;
    let lambdas = c_model.eigenvalues();
    if lambdas.iter().all(|&l| l == 0.0) {
        return Err(AsymptoticError::DegenerateSpectrum);
    }
    let rho = ctx.rho();
    let gamma_equation = |gamma: f64| -> f64 {
        let f = (1.0 - rho) * ew.phi_of_g_inverse_raw(gamma);
        lambdas.iter().map(|&l| l / (f * l + rho * gamma)).sum::<f64>() / lambdas.len() as f64 - 1.0
    };
    if rho == 0.0 {
        check_non_regularized_regime(w, ctx.c())?;
        let gamma = gamma_non_regularized(w, ctx.c())?;
        let residuals = Residuals { gamma: gamma_equation(gamma).abs(), alpha: None };
        return Ok(AsymptoticState::build(&ew, 0.0, gamma, None, residuals, 0));
    }
    let (mut lo, mut hi) = (1e-12, c_model.max_eigenvalue() / rho + 1.0);
    let (f_lo, f_hi) = (gamma_equation(lo), gamma_equation(hi));
    if !(f_lo > 0.0 && f_hi <= 0.0) {
        return Err(AsymptoticError::NoSignChange { lo, hi });
    }
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || iterations >= 2 * MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        if gamma_equation(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gamma = if gamma_equation(lo).abs() <= gamma_equation(hi).abs() { lo } else { hi };
    let residuals = Residuals { gamma: gamma_equation(gamma).abs(), alpha: None };
    Ok(AsymptoticState::build(&ew, 0.0, gamma, None, residuals, iterations))
}

/// `(1 - rho) v(gamma) SCM + rho I`.
pub fn equivalent_clean(y: &Dataset, state: &AsymptoticState) -> Result<CMatrix, AsymptoticError> {
    check_aspect(y, state)?;
    Ok(estimators::shrunk_scm(y, state.v_gamma, state.rho))
}

fn check_aspect(y: &Dataset, state: &AsymptoticState) -> Result<(), AsymptoticError> {
    let c = y.aspect_ratio();
    if (c - state.c).abs() > 1e-12 * c {
        return Err(AsymptoticError::Mismatch(format!("data aspect ratio {c} differs from the state's {}", state.c)));
    }
    Ok(())
}

/// `(1 - rho) [v(gamma) sum_legit y y^H + v(alpha) sum_out a a^H] / n + rho I`.
pub fn equivalent_contaminated(y: &Dataset, state: &AsymptoticState) -> Result<CMatrix, AsymptoticError> {
    check_aspect(y, state)?;
    let expected = outlier_count(y.len(), state.eps);
    if expected != y.n_outlier() {
        return Err(AsymptoticError::Mismatch(format!(
            "dataset has {} outliers, eps = {} implies {expected}",
            y.n_outlier(),
            state.eps
        )));
    }
    let v_alpha = match (state.v_alpha, y.n_outlier()) {
        (Some(v), _) => v,
        (None, 0) => 0.0,
        (None, _) => return Err(AsymptoticError::Mismatch("state has no alpha but the data has outliers".into())),
    };
    let mut weights = vec![state.v_gamma; y.len()];
    weights[y.n_legit()..].iter_mut().for_each(|w| *w = v_alpha);
    Ok(linalg::weighted_gram(y.samples(), &weights, (1.0 - state.rho) / y.len() as f64, state.rho))
}

/// `(gamma^0, alpha^0)`, the `eps -> 0` limits.
///
/// With `rho = 0`: `gamma^0 = phi^{-1}(1)/(1 - c)` and
/// `alpha^0 = gamma^0 (1/N) tr(C^{-1} D)`. With `rho > 0`: `gamma^0` from
/// [`solve_gamma`] and `alpha^0 = (1/N) tr D A^{-1}`, `A = k(gamma^0) C + rho I`.
pub fn limits_eps_zero(
    w: &WeightFunction,
    ctx: RegularizedContext,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
) -> Result<(f64, f64), AsymptoticError> {
    check_pair(c_model, d_model)?;
    if ctx.rho() == 0.0 {
        check_non_regularized_regime(w, ctx.c())?;
        let gamma0 = gamma_non_regularized(w, ctx.c())?;
        return Ok((gamma0, gamma0 * c_model.trace_ratio(d_model)?));
    }
    let state = solve_gamma(w, ctx, c_model)?;
    let ew = EquivalentWeight::new(*w, ctx)?;
    let alpha0 = alpha_from_gamma(&ew, state.gamma, c_model, &diagonal_in_basis(c_model, d_model));
    Ok((state.gamma, alpha0))
}

/// `(1/N) tr D (k(gamma) C + rho I)^{-1}` in the eigenbasis of `C`.
fn alpha_from_gamma(ew: &EquivalentWeight, gamma: f64, c_model: &CovarianceModel, d_diag: &[f64]) -> f64 {
    let k = coupling(ew, gamma);
    let rho = ew.context().rho();
    let n = d_diag.len() as f64;
    c_model.eigenvalues().iter().zip(d_diag).map(|(&l, &dd)| dd / (k * l + rho)).sum::<f64>() / n
}

fn relative_gap(h: f64, q: f64) -> f64 {
    (h - q).abs() / q
}

/// Runs `q <- h(q)` from a feasible point (`h(q) <= q`). Iterates of a
/// standard interference function from such a point decrease monotonically;
/// if they stop doing so, the remaining steps are damped by one half.
fn interference_iteration(
    mut h: impl FnMut(f64, f64) -> Result<(f64, f64), AsymptoticError>,
    start: (f64, f64),
) -> Result<((f64, f64), Residuals, usize), AsymptoticError> {
    let (mut q0, mut q1) = start;
    let mut damping = 1.0;
    for it in 1..=MAX_ITERATIONS {
        let (h0, h1) = h(q0, q1)?;
        let residuals = Residuals { gamma: relative_gap(h0, q0), alpha: Some(relative_gap(h1, q1)) };
        if (h0 - q0).abs() <= STEP_TOLERANCE * q0.max(1.0) && (h1 - q1).abs() <= STEP_TOLERANCE * q1.max(1.0) {
            return Ok(((q0, q1), residuals, it));
        }
        if damping == 1.0 && (h0 > q0 * (1.0 + 1e-14) || h1 > q1 * (1.0 + 1e-14)) {
            log::warn!("interference iterates stopped decreasing at step {it}; damping");
            damping = 0.5;
        }
        q0 += damping * (h0 - q0);
        q1 += damping * (h1 - q1);
        if !(q0 > 0.0 && q1 > 0.0 && q0.is_finite() && q1.is_finite()) {
            return Err(AsymptoticError::NonConvergence { iterations: it, residual: residuals.max() });
        }
    }
    let (h0, h1) = h(q0, q1)?;
    Err(AsymptoticError::NonConvergence { iterations: MAX_ITERATIONS, residual: relative_gap(h0, q0).max(relative_gap(h1, q1)) })
}

/// Solves the contaminated system without shrinkage (`0 < c < 1`,
/// `1 < phi_inf < 1/c`, `C` positive definite).
///
/// With `M = C^{-1/2} D C^{-1/2}` of eigenvalues `mu_i`, the system is
/// `q0 = (1/N) sum 1/(a + b mu_i)`, `q1 = (1/N) sum mu_i/(a + b mu_i)` with
/// `a = (1 - eps) f(q0)/q0`, `b = eps f(q1)/q1`. The iteration starts from
/// `q0 = f^{-1}(1) max(1, 1/r)`, `q1 = r q0`, where `r` solves
/// `(1/N) sum 1/(1 - eps + eps mu_i / r) = 1`; that point is feasible because
/// `f >= 1` above `f^{-1}(1)`.
pub fn solve_gamma_alpha_noreg(
    w: &WeightFunction,
    c: f64,
    eps: f64,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
) -> Result<AsymptoticState, AsymptoticError> {
    check_pair(c_model, d_model)?;
    check_eps(eps)?;
    check_non_regularized_regime(w, c)?;
    let ctx = RegularizedContext::non_regularized(c)?;
    let ew = EquivalentWeight::new(*w, ctx)?;
    if c_model.min_eigenvalue() <= 0.0 {
        return Err(SamplingError::Singular.into());
    }
    if eps == 0.0 {
        let (gamma, alpha) = limits_eps_zero(w, ctx, c_model, d_model)?;
        let residuals = Residuals { gamma: relative_gap(1.0 / coupling(&ew, gamma), gamma), alpha: Some(0.0) };
        return Ok(AsymptoticState::build(&ew, 0.0, gamma, Some(alpha), residuals, 0));
    }
    let whitening = linalg::spectral_function(c_model.eigenvalues(), c_model.eigenvectors(), |l| 1.0 / l.sqrt());
    let mut m = linalg::matmul(&linalg::matmul(&whitening, d_model.matrix()), &whitening);
    linalg::symmetrize(&mut m);
    let mu: Vec<f64> = linalg::hermitian_eigenvalues(&m).into_iter().map(|x| x.max(0.0)).collect();
    let n = mu.len() as f64;

    let balance = |r: f64| mu.iter().map(|&m| 1.0 / (1.0 - eps + eps * m / r)).sum::<f64>() / n - 1.0;
    let (mut lo, mut hi) = (1.0, 1.0);
    for _ in 0..2000 {
        if balance(lo) < 0.0 {
            break;
        }
        lo *= 0.5;
    }
    for _ in 0..2000 {
        if balance(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if !(balance(lo) < 0.0 && balance(hi) > 0.0) {
        return Err(AsymptoticError::Precondition("no feasible starting point: D is too degenerate relative to C".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = hi;
    let f_inv_one = ew.g(w.phi_inverse(1.0)?)?;
    let q0 = f_inv_one * (1.0f64).max(1.0 / r);
    let start = (q0, q0 * r);

    let h = |q0: f64, q1: f64| {
        let a = (1.0 - eps) * coupling(&ew, q0);
        let b = eps * coupling(&ew, q1);
        let (mut s0, mut s1) = (0.0, 0.0);
        for &m in &mu {
            let denom = a + b * m;
            s0 += 1.0 / denom;
            s1 += m / denom;
        }
        Ok((s0 / n, s1 / n))
    };
    let ((gamma, alpha), residuals, iterations) = interference_iteration(h, start)?;
    Ok(AsymptoticState::build(&ew, eps, gamma, Some(alpha), residuals, iterations))
}

/// Solves the contaminated system with shrinkage `rho`.
///
/// `eps = 0` reduces to [`solve_gamma`] with `alpha` from the limit formula;
/// `rho = 0` (for `c < 1`) to [`solve_gamma_alpha_noreg`]. Otherwise the
/// iteration starts from `q = ((1/N) tr C, (1/N) tr D) / rho`, which is
/// feasible since `B >= rho I`.
pub fn solve_gamma_alpha_reg(
    w: &WeightFunction,
    ctx: RegularizedContext,
    eps: f64,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
) -> Result<AsymptoticState, AsymptoticError> {
    check_pair(c_model, d_model)?;
    check_eps(eps)?;
    let rho = ctx.rho();
    if rho == 0.0 {
        return solve_gamma_alpha_noreg(w, ctx.c(), eps, c_model, d_model);
    }
    let ew = EquivalentWeight::new(*w, ctx)?;
    if eps == 0.0 {
        let clean = solve_gamma(w, ctx, c_model)?;
        let alpha = alpha_from_gamma(&ew, clean.gamma, c_model, &diagonal_in_basis(c_model, d_model));
        let residuals = Residuals { gamma: clean.residuals.gamma, alpha: Some(0.0) };
        return Ok(AsymptoticState::build(&ew, 0.0, clean.gamma, Some(alpha), residuals, clean.iterations));
    }
    let dim = c_model.dim() as f64;
    let (cm, dm) = (c_model.matrix(), d_model.matrix());
    let h = |q0: f64, q1: f64| {
        let a = (1.0 - eps) * coupling(&ew, q0);
        let b = eps * coupling(&ew, q1);
        let mut bm = cm * linalg::Cplx::new(a, 0.0) + dm * linalg::Cplx::new(b, 0.0);
        for i in 0..bm.nrows() {
            bm[(i, i)].re += rho;
        }
        let tr = linalg::inverse_traces(&bm, &[cm, dm]).ok_or(AsymptoticError::Singular)?;
        Ok((tr[0] / dim, tr[1] / dim))
    };
    let start = (c_model.m1() / rho, d_model.m1() / rho);
    let ((gamma, alpha), residuals, iterations) = interference_iteration(h, start)?;
    Ok(AsymptoticState::build(&ew, eps, gamma, Some(alpha), residuals, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_clean, sample_contaminated, ScalarField};
    use crate::weights::WeightKind;

    fn toeplitz(n: usize, b: f64) -> CovarianceModel {
        CovarianceModel::toeplitz(n, b).unwrap()
    }

    /// Dense plug-back of the system, independent of the solvers' shortcuts.
    fn dense_residuals(state: &AsymptoticState, c: &CovarianceModel, d: &CovarianceModel) -> (f64, f64) {
        let ctx = RegularizedContext::new(state.rho, state.c).unwrap();
        let ew = EquivalentWeight::new(state.weight, ctx).unwrap();
        let alpha = state.alpha.unwrap();
        let kg = (1.0 - state.rho) * state.v_gamma / (1.0 + (1.0 - state.rho) * state.c * state.v_gamma * state.gamma);
        let ka = (1.0 - state.rho) * ew.v(alpha).unwrap() / (1.0 + (1.0 - state.rho) * state.c * ew.v(alpha).unwrap() * alpha);
        let mut b = c.matrix() * linalg::Cplx::new((1.0 - state.eps) * kg, 0.0)
            + d.matrix() * linalg::Cplx::new(state.eps * ka, 0.0)
            + linalg::identity(c.dim()) * linalg::Cplx::new(state.rho, 0.0);
        linalg::symmetrize(&mut b);
        let inv = b.try_inverse().unwrap();
        let n = c.dim() as f64;
        let g = linalg::trace_re(&(c.matrix() * &inv)) / n;
        let a = linalg::trace_re(&(d.matrix() * &inv)) / n;
        ((g - state.gamma).abs() / state.gamma, (a - alpha).abs() / alpha)
    }

    #[test]
    fn rho_one_gives_first_moment() {
        let c = toeplitz(40, 0.7);
        let w = WeightFunction::m_tyler(0.5, 0.1).unwrap();
        let s = solve_gamma(&w, RegularizedContext::new(1.0, 2.0).unwrap(), &c).unwrap();
        assert!((s.gamma - 1.0).abs() < 1e-12);
        let d = CovarianceModel::diagonal(&vec![2.0; 40]).unwrap();
        let s = solve_gamma_alpha_reg(&w, RegularizedContext::new(1.0, 2.0).unwrap(), 0.1, &c, &d).unwrap();
        assert!((s.gamma - 1.0).abs() < 1e-10);
        assert!((s.alpha.unwrap() - 2.0).abs() < 1e-10);
    }

    #[test]
    fn identity_covariance_against_scalar_bisection() {
        // C = I: 1 / ((1 - rho) f(gamma) + rho gamma) = 1.
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 0.8, 0.1).unwrap();
            for (rho, c) in [(0.3, 1.5), (0.7, 0.5), (0.05, 0.3)] {
                let ctx = RegularizedContext::new(rho, c).unwrap();
                let ew = EquivalentWeight::new(w, ctx).unwrap();
                let eq = |g: f64| (1.0 - rho) * ew.phi_of_g_inverse(g).unwrap() + rho * g - 1.0;
                let (mut lo, mut hi) = (0.0, 1.0 / rho + 1.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if eq(mid) < 0.0 { lo = mid } else { hi = mid }
                }
                let s = solve_gamma(&w, ctx, &toeplitz(7, 0.0)).unwrap();
                assert!((s.gamma - lo).abs() <= 1e-10 * lo, "{kind:?} {rho} {c}: {} vs {lo}", s.gamma);
                assert!(s.residuals.gamma <= RESIDUAL_TOLERANCE);
            }
        }
    }

    #[test]
    fn loss_curve_setup_plugs_back() {
        let c = toeplitz(150, 0.9);
        let w = WeightFunction::m_tyler(1.0 / 1.5, 0.1).unwrap();
        let ctx = RegularizedContext::new(0.5, 1.5).unwrap();
        let s = solve_gamma(&w, ctx, &c).unwrap();
        // The gamma equation evaluated with the raw v instead of f.
        let ew = EquivalentWeight::new(w, ctx).unwrap();
        let v = ew.v(s.gamma).unwrap();
        let k = 0.5 * v / (1.0 + 0.5 * 1.5 * v * s.gamma);
        let rhs: f64 = c.eigenvalues().iter().map(|&l| l / (k * l + 0.5)).sum::<f64>() / 150.0;
        assert!((rhs - s.gamma).abs() <= 1e-10 * s.gamma);
        assert!(s.residuals.gamma <= 1e-10);
    }

    #[test]
    fn degenerate_spectrum_is_rejected() {
        let z = CovarianceModel::diagonal(&[0.0, 0.0]).unwrap();
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        assert!(matches!(solve_gamma(&w, RegularizedContext::new(0.5, 0.5).unwrap(), &z), Err(AsymptoticError::DegenerateSpectrum)));
    }

    #[test]
    fn non_regularized_limits() {
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        let c = toeplitz(50, 0.9);
        let d = toeplitz(50, 0.2);
        let (g0, a0) = limits_eps_zero(&w, RegularizedContext::non_regularized(0.25).unwrap(), &c, &d).unwrap();
        assert!((g0 - 4.0 / 3.0).abs() < 1e-12);
        assert!((a0 - g0 * c.trace_ratio(&d).unwrap()).abs() < 1e-10 * a0);
        let (g, a) = limits_eps_zero(&w, RegularizedContext::non_regularized(0.25).unwrap(), &c, &c).unwrap();
        assert!((g - a).abs() < 1e-10 * g);
        let (g, a) = limits_eps_zero(&w, RegularizedContext::new(0.4, 1.5).unwrap(), &c, &c).unwrap();
        assert!((g - a).abs() < 1e-10 * g);
    }

    #[test]
    fn influence_curve_setup_plugs_back() {
        let c = toeplitz(50, 0.9);
        let d = toeplitz(50, 0.2);
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0, 0.1).unwrap();
            for eps in [0.01, 0.1, 0.5, 0.9] {
                let s = solve_gamma_alpha_noreg(&w, 0.25, eps, &c, &d).unwrap();
                assert!(s.residuals.max() <= RESIDUAL_TOLERANCE, "{kind:?} {eps}: {:?}", s.residuals);
                let (rg, ra) = dense_residuals(&s, &c, &d);
                assert!(rg <= 1e-9 && ra <= 1e-9, "{kind:?} {eps}: {rg} {ra}");
            }
        }
    }

    #[test]
    fn regularized_system_plugs_back() {
        let c = toeplitz(60, 0.9);
        let d = toeplitz(60, 0.2);
        for (kind, k) in [(WeightKind::MTyler, 1.0 / 1.5), (WeightKind::MHuber, 1.0 / 1.5)] {
            let w = WeightFunction::new(kind, k, 0.1).unwrap();
            for rho in [0.15, 0.5, 0.9] {
                let ctx = RegularizedContext::new(rho, 1.5).unwrap();
                let s = solve_gamma_alpha_reg(&w, ctx, 0.1, &c, &d).unwrap();
                assert!(s.residuals.max() <= RESIDUAL_TOLERANCE, "{:?}", s.residuals);
                let (rg, ra) = dense_residuals(&s, &c, &d);
                assert!(rg <= 1e-9 && ra <= 1e-9, "{rg} {ra}");
            }
        }
    }

    #[test]
    fn consistency_web() {
        let c = toeplitz(40, 0.9);
        let d = toeplitz(40, 0.2);
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        // eps = 0 matches the clean solver.
        let ctx = RegularizedContext::new(0.3, 0.5).unwrap();
        let clean = solve_gamma(&w, ctx, &c).unwrap();
        let reg0 = solve_gamma_alpha_reg(&w, ctx, 0.0, &c, &d).unwrap();
        assert!((clean.gamma - reg0.gamma).abs() <= 1e-9 * clean.gamma);
        // rho = 0 matches the non-regularized system.
        let a = solve_gamma_alpha_reg(&w, RegularizedContext::new(0.0, 0.25).unwrap(), 0.1, &c, &d).unwrap();
        let b = solve_gamma_alpha_noreg(&w, 0.25, 0.1, &c, &d).unwrap();
        assert_eq!(a, b);
        // Tiny rho approaches the non-regularized system, linearly in rho.
        let gap = |rho: f64| {
            let s = solve_gamma_alpha_reg(&w, RegularizedContext::new(rho, 0.25).unwrap(), 0.1, &c, &d).unwrap();
            (s.gamma - b.gamma).abs() / b.gamma
        };
        let (g7, g8) = (gap(1e-7), gap(1e-8));
        assert!(g7 < 1e-4 && g8 < 2e-5, "{g7} {g8}");
        assert!((g7 / g8 - 10.0).abs() < 1.0, "{g7} {g8}");
        // D = C collapses alpha onto gamma and onto the clean solution.
        for eps in [0.05, 0.3] {
            let s = solve_gamma_alpha_reg(&w, ctx, eps, &c, &c).unwrap();
            assert!((s.gamma - s.alpha.unwrap()).abs() <= 1e-9 * s.gamma);
            assert!((s.gamma - clean.gamma).abs() <= 1e-9 * s.gamma);
            let s = solve_gamma_alpha_noreg(&w, 0.25, eps, &c, &c).unwrap();
            assert!((s.gamma - s.alpha.unwrap()).abs() <= 1e-9 * s.gamma);
            assert!((s.gamma - 4.0 / 3.0).abs() <= 1e-9 * s.gamma);
        }
    }

    #[test]
    fn small_eps_approaches_limits() {
        let c = toeplitz(40, 0.9);
        let d = toeplitz(40, 0.2);
        let w = WeightFunction::m_huber(1.0, 0.1).unwrap();
        for ctx in [RegularizedContext::non_regularized(0.25).unwrap(), RegularizedContext::new(0.4, 1.5).unwrap()] {
            let w = if ctx.rho() == 0.0 { w } else { WeightFunction::m_huber(1.0 / 1.5, 0.1).unwrap() };
            let (g0, a0) = limits_eps_zero(&w, ctx, &c, &d).unwrap();
            let s = solve_gamma_alpha_reg(&w, ctx, 1e-4, &c, &d).unwrap();
            assert!((s.gamma - g0).abs() <= 1e-3 * g0);
            assert!((s.alpha.unwrap() - a0).abs() <= 1e-3 * a0);
        }
    }

    #[test]
    fn regime_checks() {
        let c = toeplitz(10, 0.5);
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        assert!(matches!(solve_gamma_alpha_noreg(&w, 1.5, 0.1, &c, &c), Err(AsymptoticError::Precondition(_))));
        let low = WeightFunction::m_tyler(0.5, 0.1).unwrap();
        assert!(matches!(solve_gamma_alpha_noreg(&low, 0.25, 0.1, &c, &c), Err(AsymptoticError::Precondition(_))));
        assert!(matches!(
            solve_gamma(&w, RegularizedContext::new(0.01, 1.5).unwrap(), &c),
            Err(AsymptoticError::Weight(WeightError::Admissibility(_)))
        ));
        assert!(solve_gamma_alpha_reg(&w, RegularizedContext::new(0.5, 1.5).unwrap(), 1.0, &c, &c).is_err());
    }

    #[test]
    fn equivalents_collapse() {
        let c = toeplitz(12, 0.9);
        let d = toeplitz(12, 0.2);
        let w = WeightFunction::m_tyler(0.5, 0.1).unwrap();
        let y = sample_clean(&c, 8, 3, ScalarField::Complex).unwrap();
        let one = solve_gamma(&w, RegularizedContext::new(1.0, 1.5).unwrap(), &c).unwrap();
        assert_eq!(equivalent_clean(&y, &one).unwrap(), linalg::identity(12));

        let ctx = RegularizedContext::new(0.5, 1.5).unwrap();
        let clean = solve_gamma(&w, ctx, &c).unwrap();
        let reg0 = solve_gamma_alpha_reg(&w, ctx, 0.0, &c, &d).unwrap();
        assert_eq!(equivalent_contaminated(&y, &reg0).unwrap(), equivalent_clean(&y, &clean).unwrap());

        let dirty = sample_contaminated(&c, &d, 8, 0.25, 3, ScalarField::Complex).unwrap();
        let s = solve_gamma_alpha_reg(&w, ctx, 0.25, &c, &d).unwrap();
        let e = equivalent_contaminated(&dirty, &s).unwrap();
        assert!(linalg::hermitian_eigenvalues(&e)[0] >= 0.5 - 1e-12);
        let s_one = solve_gamma_alpha_reg(&w, RegularizedContext::new(1.0, 1.5).unwrap(), 0.25, &c, &d).unwrap();
        assert_eq!(equivalent_contaminated(&dirty, &s_one).unwrap(), linalg::identity(12));
        // Partition mismatch.
        let s_other = solve_gamma_alpha_reg(&w, ctx, 0.5, &c, &d).unwrap();
        assert!(matches!(equivalent_contaminated(&dirty, &s_other), Err(AsymptoticError::Mismatch(_))));
        let wrong_c = solve_gamma(&w, RegularizedContext::new(0.5, 1.0).unwrap(), &c).unwrap();
        assert!(matches!(equivalent_clean(&y, &wrong_c), Err(AsymptoticError::Mismatch(_))));
    }

    #[test]
    fn gamma_equation_decreasing() {
        let c = toeplitz(30, 0.6);
        let w = WeightFunction::m_huber(0.9, 0.1).unwrap();
        let ctx = RegularizedContext::new(0.4, 0.8).unwrap();
        let ew = EquivalentWeight::new(w, ctx).unwrap();
        let lhs = |g: f64| {
            let f = 0.6 * ew.phi_of_g_inverse(g).unwrap();
            c.eigenvalues().iter().map(|&l| l / (f * l + 0.4 * g)).sum::<f64>() / 30.0
        };
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let v = lhs(k as f64 * 0.05);
            assert!(v < prev);
            prev = v;
        }
    }
}
