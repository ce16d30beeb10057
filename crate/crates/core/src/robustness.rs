//! Sensitivity of the estimators to a fraction `eps` of outliers.
//!
//! The measure of influence is the spectral norm of the expected difference
//! between the trace-normalized estimates on clean and contaminated data. It
//! is estimated by Monte Carlo ([`mi_empirical`]) and predicted from the
//! deterministic equivalents; the infinitesimal measure (IMI) is its slope at
//! `eps = 0`. Covariances are assumed trace-normalized throughout.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::asymptotics::{self, AsymptoticError};
use crate::estimators::{EstimatorError, EstimatorSpec, SolverOptions, Start};
use crate::linalg::{self, CMatrix, Cplx};
use crate::sampling::{sample_contaminated, CovarianceModel, SamplingError, ScalarField};
use crate::weights::{DerivativeMode, EquivalentWeight, RegularizedContext, Side, WeightError, WeightFunction, WeightKind};

const NORMALIZATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error(transparent)]
    Asymptotic(#[from] AsymptoticError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("{which} covariance is not trace-normalized: (1/N) tr = {trace}")]
    NotNormalized { which: &'static str, trace: f64 },
    #[error("every Monte-Carlo trial failed ({0} failures)")]
    AllTrialsFailed(usize),
    #[error("invalid argument: {0}")]
    Parameter(String),
}

/// Requires `(1/N) tr C = (1/N) tr D = 1`.
pub fn check_normalized(c: &CovarianceModel, d: &CovarianceModel) -> Result<(), RobustnessError> {
    if c.dim() != d.dim() {
        return Err(SamplingError::DimensionMismatch(c.dim(), d.dim()).into());
    }
    for (which, m) in [("legitimate", c), ("outlier", d)] {
        if (m.m1() - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(RobustnessError::NotNormalized { which, trace: m.m1() });
        }
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), RobustnessError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(RobustnessError::Parameter(format!("eps = {eps} must lie in [0, 1)")));
    }
    Ok(())
}

fn same_model(c: &CovarianceModel, d: &CovarianceModel) -> bool {
    c.matrix() == d.matrix()
}

fn difference_norm(c: &CovarianceModel, d: &CovarianceModel) -> f64 {
    linalg::spectral_norm(&(c.matrix() - d.matrix()))
}

/// `eps |C - D|`.
pub fn mi_scm(eps: f64, c: &CovarianceModel, d: &CovarianceModel) -> Result<f64, RobustnessError> {
    check_normalized(c, d)?;
    check_eps(eps)?;
    Ok(eps * difference_norm(c, d))
}

/// `|C - D|`.
pub fn imi_scm(c: &CovarianceModel, d: &CovarianceModel) -> Result<f64, RobustnessError> {
    check_normalized(c, d)?;
    Ok(difference_norm(c, d))
}

/// `(1 - rho) eps |C - D|` for the RSCM with shrinkage `rho`.
pub fn mi_rscm(rho: f64, eps: f64, c: &CovarianceModel, d: &CovarianceModel) -> Result<f64, RobustnessError> {
    check_normalized(c, d)?;
    check_eps(eps)?;
    Ok((1.0 - rho) * eps * difference_norm(c, d))
}

/// `(1 - rho) |C - D|`.
pub fn imi_rscm(rho: f64, c: &CovarianceModel, d: &CovarianceModel) -> Result<f64, RobustnessError> {
    check_normalized(c, d)?;
    Ok((1.0 - rho) * difference_norm(c, d))
}

/// `eps v(alpha) / ((1 - eps) v(gamma) + eps v(alpha)) |C - D|` without shrinkage.
pub fn mi_asymptotic_noreg(w: &WeightFunction, c: f64, eps: f64, c_model: &CovarianceModel, d_model: &CovarianceModel) -> Result<f64, RobustnessError> {
    check_normalized(c_model, d_model)?;
    check_eps(eps)?;
    let state = asymptotics::solve_gamma_alpha_noreg(w, c, eps, c_model, d_model)?;
    if eps == 0.0 || same_model(c_model, d_model) {
        return Ok(0.0);
    }
    let v_alpha = state.v_alpha.unwrap_or(0.0);
    Ok(eps * v_alpha / ((1.0 - eps) * state.v_gamma + eps * v_alpha) * difference_norm(c_model, d_model))
}

/// How the IMI is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImiMode {
    /// With the exact `v` (and, with shrinkage, its exact derivative).
    #[default]
    Exact,
    /// Small-`t` approximations: closed forms without shrinkage, the
    /// approximate derivative of `v` with shrinkage.
    SmallT,
}

/// `v(alpha^0) / v(gamma^0) |C - D|`, or its small-`t` closed form.
pub fn imi_noreg(w: &WeightFunction, c: f64, c_model: &CovarianceModel, d_model: &CovarianceModel, mode: ImiMode) -> Result<f64, RobustnessError> {
    check_normalized(c_model, d_model)?;
    let ctx = RegularizedContext::non_regularized(c)?;
    asymptotics::check_non_regularized_regime(w, c)?;
    let norm = difference_norm(c_model, d_model);
    if same_model(c_model, d_model) {
        return Ok(0.0);
    }
    match mode {
        ImiMode::Exact => {
            let (gamma0, alpha0) = asymptotics::limits_eps_zero(w, ctx, c_model, d_model)?;
            let ew = EquivalentWeight::new(*w, ctx)?;
            Ok(ew.v(alpha0)? / ew.v(gamma0)? * norm)
        }
        ImiMode::SmallT => {
            let t = w.shape();
            let ratio = c_model.trace_ratio(d_model)?;
            let tyler = (1.0 + t) / (t + ratio) * norm;
            Ok(match w.kind() {
                WeightKind::MTyler => tyler,
                WeightKind::MHuber if ratio <= 1.0 => norm,
                WeightKind::MHuber => tyler,
            })
        }
    }
}

/// Equivalent-matrix form of the regularized measure of influence:
/// `|U / V|` with
///
/// ```text
/// U = rho (1-rho) ((1-eps) v(gamma^eps) - v(gamma^0)) (C - I)
///   + rho (1-rho) eps v(alpha^eps) (D - I)
///   + (1-rho)^2 eps v(gamma^0) v(alpha^eps) (D - C)
/// V = ((1-rho)(1-eps) v(gamma^eps) + (1-rho) eps v(alpha^eps) + rho) ((1-rho) v(gamma^0) + rho)
/// ```
pub fn mi_asymptotic_reg(
    w: &WeightFunction,
    ctx: RegularizedContext,
    eps: f64,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
) -> Result<f64, RobustnessError> {
    check_normalized(c_model, d_model)?;
    check_eps(eps)?;
    if ctx.rho() == 0.0 {
        return mi_asymptotic_noreg(w, ctx.c(), eps, c_model, d_model);
    }
    let clean = asymptotics::solve_gamma(w, ctx, c_model)?;
    let state = asymptotics::solve_gamma_alpha_reg(w, ctx, eps, c_model, d_model)?;
    if same_model(c_model, d_model) {
        return Ok(0.0);
    }
    let rho = ctx.rho();
    let (vg0, vg, va) = (clean.v_gamma, state.v_gamma, state.v_alpha.unwrap_or(0.0));
    let u = shifted_combination(
        c_model,
        d_model,
        rho * (1.0 - rho) * ((1.0 - eps) * vg - vg0),
        rho * (1.0 - rho) * eps * va,
        (1.0 - rho).powi(2) * eps * vg0 * va,
    );
    let v = ((1.0 - rho) * (1.0 - eps) * vg + (1.0 - rho) * eps * va + rho) * ((1.0 - rho) * vg0 + rho);
    Ok(linalg::spectral_norm(&u) / v)
}

/// `a (C - I) + b (D - I) + e (D - C)`.
fn shifted_combination(c: &CovarianceModel, d: &CovarianceModel, a: f64, b: f64, e: f64) -> CMatrix {
    let mut m = c.matrix() * Cplx::new(a - e, 0.0) + d.matrix() * Cplx::new(b + e, 0.0);
    for i in 0..m.nrows() {
        m[(i, i)].re -= a + b;
    }
    m
}

/// Ingredients of the regularized IMI, exposed for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImiBreakdown {
    pub imi: f64,
    pub gamma0: f64,
    pub alpha0: f64,
    pub v_gamma0: f64,
    pub v_alpha0: f64,
    pub dv_dgamma: f64,
    pub dgamma_deps: f64,
    /// The derivative of `v` was taken one-sided at its kink.
    pub one_sided: bool,
}

/// `|G| / ((1 - rho) v(gamma^0) + rho)^2` with
///
/// ```text
/// G = rho (1-rho) [v(alpha^0) (D - I) - v(gamma^0) (C - I)]
///   + (1-rho)^2 v(gamma^0) v(alpha^0) (D - C)
///   + rho (1-rho) v'(gamma^0) dgamma/deps (C - I)
/// ```
///
/// `dgamma/deps` at 0 comes from differentiating the contaminated system; in
/// the eigenbasis of `C` every trace in it is a sum over the spectrum. With
/// `rho = 0` this is [`imi_noreg`].
pub fn imi_reg(w: &WeightFunction, ctx: RegularizedContext, c_model: &CovarianceModel, d_model: &CovarianceModel, mode: ImiMode) -> Result<f64, RobustnessError> {
    if ctx.rho() == 0.0 {
        return imi_noreg(w, ctx.c(), c_model, d_model, mode);
    }
    Ok(imi_reg_breakdown(w, ctx, c_model, d_model, mode)?.imi)
}

pub fn imi_reg_breakdown(
    w: &WeightFunction,
    ctx: RegularizedContext,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
    mode: ImiMode,
) -> Result<ImiBreakdown, RobustnessError> {
    check_normalized(c_model, d_model)?;
    let rho = ctx.rho();
    if !(rho > 0.0) {
        return Err(RobustnessError::Parameter("the breakdown needs rho > 0".into()));
    }
    let ew = EquivalentWeight::new(*w, ctx)?;
    let gamma0 = asymptotics::solve_gamma(w, ctx, c_model)?.gamma;
    let k = asymptotics::coupling(&ew, gamma0);
    let dd = asymptotics::diagonal_in_basis(c_model, d_model);
    let n = dd.len() as f64;
    let (mut alpha0, mut t_cc, mut t_cd) = (0.0, 0.0, 0.0);
    for (&l, &dd) in c_model.eigenvalues().iter().zip(&dd) {
        let a = k * l + rho;
        alpha0 += dd / a;
        t_cc += l * l / (a * a);
        t_cd += l * dd / (a * a);
    }
    let (alpha0, t_cc, t_cd) = (alpha0 / n, t_cc / n, t_cd / n);
    let same = same_model(c_model, d_model);
    let alpha0 = if same { gamma0 } else { alpha0 };

    let beta = (1.0 - rho) * ctx.c();
    let (vg, va) = (ew.v(gamma0)?, ew.v(alpha0)?);
    let damp = |x: f64, v: f64| v / (1.0 + beta * x * v);
    let numerator = (1.0 - rho) * (damp(gamma0, vg) * t_cc - damp(alpha0, va) * t_cd);
    let derivative_mode = match mode {
        ImiMode::Exact => DerivativeMode::Exact,
        ImiMode::SmallT => DerivativeMode::SmallT,
    };
    let slope = |dv: f64| {
        let denominator = 1.0 + (1.0 - rho) * (dv - beta * vg * vg) / (1.0 + beta * gamma0 * vg).powi(2) * t_cc;
        if same { 0.0 } else { numerator / denominator }
    };
    let (dv, dgamma, one_sided) = match ew.v_derivative(gamma0, derivative_mode) {
        Ok(dv) => (dv, slope(dv), false),
        Err(WeightError::Kink(at)) => {
            // Follow gamma in the direction it moves as eps grows.
            let right = ew.v_derivative_one_sided(gamma0, derivative_mode, Side::Right)?;
            let (dv, dgamma) = if slope(right) >= 0.0 {
                (right, slope(right))
            } else {
                let left = ew.v_derivative_one_sided(gamma0, derivative_mode, Side::Left)?;
                (left, slope(left))
            };
            log::warn!("v is not differentiable at gamma0 = {at}; using a one-sided derivative");
            (dv, dgamma, true)
        }
        Err(e) => return Err(e.into()),
    };
    let imi = if same {
        0.0
    } else {
        let g = shifted_combination(
            c_model,
            d_model,
            rho * (1.0 - rho) * (dv * dgamma - vg),
            rho * (1.0 - rho) * va,
            (1.0 - rho).powi(2) * vg * va,
        );
        linalg::spectral_norm(&g) / ((1.0 - rho) * vg + rho).powi(2)
    };
    Ok(ImiBreakdown { imi, gamma0, alpha0, v_gamma0: vg, v_alpha0: va, dv_dgamma: dv, dgamma_deps: dgamma, one_sided })
}

/// Asymptotic measure of influence of any estimator family.
pub fn mi_asymptotic(spec: &EstimatorSpec, rho: f64, c: f64, eps: f64, c_model: &CovarianceModel, d_model: &CovarianceModel) -> Result<f64, RobustnessError> {
    match spec {
        EstimatorSpec::Scm => mi_scm(eps, c_model, d_model),
        EstimatorSpec::Rscm => mi_rscm(rho, eps, c_model, d_model),
        EstimatorSpec::M(w) => mi_asymptotic_reg(w, RegularizedContext::new(rho, c)?, eps, c_model, d_model),
    }
}

/// IMI of any estimator family.
pub fn imi(spec: &EstimatorSpec, rho: f64, c: f64, c_model: &CovarianceModel, d_model: &CovarianceModel, mode: ImiMode) -> Result<f64, RobustnessError> {
    match spec {
        EstimatorSpec::Scm => imi_scm(c_model, d_model),
        EstimatorSpec::Rscm => imi_rscm(rho, c_model, d_model),
        EstimatorSpec::M(w) => imi_reg(w, RegularizedContext::new(rho, c)?, c_model, d_model, mode),
    }
}

/// Monte-Carlo settings for [`mi_empirical`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Number of batches for the batch-means standard error.
    pub batches: usize,
    pub field: ScalarField,
    pub solver: SolverOptions,
    /// Rescale `C` and `D` to unit normalized trace instead of rejecting them.
    pub auto_normalize: bool,
}

impl MonteCarlo {
    pub fn new(n: usize, trials: usize, seed: u64) -> Self {
        Self { n, trials, seed, batches: 10, field: ScalarField::Complex, solver: SolverOptions::default(), auto_normalize: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub trials: usize,
    pub failures: usize,
}

/// Per-trial seeds drawn from one ChaCha20 stream, so trial `k` sees the same
/// seed in every run and in every sweep point.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..trials).map(|_| rng.next_u64()).collect()
}

/// Monte-Carlo measure of influence.
///
/// Each trial draws one dataset from the legitimate stream and reuses its
/// first `(1 - eps) n` samples in the contaminated dataset, so the clean and
/// contaminated fits share their random numbers. The reported value is
/// `|mean(C0 / tr) - mean(Ceps / tr)|`; the standard error is the spread of
/// the same quantity over equal batches of trials, divided by `sqrt(batches)`.
/// Failed fits drop the whole trial and are counted. `D = C` gives exactly 0.
pub fn mi_empirical(
    spec: &EstimatorSpec,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
    eps: f64,
    rho: f64,
    mc: &MonteCarlo,
) -> Result<McEstimate, RobustnessError> {
    let (c_norm, d_norm);
    let (c_model, d_model) = if mc.auto_normalize {
        c_norm = c_model.normalized()?;
        d_norm = d_model.normalized()?;
        (&c_norm, &d_norm)
    } else {
        (c_model, d_model)
    };
    check_normalized(c_model, d_model)?;
    check_eps(eps)?;
    if mc.trials == 0 || mc.batches == 0 {
        return Err(RobustnessError::Parameter("trials and batches must be positive".into()));
    }
    if same_model(c_model, d_model) {
        // Clean and contaminated data then share one law.
        return Ok(McEstimate { value: 0.0, stderr: 0.0, trials: mc.trials, failures: 0 });
    }
    let dim = c_model.dim();
    let batches = mc.batches.min(mc.trials);
    let mut batch_sums = vec![(CMatrix::zeros(dim, dim), 0usize); batches];
    let mut failures = 0;
    for (k, seed) in trial_seeds(mc.seed, mc.trials).into_iter().enumerate() {
        let clean = sample_contaminated(c_model, d_model, mc.n, 0.0, seed, mc.field)?;
        let dirty = sample_contaminated(c_model, d_model, mc.n, eps, seed, mc.field)?;
        let Ok(fit0) = spec.fit(&clean, rho, &mc.solver, Start::Options) else {
            failures += 1;
            continue;
        };
        let diff = if dirty.n_outlier() == 0 {
            CMatrix::zeros(dim, dim)
        } else {
            let Ok(fit) = spec.fit(&dirty, rho, &mc.solver, Start::Weights(&fit0.weights)) else {
                failures += 1;
                continue;
            };
            normalize(&fit0.estimate) - normalize(&fit.estimate)
        };
        let slot = &mut batch_sums[k * batches / mc.trials];
        slot.0 += diff;
        slot.1 += 1;
    }
    let used = mc.trials - failures;
    if used == 0 {
        return Err(RobustnessError::AllTrialsFailed(failures));
    }
    let total = batch_sums.iter().fold(CMatrix::zeros(dim, dim), |acc, (m, _)| acc + m);
    let value = linalg::spectral_norm(&(total / Cplx::new(used as f64, 0.0)));
    let per_batch: Vec<f64> = batch_sums
        .iter()
        .filter(|(_, count)| *count > 0)
        .map(|(m, count)| linalg::spectral_norm(&(m / Cplx::new(*count as f64, 0.0))))
        .collect();
    let stderr = if per_batch.len() > 1 {
        let mean = per_batch.iter().sum::<f64>() / per_batch.len() as f64;
        let var = per_batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per_batch.len() - 1) as f64;
        (var / per_batch.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(McEstimate { value, stderr, trials: used, failures })
}

fn normalize(m: &CMatrix) -> CMatrix {
    m / Cplx::new(linalg::normalized_trace(m), 0.0)
}

/// Everything known about one estimator at one contamination level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfluenceReport {
    pub estimator: String,
    pub rho: f64,
    pub c: f64,
    pub eps: f64,
    pub mi_empirical: Option<McEstimate>,
    pub mi_asymptotic: f64,
    pub imi: Option<f64>,
    pub seed: Option<u64>,
}

/// Asymptotic MI and IMI, plus the Monte-Carlo MI when `mc` is given.
pub fn influence_report(
    spec: &EstimatorSpec,
    rho: f64,
    eps: f64,
    c_model: &CovarianceModel,
    d_model: &CovarianceModel,
    c: f64,
    mc: Option<&MonteCarlo>,
) -> Result<InfluenceReport, RobustnessError> {
    let mi_emp = mc.map(|mc| mi_empirical(spec, c_model, d_model, eps, rho, mc)).transpose()?;
    let c = mc.map_or(c, |mc| c_model.dim() as f64 / mc.n as f64);
    Ok(InfluenceReport {
        estimator: spec.label().to_string(),
        rho,
        c,
        eps,
        mi_empirical: mi_emp,
        mi_asymptotic: mi_asymptotic(spec, rho, c, eps, c_model, d_model)?,
        imi: Some(imi(spec, rho, c, c_model, d_model, ImiMode::Exact)?),
        seed: mc.map(|mc| mc.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration;

    fn toeplitz(n: usize, b: f64) -> CovarianceModel {
        CovarianceModel::toeplitz(n, b).unwrap()
    }

    /// `|E0 / L0 - Eeps / Leps|` from the equivalent expectations directly.
    fn mi_direct(w: &WeightFunction, ctx: RegularizedContext, eps: f64, c: &CovarianceModel, d: &CovarianceModel) -> f64 {
        let rho = ctx.rho();
        let clean = asymptotics::solve_gamma(w, ctx, c).unwrap();
        let s = asymptotics::solve_gamma_alpha_reg(w, ctx, eps, c, d).unwrap();
        let id = linalg::identity(c.dim());
        let e0 = (c.matrix() * Cplx::new((1.0 - rho) * clean.v_gamma, 0.0) + &id * Cplx::new(rho, 0.0)) / Cplx::new((1.0 - rho) * clean.v_gamma + rho, 0.0);
        let va = s.v_alpha.unwrap();
        let l = (1.0 - rho) * ((1.0 - eps) * s.v_gamma + eps * va) + rho;
        let e = (c.matrix() * Cplx::new((1.0 - rho) * (1.0 - eps) * s.v_gamma, 0.0)
            + d.matrix() * Cplx::new((1.0 - rho) * eps * va, 0.0)
            + &id * Cplx::new(rho, 0.0))
            / Cplx::new(l, 0.0);
        linalg::hermitian_eigenvalues(&(e0 - e)).iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn scm_examples() {
        let (c, d) = (toeplitz(50, 0.9), toeplitz(50, 0.2));
        let oracle = linalg::hermitian_eigenvalues(&(c.matrix() - d.matrix())).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((imi_scm(&c, &d).unwrap() - oracle).abs() <= 1e-10 * oracle);
        assert_eq!(mi_scm(0.0, &c, &d).unwrap(), 0.0);
        assert_eq!(imi_scm(&c, &c).unwrap(), 0.0);
        assert_eq!(mi_rscm(1.0, 0.1, &c, &d).unwrap(), 0.0);
        let scaled = CovarianceModel::new(c.matrix() * Cplx::new(2.0, 0.0)).unwrap();
        assert!(matches!(imi_scm(&scaled, &d), Err(RobustnessError::NotNormalized { .. })));
    }

    #[test]
    fn regularized_mi_matches_direct_form() {
        let (c, d) = (toeplitz(40, 0.9), toeplitz(40, 0.2));
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0 / 1.5, 0.1).unwrap();
            for rho in [0.2, 0.6] {
                let ctx = RegularizedContext::new(rho, 1.5).unwrap();
                for eps in [0.02, 0.2] {
                    let a = mi_asymptotic_reg(&w, ctx, eps, &c, &d).unwrap();
                    let b = mi_direct(&w, ctx, eps, &c, &d);
                    assert!((a - b).abs() <= 1e-9 * b, "{kind:?} {rho} {eps}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn vanishing_cases_are_exact() {
        let (c, d) = (toeplitz(30, 0.9), toeplitz(30, 0.2));
        let w = WeightFunction::m_huber(1.0 / 1.5, 0.1).unwrap();
        let ctx = RegularizedContext::new(0.4, 1.5).unwrap();
        assert_eq!(mi_asymptotic_reg(&w, ctx, 0.0, &c, &d).unwrap(), 0.0);
        assert_eq!(mi_asymptotic_reg(&w, RegularizedContext::new(1.0, 1.5).unwrap(), 0.1, &c, &d).unwrap(), 0.0);
        assert_eq!(imi_reg(&w, RegularizedContext::new(1.0, 1.5).unwrap(), &c, &d, ImiMode::Exact).unwrap(), 0.0);
        assert_eq!(mi_asymptotic_reg(&w, ctx, 0.1, &c, &c).unwrap(), 0.0);
        assert_eq!(imi_reg(&w, ctx, &c, &c, ImiMode::Exact).unwrap(), 0.0);
        let b = imi_reg_breakdown(&w, ctx, &c, &c, ImiMode::Exact).unwrap();
        assert_eq!(b.dgamma_deps, 0.0);
        let w1 = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        assert_eq!(mi_asymptotic_noreg(&w1, 0.25, 0.0, &c, &d).unwrap(), 0.0);
        assert_eq!(mi_asymptotic_noreg(&w1, 0.25, 0.1, &c, &c).unwrap(), 0.0);
        assert_eq!(imi_noreg(&w1, 0.25, &c, &c, ImiMode::Exact).unwrap(), 0.0);
    }

    #[test]
    fn dgamma_matches_finite_difference() {
        let (c, d) = (toeplitz(40, 0.9), toeplitz(40, 0.2));
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0 / 1.5, 0.1).unwrap();
            for rho in [0.3, 0.8] {
                let ctx = RegularizedContext::new(rho, 1.5).unwrap();
                let b = imi_reg_breakdown(&w, ctx, &c, &d, ImiMode::Exact).unwrap();
                let h = 1e-6;
                let up = asymptotics::solve_gamma_alpha_reg(&w, ctx, h, &c, &d).unwrap();
                let fd = (up.gamma - b.gamma0) / h;
                assert!((fd - b.dgamma_deps).abs() <= 1e-4 * b.dgamma_deps.abs().max(1e-3), "{kind:?} {rho}: {fd} {}", b.dgamma_deps);
                let (g0, a0) = asymptotics::limits_eps_zero(&w, ctx, &c, &d).unwrap();
                assert!((g0 - b.gamma0).abs() < 1e-12 * g0 && (a0 - b.alpha0).abs() < 1e-10 * a0);
            }
        }
    }

    /// At most 5% at the middle step and decreasing, unless MI is linear in
    /// eps to rounding (flat part of the M-Huber weight).
    fn slope_converges(errs: &[f64]) -> bool {
        let linear = errs.iter().all(|&e| e < 1e-10);
        errs[1] <= 0.05 && (linear || (errs[0] > errs[1] && errs[1] > errs[2]))
    }

    #[test]
    fn imi_is_the_slope_at_zero() {
        let (c, d) = (toeplitz(40, 0.9), toeplitz(40, 0.2));
        let rho_star = calibration::oracle_optimum(1.5, &c).unwrap().rho_star;
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0 / 1.5, 0.1).unwrap();
            let rho_hat_star = calibration::rho_bar_to_rho(rho_star, &w, 1.5, &c).unwrap();
            for rho in [0.3, rho_hat_star, 0.9] {
                let ctx = RegularizedContext::new(rho, 1.5).unwrap();
                let imi = imi_reg(&w, ctx, &c, &d, ImiMode::Exact).unwrap();
                let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
                    .iter()
                    .map(|&e| (mi_asymptotic_reg(&w, ctx, e, &c, &d).unwrap() / e - imi).abs() / imi)
                    .collect();
                assert!(slope_converges(&errs), "{kind:?} {rho}: {errs:?}");
            }
        }
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0, 0.1).unwrap();
            for (c, d) in [(&c, &d), (&d, &c)] {
                let imi = imi_noreg(&w, 0.25, c, d, ImiMode::Exact).unwrap();
                let errs: Vec<f64> =
                    [1e-2, 1e-3, 1e-4].iter().map(|&e| (mi_asymptotic_noreg(&w, 0.25, e, c, d).unwrap() / e - imi).abs() / imi).collect();
                assert!(slope_converges(&errs), "{kind:?}: {errs:?}");
            }
        }
    }

    #[test]
    fn huber_tyler_dichotomy() {
        let (c, d) = (toeplitz(50, 0.9), toeplitz(50, 0.2));
        let tyler = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        let huber = WeightFunction::m_huber(1.0, 0.1).unwrap();
        assert!(c.trace_ratio(&d).unwrap() > 1.0 && d.trace_ratio(&c).unwrap() < 1.0);
        let above = (imi_noreg(&tyler, 0.25, &c, &d, ImiMode::SmallT).unwrap(), imi_noreg(&huber, 0.25, &c, &d, ImiMode::SmallT).unwrap());
        assert_eq!(above.0, above.1);
        let below = (imi_noreg(&tyler, 0.25, &d, &c, ImiMode::SmallT).unwrap(), imi_noreg(&huber, 0.25, &d, &c, ImiMode::SmallT).unwrap());
        assert_eq!(below.1, imi_scm(&d, &c).unwrap());
        assert!(below.1 <= below.0);
    }

    #[test]
    fn noreg_ordering_biconditional() {
        // MI below the SCM's exactly when v(alpha) <= v(gamma).
        let mut checked = 0;
        for (bc, bd) in [(0.9, 0.2), (0.2, 0.9), (0.5, 0.6), (0.7, 0.0), (0.0, 0.7)] {
            let (c, d) = (toeplitz(30, bc), toeplitz(30, bd));
            for kind in [WeightKind::MTyler, WeightKind::MHuber] {
                let w = WeightFunction::new(kind, 1.0, 0.1).unwrap();
                for eps in [0.05, 0.3] {
                    let s = asymptotics::solve_gamma_alpha_noreg(&w, 0.25, eps, &c, &d).unwrap();
                    let mi = mi_asymptotic_noreg(&w, 0.25, eps, &c, &d).unwrap();
                    let scm = mi_scm(eps, &c, &d).unwrap();
                    assert_eq!(mi <= scm * (1.0 + 1e-12), s.v_alpha.unwrap() <= s.v_gamma * (1.0 + 1e-12));
                    checked += 1;
                }
            }
        }
        assert_eq!(checked, 20);
    }

    #[test]
    fn empirical_exact_zeros_and_pairing() {
        let (c, d) = (toeplitz(10, 0.9), toeplitz(10, 0.2));
        let w = EstimatorSpec::M(WeightFunction::m_tyler(1.0 / 1.5, 0.1).unwrap());
        let mc = MonteCarlo::new(40, 6, 3);
        assert_eq!(mi_empirical(&w, &c, &d, 0.0, 0.5, &mc).unwrap().value, 0.0);
        assert_eq!(mi_empirical(&w, &c, &d, 0.2, 1.0, &mc).unwrap().value, 0.0);
        let a = mi_empirical(&w, &c, &d, 0.2, 0.5, &mc).unwrap();
        let b = mi_empirical(&w, &c, &d, 0.2, 0.5, &mc).unwrap();
        assert_eq!(a, b);
        assert!(a.value > 0.0 && a.stderr.is_finite());
        let scaled = CovarianceModel::new(c.matrix() * Cplx::new(3.0, 0.0)).unwrap();
        assert!(matches!(mi_empirical(&w, &scaled, &d, 0.2, 0.5, &mc), Err(RobustnessError::NotNormalized { .. })));
        let auto = MonteCarlo { auto_normalize: true, ..mc };
        let n = mi_empirical(&w, &scaled, &d, 0.2, 0.5, &auto).unwrap();
        assert!((n.value - a.value).abs() < 1e-12);
    }

    #[test]
    fn report_echoes_config() {
        let (c, d) = (toeplitz(10, 0.9), toeplitz(10, 0.2));
        let r = influence_report(&EstimatorSpec::Rscm, 0.3, 0.1, &c, &d, 1.5, None).unwrap();
        assert_eq!(r.estimator, "rscm");
        assert!((r.mi_asymptotic - 0.7 * 0.1 * imi_scm(&c, &d).unwrap()).abs() < 1e-12);
        assert!(r.mi_empirical.is_none());
    }
}
