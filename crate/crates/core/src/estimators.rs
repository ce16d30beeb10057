//! Covariance estimators: SCM, linear shrinkage (RSCM), Maronna's M-estimator
//! and its regularized version.
//!
//! The M-estimators solve
//!
//! ```text
//! Z = (1 - rho) (1/n) sum_i u((1/N) y_i^H Z^{-1} y_i) y_i y_i^H + rho I
//! ```
//!
//! (`rho = 0` for Maronna's estimator). The solver iterates on the weight
//! vector `w_i = u(d_i)`: every iterate is `Z(w) = (1 - rho)/n Y diag(w) Y^H + rho I`,
//! whose quadratic forms `d_i` come from a Cholesky factorization. Because
//! `Z(T(w)) - Z(w)` is linear in `T(w) - w`, the matrix fixed-point residual
//! `|Z(T(w)) - Z(w)|_F / |Z(w)|_F` is evaluated exactly from the `n x n`
//! matrix `P_ij = |y_i^H y_j|^2` without forming the next iterate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, CMatrix, Cplx};
use crate::sampling::Dataset;
use crate::weights::{RegularizedContext, WeightFunction};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no convergence after {} iterations (residual {:.3e})", .0.iterations, .0.residual)]
    NonConvergence(Box<EstimatorResult>),
    #[error("iterate lost positive definiteness at iteration {0}")]
    SingularIterate(usize),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("inadmissible regularization: (1 - rho) * phi_inf * c = {0} must be < 1")]
    Admissibility(f64),
    #[error("invalid argument: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    #[default]
    Identity,
    /// The SCM, or the RSCM with the same `rho` for the regularized estimator.
    Scm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Acceleration {
    /// Plain fixed-point (Picard) iteration.
    None,
    /// Anderson mixing of the last `depth` weight vectors, falling back to a
    /// Picard step whenever a mixed iterate is unusable.
    Anderson { depth: usize },
}

impl Default for Acceleration {
    fn default() -> Self {
        Acceleration::Anderson { depth: 5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initializer: Initializer,
    pub acceleration: Acceleration,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_iterations: 200, initializer: Initializer::Identity, acceleration: Acceleration::default() }
    }
}

impl SolverOptions {
    pub fn picard() -> Self {
        Self { acceleration: Acceleration::None, ..Self::default() }
    }

    fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(EstimatorError::Parameter(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(EstimatorError::Parameter("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Where the fixed-point iteration starts.
#[derive(Clone, Copy, Debug, Default)]
pub enum Start<'a> {
    /// As selected by [`SolverOptions::initializer`].
    #[default]
    Options,
    /// From a matrix, e.g. a previous estimate.
    Matrix(&'a CMatrix),
    /// From per-sample weights, e.g. those of a solve at a nearby `rho`.
    Weights(&'a [f64]),
}

#[derive(Clone, Debug)]
pub struct EstimatorResult {
    pub estimate: CMatrix,
    /// Number of fixed-point map evaluations.
    pub iterations: usize,
    /// `|RHS(Z) - Z|_F / |Z|_F` at the returned `Z`.
    pub residual: f64,
    pub converged: bool,
    /// `u(d_i)` at the returned estimate.
    pub weights: Vec<f64>,
    /// `d_i = (1/N) y_i^H Z^{-1} y_i` at the returned estimate.
    pub quadratic_forms: Vec<f64>,
}

/// `(1/n) Y Y^H`.
pub fn scm(y: &Dataset) -> CMatrix {
    let n = y.len();
    linalg::weighted_gram(y.samples(), &vec![1.0; n], 1.0 / n as f64, 0.0)
}

/// `(1 - beta) SCM + beta I`.
pub fn rscm(y: &Dataset, beta: f64) -> Result<CMatrix, EstimatorError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(EstimatorError::Parameter(format!("shrinkage {beta} must lie in [0, 1]")));
    }
    let n = y.len();
    Ok(linalg::weighted_gram(y.samples(), &vec![1.0; n], (1.0 - beta) / n as f64, beta))
}

/// `(1/N) y_i^H Z^{-1} y_i` for every column, or `None` if `Z` is not
/// numerically positive definite.
pub fn quadratic_forms(z: &CMatrix, y: &CMatrix) -> Option<Vec<f64>> {
    let dim = z.nrows();
    let l = linalg::cholesky_lower(z)?;
    let mut b = vec![Cplx::new(0.0, 0.0); dim];
    let mut forms = Vec::with_capacity(y.ncols());
    for col in y.column_iter() {
        b.copy_from_slice(col.as_slice());
        let d = linalg::forward_substitute(l.as_slice(), dim, &mut b, 0) / dim as f64;
        if !d.is_finite() {
            return None;
        }
        forms.push(d);
    }
    Some(forms)
}

/// Maronna's estimator (no shrinkage). Requires `N < n` and `1 < phi_inf < n/N`.
pub fn maronna(y: &Dataset, w: &WeightFunction, opts: &SolverOptions) -> Result<EstimatorResult, EstimatorError> {
    maronna_from(y, w, opts, Start::Options)
}

pub fn maronna_from(y: &Dataset, w: &WeightFunction, opts: &SolverOptions, start: Start<'_>) -> Result<EstimatorResult, EstimatorError> {
    let c = y.aspect_ratio();
    if c >= 1.0 {
        return Err(EstimatorError::PreconditionViolation(format!("aspect ratio N/n = {c} must be below 1")));
    }
    let phi_inf = w.phi_infinity();
    if !(phi_inf > 1.0 && phi_inf < 1.0 / c) {
        return Err(EstimatorError::PreconditionViolation(format!("phi_inf = {phi_inf} must lie in (1, n/N = {})", 1.0 / c)));
    }
    FixedPoint::new(y, w, 0.0).solve(opts, start)
}

/// The regularized estimator with shrinkage `rho` in `(0, 1]`.
pub fn regularized_maronna(y: &Dataset, w: &WeightFunction, rho: f64, opts: &SolverOptions) -> Result<EstimatorResult, EstimatorError> {
    regularized_maronna_from(y, w, rho, opts, Start::Options)
}

pub fn regularized_maronna_from(
    y: &Dataset,
    w: &WeightFunction,
    rho: f64,
    opts: &SolverOptions,
    start: Start<'_>,
) -> Result<EstimatorResult, EstimatorError> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(EstimatorError::Parameter(format!("rho = {rho} must lie in (0, 1]")));
    }
    let ctx = RegularizedContext::new(rho, y.aspect_ratio()).map_err(|e| EstimatorError::Parameter(e.to_string()))?;
    if !ctx.is_admissible(w) {
        return Err(EstimatorError::Admissibility(ctx.admissibility_ratio(w)));
    }
    FixedPoint::new(y, w, rho).solve(opts, start)
}

struct FixedPoint<'a> {
    y: &'a Dataset,
    w: &'a WeightFunction,
    rho: f64,
    scale: f64,
    hadamard_gram: Option<DMatrix<f64>>,
}

impl<'a> FixedPoint<'a> {
    fn new(y: &'a Dataset, w: &'a WeightFunction, rho: f64) -> Self {
        Self { y, w, rho, scale: (1.0 - rho) / y.len() as f64, hadamard_gram: None }
    }

    fn matrix(&self, weights: &[f64]) -> CMatrix {
        linalg::weighted_gram(self.y.samples(), weights, self.scale, self.rho)
    }

    fn apply_u(&self, forms: &[f64]) -> Vec<f64> {
        forms.iter().map(|&d| self.w.weight(d)).collect()
    }

    /// `|Z(a) - Z(b)|_F` computed from `a - b` only.
    fn difference_norm(&mut self, delta: &[f64]) -> f64 {
        let p = self.hadamard_gram.get_or_insert_with(|| {
            let ys = self.y.samples();
            let g = linalg::matmul(&ys.adjoint(), ys);
            g.map(|z| z.norm_sqr())
        });
        let d = DVector::from_column_slice(delta);
        let q = d.dot(&(&*p * &d)).max(0.0);
        self.scale * q.sqrt()
    }

    fn initial_weights(&self, opts: &SolverOptions, start: Start<'_>) -> Result<Vec<f64>, EstimatorError> {
        let z0 = match start {
            Start::Weights(w) => {
                if w.len() != self.y.len() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(EstimatorError::Parameter("warm-start weights must be one nonnegative value per sample".into()));
                }
                return Ok(w.to_vec());
            }
            Start::Matrix(m) => {
                if m.shape() != (self.y.dim(), self.y.dim()) {
                    return Err(EstimatorError::Parameter("warm-start matrix has the wrong shape".into()));
                }
                m.clone()
            }
            Start::Options => match opts.initializer {
                Initializer::Identity => linalg::identity(self.y.dim()),
                Initializer::Scm => {
                    let n = self.y.len();
                    linalg::weighted_gram(self.y.samples(), &vec![1.0; n], (1.0 - self.rho) / n as f64, self.rho)
                }
            },
        };
        let forms = quadratic_forms(&z0, self.y.samples()).ok_or(EstimatorError::SingularIterate(0))?;
        Ok(self.apply_u(&forms))
    }

    fn solve(mut self, opts: &SolverOptions, start: Start<'_>) -> Result<EstimatorResult, EstimatorError> {
        opts.validate()?;
        if self.rho == 1.0 {
            let estimate = linalg::identity(self.y.dim());
            let forms = quadratic_forms(&estimate, self.y.samples()).expect("identity is positive definite");
            let weights = self.apply_u(&forms);
            return Ok(EstimatorResult { estimate, iterations: 1, residual: 0.0, converged: true, weights, quadratic_forms: forms });
        }
        let mut anderson = match opts.acceleration {
            Acceleration::Anderson { depth } if depth > 0 => Some(Anderson::new(depth)),
            _ => None,
        };
        let mut current = self.initial_weights(opts, start)?;
        // Last Picard image, used when a mixed iterate must be discarded.
        let mut fallback: Option<Vec<f64>> = None;
        let mut last_residual = f64::INFINITY;
        let mut iterations = 0;
        loop {
            iterations += 1;
            let z = self.matrix(&current);
            let forms = match quadratic_forms(&z, self.y.samples()) {
                Some(f) => f,
                None => match fallback.take() {
                    Some(picard) => {
                        log::debug!("mixed iterate not positive definite at iteration {iterations}, taking a Picard step");
                        if let Some(a) = anderson.as_mut() {
                            a.reset();
                        }
                        current = picard;
                        continue;
                    }
                    None => return Err(EstimatorError::SingularIterate(iterations)),
                },
            };
            let image = self.apply_u(&forms);
            let delta: Vec<f64> = image.iter().zip(&current).map(|(t, u)| t - u).collect();
            let residual = self.difference_norm(&delta) / linalg::frobenius(&z);
            if residual <= opts.tolerance || iterations >= opts.max_iterations {
                let result = EstimatorResult {
                    estimate: z,
                    iterations,
                    residual,
                    converged: residual <= opts.tolerance,
                    weights: image,
                    quadratic_forms: forms,
                };
                return if result.converged { Ok(result) } else { Err(EstimatorError::NonConvergence(Box::new(result))) };
            }
            let next = match anderson.as_mut() {
                Some(a) => {
                    if residual > 2.0 * last_residual {
                        a.reset();
                    }
                    let mixed = a.step(&current, &delta);
                    if mixed.iter().all(|x| x.is_finite() && *x > 0.0) {
                        fallback = Some(image);
                        mixed
                    } else {
                        a.reset();
                        fallback = None;
                        image
                    }
                }
                None => image,
            };
            last_residual = residual;
            current = next;
        }
    }
}

/// Type-II Anderson mixing on `x -> x + f(x)`.
struct Anderson {
    depth: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    dx: Vec<Vec<f64>>,
    df: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self { depth, prev: None, dx: Vec::new(), df: Vec::new() }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.dx.clear();
        self.df.clear();
    }

    fn step(&mut self, x: &[f64], f: &[f64]) -> Vec<f64> {
        if let Some((px, pf)) = self.prev.take() {
            self.dx.push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
            self.df.push(f.iter().zip(&pf).map(|(a, b)| a - b).collect());
            if self.dx.len() > self.depth {
                self.dx.remove(0);
                self.df.remove(0);
            }
        }
        self.prev = Some((x.to_vec(), f.to_vec()));
        let picard: Vec<f64> = x.iter().zip(f).map(|(a, b)| a + b).collect();
        let m = self.df.len();
        if m == 0 {
            return picard;
        }
        let n = x.len();
        let df = DMatrix::from_fn(n, m, |i, j| self.df[j][i]);
        let rhs = DVector::from_column_slice(f);
        let Ok(gamma) = df.clone().svd(true, true).solve(&rhs, 1e-12 * df.norm().max(f64::MIN_POSITIVE)) else {
            self.reset();
            return picard;
        };
        let mut out = picard;
        for j in 0..m {
            let g = gamma[j];
            for i in 0..n {
                out[i] -= g * (self.dx[j][i] + self.df[j][i]);
            }
        }
        out
    }
}

/// An estimator family, fitted with a shrinkage level `rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorSpec {
    Scm,
    /// `(1 - rho) SCM + rho I`.
    Rscm,
    /// Maronna's estimator for `rho = 0`, the regularized one otherwise.
    M(WeightFunction),
}

impl EstimatorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorSpec::Scm => "scm",
            EstimatorSpec::Rscm => "rscm",
            EstimatorSpec::M(w) => w.kind().name(),
        }
    }

    pub fn fit(&self, y: &Dataset, rho: f64, opts: &SolverOptions, start: Start<'_>) -> Result<EstimatorResult, EstimatorError> {
        let closed_form = |estimate: CMatrix| EstimatorResult {
            estimate,
            iterations: 0,
            residual: 0.0,
            converged: true,
            weights: vec![1.0; y.len()],
            quadratic_forms: Vec::new(),
        };
        match self {
            EstimatorSpec::Scm => Ok(closed_form(scm(y))),
            EstimatorSpec::Rscm => Ok(closed_form(rscm(y, rho)?)),
            EstimatorSpec::M(w) if rho == 0.0 => maronna_from(y, w, opts, start),
            EstimatorSpec::M(w) => regularized_maronna_from(y, w, rho, opts, start),
        }
    }
}

/// `(1 - rho) v SCM + rho I` for a scalar weight `v`.
pub(crate) fn shrunk_scm(y: &Dataset, v: f64, rho: f64) -> CMatrix {
    let n = y.len();
    linalg::weighted_gram(y.samples(), &vec![v; n], (1.0 - rho) / n as f64, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_clean, CovarianceModel, ScalarField};
    use crate::weights::WeightKind;

    fn data(dim: usize, n: usize, b: f64, seed: u64) -> Dataset {
        sample_clean(&CovarianceModel::toeplitz(dim, b).unwrap(), n, seed, ScalarField::Complex).unwrap()
    }

    fn rhs(y: &Dataset, w: &WeightFunction, rho: f64, z: &CMatrix) -> CMatrix {
        let forms = quadratic_forms(z, y.samples()).unwrap();
        let weights: Vec<f64> = forms.iter().map(|&d| w.u(d).unwrap()).collect();
        linalg::weighted_gram(y.samples(), &weights, (1.0 - rho) / y.len() as f64, rho)
    }

    fn rel(a: &CMatrix, b: &CMatrix) -> f64 {
        linalg::frobenius(&(a - b)) / linalg::frobenius(b)
    }

    #[test]
    fn scm_examples() {
        let y = Dataset::from_samples(CMatrix::from_column_slice(2, 1, &[Cplx::new(1.0, 1.0), Cplx::new(2.0, 0.0)])).unwrap();
        let s = scm(&y);
        assert_eq!(s[(0, 0)], Cplx::new(2.0, 0.0));
        assert_eq!(s[(0, 1)], Cplx::new(2.0, 2.0));
        assert!(linalg::hermitian_eigenvalues(&s)[0].abs() < 1e-14);

        let n = 3usize;
        let basis = CMatrix::identity(n, n) * Cplx::new((n as f64).sqrt(), 0.0);
        let y = Dataset::from_samples(basis).unwrap();
        let s = scm(&y);
        assert!(rel(&s, &linalg::identity(n)) < 1e-15);
        let half = rscm(&y, 0.5).unwrap();
        assert!(rel(&half, &((s.clone() + linalg::identity(n)) * Cplx::new(0.5, 0.0))) < 1e-15);
        assert_eq!(rscm(&y, 1.0).unwrap(), linalg::identity(n));
        assert!(rscm(&y, 1.5).is_err());

        let y = data(12, 20, 0.7, 1);
        let s = scm(&y);
        assert!(linalg::hermitian_defect(&s) <= 1e-14);
        assert!(linalg::hermitian_eigenvalues(&s)[0] > -1e-12);
        assert_eq!(rscm(&y, 0.0).unwrap(), s);
    }

    #[test]
    fn rho_one_is_identity_in_one_iteration() {
        let y = data(10, 8, 0.5, 2);
        let w = WeightFunction::m_tyler(0.8, 0.1).unwrap();
        let r = regularized_maronna(&y, &w, 1.0, &SolverOptions::default()).unwrap();
        assert_eq!(r.estimate, linalg::identity(10));
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
    }

    #[test]
    fn returned_weights_are_u_of_returned_forms() {
        let y = data(20, 40, 0.8, 3);
        for kind in [WeightKind::MTyler, WeightKind::MHuber] {
            let w = WeightFunction::new(kind, 1.0, 0.1).unwrap();
            for res in [maronna(&y, &w, &SolverOptions::default()).unwrap(), regularized_maronna(&y, &w, 0.4, &SolverOptions::default()).unwrap()] {
                let forms = quadratic_forms(&res.estimate, y.samples()).unwrap();
                for ((f, g), wt) in forms.iter().zip(&res.quadratic_forms).zip(&res.weights) {
                    assert!((f - g).abs() <= 1e-12 * g);
                    assert_eq!(*wt, w.u(*g).unwrap());
                }
            }
        }
    }

    #[test]
    fn residual_matches_direct_evaluation() {
        let y = data(30, 20, 0.9, 4);
        let w = WeightFunction::m_tyler(20.0 / 30.0, 0.1).unwrap();
        for opts in [SolverOptions::picard(), SolverOptions::default()] {
            let r = regularized_maronna(&y, &w, 0.5, &opts).unwrap();
            let direct = rel(&rhs(&y, &w, 0.5, &r.estimate), &r.estimate);
            assert!(direct <= 1e-9, "{direct}");
            assert!((direct - r.residual).abs() <= 1e-6 * r.residual.max(1e-15) + 1e-14);
            let floor = linalg::hermitian_eigenvalues(&r.estimate)[0];
            assert!(floor >= 0.5 - 1e-9);
        }
    }

    #[test]
    fn maronna_near_scm_for_small_aspect_ratio() {
        // phi^{-1}(1) = 1 for M-Tyler with K = 1, so the equivalent is the SCM itself.
        let y = data(20, 500, 0.0, 5);
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        let r = maronna(&y, &w, &SolverOptions::default()).unwrap();
        assert!(rel(&r.estimate, &scm(&y)) < 0.2);
    }

    #[test]
    fn restart_from_fixed_point_is_immediate() {
        let y = data(15, 30, 0.6, 6);
        let w = WeightFunction::m_huber(1.0, 0.1).unwrap();
        let opts = SolverOptions::picard();
        let r = maronna(&y, &w, &opts).unwrap();
        let again = maronna_from(&y, &w, &opts, Start::Matrix(&r.estimate)).unwrap();
        assert!(again.iterations <= 2, "{}", again.iterations);
        let warm = regularized_maronna_from(&y, &w, 0.3, &opts, Start::Weights(&r.weights)).unwrap();
        let cold = regularized_maronna(&y, &w, 0.3, &opts).unwrap();
        assert!(rel(&warm.estimate, &cold.estimate) < 1e-8);
    }

    #[test]
    fn small_rho_approaches_maronna() {
        // The gap is first order in rho, with a slope that grows with the
        // condition number of C; the white case keeps it below 1e-2 at 1e-3.
        let y = data(10, 60, 0.0, 7);
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        let plain = maronna(&y, &w, &SolverOptions::default()).unwrap();
        let gap = |rho: f64| rel(&regularized_maronna(&y, &w, rho, &SolverOptions::default()).unwrap().estimate, &plain.estimate);
        let (g3, g4) = (gap(1e-3), gap(1e-4));
        assert!(g3 < 1e-2, "{g3}");
        assert!((g3 / g4 - 10.0).abs() < 1.0, "{g3} {g4}");
    }

    #[test]
    fn preconditions_are_enforced() {
        let wide = data(10, 8, 0.5, 8);
        let w = WeightFunction::m_tyler(1.0, 0.1).unwrap();
        assert!(matches!(maronna(&wide, &w, &SolverOptions::default()), Err(EstimatorError::PreconditionViolation(_))));
        let tall = data(10, 40, 0.5, 8);
        let low = WeightFunction::m_tyler(0.5, 0.1).unwrap();
        assert!(matches!(maronna(&tall, &low, &SolverOptions::default()), Err(EstimatorError::PreconditionViolation(_))));
        // c = 1.25, phi_inf = 1.1: rho must exceed 1 - 1/1.375
        assert!(matches!(regularized_maronna(&wide, &w, 0.2, &SolverOptions::default()), Err(EstimatorError::Admissibility(_))));
        assert!(regularized_maronna(&wide, &w, 0.0, &SolverOptions::default()).is_err());
        let bad = SolverOptions { max_iterations: 0, ..SolverOptions::default() };
        assert!(matches!(regularized_maronna(&wide, &w, 0.5, &bad), Err(EstimatorError::Parameter(_))));
    }

    #[test]
    fn non_convergence_carries_last_iterate() {
        let y = data(10, 20, 0.9, 9);
        let w = WeightFunction::m_tyler(0.5, 0.1).unwrap();
        let opts = SolverOptions { max_iterations: 2, tolerance: 1e-15, ..SolverOptions::picard() };
        match regularized_maronna(&y, &w, 0.5, &opts) {
            Err(EstimatorError::NonConvergence(last)) => {
                assert_eq!(last.iterations, 2);
                assert!(!last.converged);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unitary_equivariance() {
        let y = data(6, 9, 0.5, 10);
        let w = WeightFunction::m_huber(0.7, 0.1).unwrap();
        let (_, q) = linalg::hermitian_eigen(&{
            let g = data(6, 6, 0.3, 11);
            let mut h = g.samples() + g.samples().adjoint();
            linalg::symmetrize(&mut h);
            h
        });
        let rotated = Dataset::from_samples(linalg::matmul(&q, y.samples())).unwrap();
        let a = regularized_maronna(&y, &w, 0.4, &SolverOptions::default()).unwrap();
        let b = regularized_maronna(&rotated, &w, 0.4, &SolverOptions::default()).unwrap();
        let mapped = linalg::matmul(&linalg::matmul(&q, &a.estimate), &q.adjoint());
        assert!(rel(&b.estimate, &mapped) < 1e-8);
    }
}
