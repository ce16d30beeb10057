//! Weight functions and the scalar calculus derived from them.
//!
//! A weight function `u` assigns every sample a weight computed from its
//! normalized quadratic form `(1/N) y^H Z^{-1} y`. Two bounded families are
//! provided:
//!
//! * M-Tyler: `u(x) = K (1 + t) / (t + x)`
//! * M-Huber: `u(x) = K min{1, (1 + t) / (t + x)}`
//!
//! Both have `phi(x) = x u(x)` strictly increasing towards `phi_inf = K (1 + t)`.
//!
//! For a shrinkage level `rho` and an aspect ratio `c`, [`EquivalentWeight`]
//! builds `g(x) = x / (1 - (1 - rho) c phi(x))` and `v = u o g^{-1}`, which is
//! the weight carried by every sample in the deterministic equivalent of the
//! estimator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("argument {0} is outside [0, inf)")]
    Domain(f64),
    #[error("value {value} is outside the range [0, {sup}) of phi")]
    Range { value: f64, sup: f64 },
    #[error("invalid weight function parameter: {0}")]
    Parameter(String),
    #[error("inadmissible regularization: (1 - rho) * phi_inf * c = {0} must be < 1")]
    Admissibility(f64),
    #[error("v is not differentiable at x = {0} (M-Huber kink)")]
    Kink(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightKind {
    MTyler,
    MHuber,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::MTyler => "mtyler",
            WeightKind::MHuber => "mhuber",
        }
    }
}

/// Side used for one-sided derivatives at the M-Huber kink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// How `dv/dx` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Chain rule on the exact `v = u o g^{-1}`.
    Exact,
    /// Closed-form small-`t` approximation `v(x) ~ u(s x)`, `s = 1 - (1 - rho) c K`.
    #[default]
    SmallT,
}

/// Distance from the M-Huber break point below which a point counts as the kink.
pub const KINK_TOLERANCE: f64 = 1e-12;

const G_INVERSE_MAX_ITERATIONS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightFunction {
    kind: WeightKind,
    scale: f64,
    shape: f64,
}

fn check_domain(x: f64) -> Result<(), WeightError> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(WeightError::Domain(x))
    }
}

impl WeightFunction {
    pub fn new(kind: WeightKind, scale: f64, shape: f64) -> Result<Self, WeightError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(WeightError::Parameter(format!("scale K = {scale} must be positive")));
        }
        if !(shape.is_finite() && shape > 0.0) {
            return Err(WeightError::Parameter(format!("shape t = {shape} must be positive")));
        }
        Ok(Self { kind, scale, shape })
    }

    pub fn m_tyler(scale: f64, shape: f64) -> Result<Self, WeightError> {
        Self::new(WeightKind::MTyler, scale, shape)
    }

    pub fn m_huber(scale: f64, shape: f64) -> Result<Self, WeightError> {
        Self::new(WeightKind::MHuber, scale, shape)
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    /// The scale `K`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The shape `t`.
    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn u(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.weight(x))
    }

    /// `u(x)` without the domain check; `x` must be finite and nonnegative.
    pub(crate) fn weight(&self, x: f64) -> f64 {
        let (k, t) = (self.scale, self.shape);
        match self.kind {
            WeightKind::MTyler => k * (1.0 + t) / (t + x),
            WeightKind::MHuber if x <= 1.0 => k,
            WeightKind::MHuber => k * (1.0 + t) / (t + x),
        }
    }

    /// `du/dx`. At the M-Huber break point `x = 1` the side picks the branch.
    pub(crate) fn weight_derivative(&self, x: f64, side: Side) -> f64 {
        let (k, t) = (self.scale, self.shape);
        let hyperbolic = -k * (1.0 + t) / ((t + x) * (t + x));
        match self.kind {
            WeightKind::MTyler => hyperbolic,
            WeightKind::MHuber => {
                if x < 1.0 || (x == 1.0 && side == Side::Left) {
                    0.0
                } else {
                    hyperbolic
                }
            }
        }
    }

    pub fn u_at_zero(&self) -> f64 {
        self.weight(0.0)
    }

    pub fn phi(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.phi_raw(x))
    }

    pub(crate) fn phi_raw(&self, x: f64) -> f64 {
        x * self.weight(x)
    }

    pub(crate) fn phi_derivative(&self, x: f64, side: Side) -> f64 {
        self.weight(x) + x * self.weight_derivative(x, side)
    }

    /// `lim_{x -> inf} phi(x) = K (1 + t)`; never attained.
    pub fn phi_infinity(&self) -> f64 {
        self.scale * (1.0 + self.shape)
    }

    /// Inverse of `phi` on `[0, phi_inf)`, in closed form for both families.
    pub fn phi_inverse(&self, y: f64) -> Result<f64, WeightError> {
        check_domain(y)?;
        let sup = self.phi_infinity();
        if y >= sup {
            return Err(WeightError::Range { value: y, sup });
        }
        let (k, t) = (self.scale, self.shape);
        let hyperbolic = y * t / (k * (1.0 + t) - y);
        Ok(match self.kind {
            WeightKind::MTyler => hyperbolic,
            WeightKind::MHuber if y <= k => y / k,
            WeightKind::MHuber => hyperbolic,
        })
    }

    fn is_kink(&self, x: f64) -> bool {
        self.kind == WeightKind::MHuber && (x - 1.0).abs() <= KINK_TOLERANCE
    }
}

/// Shrinkage level `rho` and aspect ratio `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizedContext {
    rho: f64,
    c: f64,
}

impl RegularizedContext {
    /// `rho = 0` is accepted and denotes the non-regularized estimator.
    pub fn new(rho: f64, c: f64) -> Result<Self, WeightError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(WeightError::Parameter(format!("rho = {rho} must lie in [0, 1]")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(WeightError::Parameter(format!("aspect ratio c = {c} must be positive")));
        }
        Ok(Self { rho, c })
    }

    pub fn non_regularized(c: f64) -> Result<Self, WeightError> {
        Self::new(0.0, c)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `(1 - rho) phi_inf c`; admissible when below one.
    pub fn admissibility_ratio(&self, w: &WeightFunction) -> f64 {
        (1.0 - self.rho) * w.phi_infinity() * self.c
    }

    pub fn is_admissible(&self, w: &WeightFunction) -> bool {
        self.admissibility_ratio(w) < 1.0
    }
}

/// `rho_0 = max{0, 1 - 1/(c phi_inf)}`: every `rho` in `(rho_0, 1]` is admissible.
pub fn min_admissible_rho(w: &WeightFunction, c: f64) -> f64 {
    (1.0 - 1.0 / (c * w.phi_infinity())).max(0.0)
}

/// `g`, `g^{-1}` and `v = u o g^{-1}` for a weight function under a fixed
/// admissible `(rho, c)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalentWeight {
    weight: WeightFunction,
    ctx: RegularizedContext,
    beta: f64,
}

impl EquivalentWeight {
    pub fn new(weight: WeightFunction, ctx: RegularizedContext) -> Result<Self, WeightError> {
        let ratio = ctx.admissibility_ratio(&weight);
        if ratio >= 1.0 {
            return Err(WeightError::Admissibility(ratio));
        }
        Ok(Self { weight, ctx, beta: (1.0 - ctx.rho) * ctx.c })
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn context(&self) -> RegularizedContext {
        self.ctx
    }

    pub fn g(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.g_raw(x))
    }

    fn g_raw(&self, x: f64) -> f64 {
        x / (1.0 - self.beta * self.weight.phi_raw(x))
    }

    fn g_derivative(&self, z: f64, side: Side) -> f64 {
        let denom = 1.0 - self.beta * self.weight.phi_raw(z);
        (denom + z * self.beta * self.weight.phi_derivative(z, side)) / (denom * denom)
    }

    /// Inverse of `g`, by bisection on `[y (1 - (1 - rho) c phi_inf), y]`.
    pub fn g_inverse(&self, y: f64) -> Result<f64, WeightError> {
        check_domain(y)?;
        Ok(self.g_inverse_raw(y))
    }

    pub(crate) fn g_inverse_raw(&self, y: f64) -> f64 {
        if y == 0.0 || self.beta == 0.0 {
            return y;
        }
        let mut lo = y * (1.0 - self.beta * self.weight.phi_infinity());
        let mut hi = y;
        for _ in 0..G_INVERSE_MAX_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.g_raw(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (self.g_raw(lo) - y).abs() <= (self.g_raw(hi) - y).abs() {
            lo
        } else {
            hi
        }
    }

    pub fn v(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.v_raw(x))
    }

    pub(crate) fn v_raw(&self, x: f64) -> f64 {
        self.weight.weight(self.g_inverse_raw(x))
    }

    /// `phi(g^{-1}(x))`, equivalently `x v(x) / (1 + (1 - rho) c x v(x))`.
    pub fn phi_of_g_inverse(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.phi_of_g_inverse_raw(x))
    }

    pub(crate) fn phi_of_g_inverse_raw(&self, x: f64) -> f64 {
        self.weight.phi_raw(self.g_inverse_raw(x))
    }

    fn small_t_scale(&self) -> f64 {
        1.0 - self.beta * self.weight.scale
    }

    /// Small-`t` closed form `v(x) ~ u(s x)` with `s = 1 - (1 - rho) c K`.
    ///
    /// With `K = 1/c` this is `(1/c)(1 + t)/(t + rho x)` for M-Tyler and the
    /// matching two-piece form for M-Huber.
    pub fn v_small_t(&self, x: f64) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(self.weight.weight(self.small_t_scale() * x))
    }

    /// Location of the non-differentiable point of `v` (M-Huber only).
    pub fn kink_location(&self, mode: DerivativeMode) -> Option<f64> {
        if self.weight.kind != WeightKind::MHuber {
            return None;
        }
        Some(match mode {
            DerivativeMode::Exact => self.g_raw(1.0),
            DerivativeMode::SmallT => 1.0 / self.small_t_scale(),
        })
    }

    /// `dv/dx`; errors at the M-Huber kink.
    pub fn v_derivative(&self, x: f64, mode: DerivativeMode) -> Result<f64, WeightError> {
        check_domain(x)?;
        let at_kink = match mode {
            DerivativeMode::Exact => self.weight.is_kink(self.g_inverse_raw(x)),
            DerivativeMode::SmallT => self.weight.is_kink(self.small_t_scale() * x),
        };
        if at_kink {
            return Err(WeightError::Kink(x));
        }
        self.v_derivative_one_sided(x, mode, Side::Right)
    }

    /// One-sided `dv/dx`; away from the kink both sides coincide.
    pub fn v_derivative_one_sided(&self, x: f64, mode: DerivativeMode, side: Side) -> Result<f64, WeightError> {
        check_domain(x)?;
        Ok(match mode {
            DerivativeMode::Exact => {
                let mut z = self.g_inverse_raw(x);
                if self.weight.is_kink(z) {
                    z = 1.0;
                }
                self.weight.weight_derivative(z, side) / self.g_derivative(z, side)
            }
            DerivativeMode::SmallT => {
                let s = self.small_t_scale();
                let mut z = s * x;
                if self.weight.is_kink(z) {
                    z = 1.0;
                }
                s * self.weight.weight_derivative(z, side)
            }
        })
    }
}
