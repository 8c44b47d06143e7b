//! α-fair aggregate utility over allocations.
//!
//! For entity `i` with base utility `u_i(w_i, x_i) > 0`,
//!
//! ```text
//! U_i = (u_i^(1-α) - 1) / (1 - α)    α ≠ 1
//! U_i = log u_i                       α = 1
//! ```
//!
//! and the aggregate is `Σ_i U_i`. The shipped base utility is the shifted SNR
//! `u_i = 1 + w_i x_i`.

use crate::error::{Error, Result};

/// Per-entity base utility `u_i(w_i, x_i)`.
pub trait BaseUtility {
    fn value(&self, w: f64, x: f64) -> f64;
    /// Partial derivative with respect to `w`.
    fn dw(&self, w: f64, x: f64) -> f64;
    /// `log u`, overridable for accuracy near `u = 1`.
    fn ln_value(&self, w: f64, x: f64) -> f64 {
        self.value(w, x).ln()
    }
}

/// `u = 1 + w·x`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftedSnr;

impl BaseUtility for ShiftedSnr {
    fn value(&self, w: f64, x: f64) -> f64 {
        1.0 + w * x
    }

    fn dw(&self, _w: f64, x: f64) -> f64 {
        x
    }

    fn ln_value(&self, w: f64, x: f64) -> f64 {
        (w * x).ln_1p()
    }
}

pub const DEFAULT_ALPHA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessUtility<B = ShiftedSnr> {
    alpha: f64,
    n: usize,
    alpha_tol: f64,
    base: B,
}

impl FairnessUtility<ShiftedSnr> {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        Self::with_base(alpha, n, ShiftedSnr)
    }
}

impl<B: BaseUtility> FairnessUtility<B> {
    pub fn with_base(alpha: f64, n: usize, base: B) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and >= 0, got {alpha}"
            )));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("number of entities must be >= 1".into()));
        }
        Ok(Self {
            alpha,
            n,
            alpha_tol: DEFAULT_ALPHA_TOL,
            base,
        })
    }

    pub fn with_alpha_tol(mut self, alpha_tol: f64) -> Result<Self> {
        if !(alpha_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha_tol must be positive, got {alpha_tol}"
            )));
        }
        self.alpha_tol = alpha_tol;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha_tol(&self) -> f64 {
        self.alpha_tol
    }

    fn is_log_branch(&self) -> bool {
        (self.alpha - 1.0).abs() <= self.alpha_tol
    }

    /// `U_i` for one entity; the caller guarantees `u_i > 0`.
    #[inline]
    pub(crate) fn entity_value(&self, w: f64, x: f64) -> f64 {
        let log_u = self.base.ln_value(w, x);
        if self.is_log_branch() {
            log_u
        } else {
            // (u^(1-α) - 1)/(1-α) evaluated in log space
            let t = 1.0 - self.alpha;
            (t * log_u).exp_m1() / t
        }
    }

    /// `∂U_i/∂w_i = u^(-α)·∂u/∂w`.
    #[inline]
    pub(crate) fn entity_gradient(&self, w: f64, x: f64) -> f64 {
        let log_u = self.base.ln_value(w, x);
        (-self.alpha * log_u).exp() * self.base.dw(w, x)
    }

    fn check(&self, w: &[f64], x: &[f64]) -> Result<()> {
        if w.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: w.len(),
            });
        }
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        for (&wi, &xi) in w.iter().zip(x) {
            let u = self.base.value(wi, xi);
            if !(u > 0.0) {
                return Err(Error::Domain(u));
            }
        }
        Ok(())
    }

    /// Aggregate utility `Σ_i U_i(α, w_i, x_i)` without domain checks.
    pub(crate) fn value_unchecked(&self, w: &[f64], x: &[f64]) -> f64 {
        w.iter().zip(x).map(|(&wi, &xi)| self.entity_value(wi, xi)).sum()
    }

    pub(crate) fn gradient_into(&self, w: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        for ((o, &wi), &xi) in out.iter_mut().zip(w).zip(x) {
            *o += scale * self.entity_gradient(wi, xi);
        }
    }
}

/// Aggregate α-fair utility of allocation `w` in state `x`.
pub fn aggregate_utility<B: BaseUtility>(u: &FairnessUtility<B>, w: &[f64], x: &[f64]) -> Result<f64> {
    u.check(w, x)?;
    Ok(u.value_unchecked(w, x))
}

/// Gradient of [`aggregate_utility`] with respect to `w`.
pub fn utility_gradient<B: BaseUtility>(u: &FairnessUtility<B>, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    u.check(w, x)?;
    let mut g = vec![0.0; u.n];
    u.gradient_into(w, x, 1.0, &mut g);
    Ok(g)
}
