//! The continuous Bernoulli distribution `p(x | λ) = C(λ) λˣ (1-λ)^{1-x}` on `[0, 1]`.
//!
//! With `λ = σ(a)` the log normalizer and its derivatives reduce to hyperbolic
//! functions of `a`:
//!
//! ```text
//! C(σ(a))            = a coth(a/2)            (2 at a = 0)
//! d/da  log C(σ(a))  = 1/a - 1/sinh(a)        (0 at a = 0)
//! d²/da² log C(σ(a)) = -1/a² + coth(a)/sinh(a) (1/6 at a = 0)
//! ```

use crate::error::{Error, Result};

const LAMBDA_SERIES_CUTOFF: f64 = 1e-6;
const LATENT_SERIES_CUTOFF: f64 = 1e-4;

/// `log C(σ(a))` and its first two derivatives with respect to `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbTerms {
    pub log_c: f64,
    pub dlog_c: f64,
    pub d2log_c: f64,
}

/// Normalizing constant `C(λ) = 2 atanh(1-2λ) / (1-2λ)`, equal to 2 at `λ = 1/2`.
pub fn cb_normalizer(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "continuous Bernoulli parameter must lie in (0, 1), got {lambda}"
        )));
    }
    let z = 1.0 - 2.0 * lambda;
    if z.abs() < LAMBDA_SERIES_CUTOFF {
        // atanh(z)/z = 1 + z²/3 + z⁴/5 + ...
        let z2 = z * z;
        return Ok(2.0 * (1.0 + z2 / 3.0 + z2 * z2 / 5.0));
    }
    Ok(2.0 * z.atanh() / z)
}

/// Closed-form `log C(σ(a))`, `d/da`, `d²/da²`.
pub fn cb_terms_at_latent(a: f64) -> CbTerms {
    let abs = a.abs();
    if abs < LATENT_SERIES_CUTOFF {
        let a2 = a * a;
        return CbTerms {
            log_c: std::f64::consts::LN_2 + a2 / 12.0,
            dlog_c: a / 6.0 - 7.0 * a * a2 / 360.0,
            d2log_c: 1.0 / 6.0 - 7.0 * a2 / 120.0,
        };
    }
    // log(a coth(a/2)) is even; coth(x) = (1 + e^{-2x}) / (1 - e^{-2x})
    let e = (-abs).exp();
    let log_c = abs.ln() + e.ln_1p() - (-e).ln_1p();
    let dlog_c = 1.0 / a - 1.0 / a.sinh();
    let d2log_c = -1.0 / (a * a) + 1.0 / (a.tanh() * a.sinh());
    CbTerms {
        log_c,
        dlog_c,
        d2log_c,
    }
}

/// `log p(x | λ)` for `x ∈ [0, 1]`.
pub fn cb_log_density(x: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!(
            "continuous Bernoulli support is [0, 1], got {x}"
        )));
    }
    let log_c = cb_normalizer(lambda)?.ln();
    Ok(log_c + x * lambda.ln() + (1.0 - x) * (-lambda).ln_1p())
}

/// `log C(σ(a)) - log(1 + eᵃ)`, the λ-dependent part of the log density,
/// written as `-log((eᵃ - 1)/a)` and evaluated without overflow.
pub(crate) fn log_partition(a: f64) -> f64 {
    crate::numeric::log1p_exp(a) - cb_terms_at_latent(a).log_c
}
