//! Standard normal distribution function, upper tail and quantile.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `1 - Φ(x)`, accurate in the far upper tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Two-sided p-value `2(1 - Φ(|z|))`, clamped to `[0, 1]`.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// `Φ⁻¹(q)` for `q` in `(0, 1)`.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * q);
    // one Newton step against the cdf tightens the inverse
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density > 0.0 {
        // Φ(x) - q, evaluated on the side with more precision
        let err = if q > 0.5 {
            (1.0 - q) - normal_sf(x)
        } else {
            normal_cdf(x) - q
        };
        x -= err / density;
    }
    Ok(x)
}

/// Upper `α/2` critical value `z_{α/2} = Φ⁻¹(1 - α/2)`.
pub fn two_sided_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    normal_quantile(1.0 - alpha / 2.0)
}
