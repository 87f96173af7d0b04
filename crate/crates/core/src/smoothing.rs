//! C² smoothing of the positive part `max(0, x)`.
//!
//! On the band `(-ε/2, ε/2)` the function is the cubic–quartic
//! `u³/ε² − u⁴/(2ε³)` in the shifted variable `u = x + ε/2`; outside the band
//! it coincides with `0` (left) or `x` (right). Value, slope and curvature
//! all match at both band edges, `0 ≤ g' ≤ 1` and `g'' ≥ 0`.

use crate::error::{Error, Result};

/// Width of the smoothing band.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SmoothingParams {
    epsilon: f64,
}

impl SmoothingParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "smoothing width must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn half_width(&self) -> f64 {
        0.5 * self.epsilon
    }
}

/// Smoothed positive part `g_ε(x)`.
#[inline]
pub fn smooth_plus(x: f64, p: SmoothingParams) -> f64 {
    let eps = p.epsilon;
    let h = 0.5 * eps;
    if x <= -h {
        0.0
    } else if x >= h {
        x
    } else {
        let u = x + h;
        let u3 = u * u * u;
        u3 / (eps * eps) - u3 * u / (2.0 * eps * eps * eps)
    }
}

/// First derivative `g'_ε(x)`, in `[0, 1]`.
#[inline]
pub fn smooth_plus_d1(x: f64, p: SmoothingParams) -> f64 {
    let eps = p.epsilon;
    let h = 0.5 * eps;
    if x <= -h {
        0.0
    } else if x >= h {
        1.0
    } else {
        let s = (x + h) / eps;
        s * s * (3.0 - 2.0 * s)
    }
}

/// Second derivative `g''_ε(x)`, nonnegative and supported on the band.
#[inline]
pub fn smooth_plus_d2(x: f64, p: SmoothingParams) -> f64 {
    let eps = p.epsilon;
    let h = 0.5 * eps;
    if x <= -h || x >= h {
        0.0
    } else {
        let s = (x + h) / eps;
        6.0 * s * (1.0 - s) / eps
    }
}
