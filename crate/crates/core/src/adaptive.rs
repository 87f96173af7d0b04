//! Practical norm test and the sample-size update.

use crate::cvar::GradientEstimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormTestConfig {
    pub theta: f64,
    pub alpha: f64,
    /// Largest factor by which the sample size may grow in one step.
    pub growth_cap: f64,
}

impl NormTestConfig {
    pub fn new(theta: f64, alpha: f64, growth_cap: f64) -> Result<Self> {
        if !(theta > 0.0 && alpha > 0.0 && growth_cap >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "norm test needs theta > 0, alpha > 0, growth_cap >= 1 \
                 (got {theta}, {alpha}, {growth_cap})"
            )));
        }
        Ok(Self {
            theta,
            alpha,
            growth_cap,
        })
    }
}

impl Default for NormTestConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            alpha: 0.5,
            growth_cap: 10.0,
        }
    }
}

/// Ingredients of the test ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    /// `Σ_j ‖term_j − mean‖²`.
    pub sample_variance_sum: f64,
    pub m: usize,
    /// `‖(z_{k+1} − z_k)/α‖²`.
    pub residual_norm_sq: f64,
}

impl VarianceReport {
    pub fn from_estimate(g: &GradientEstimate, residual_norm_sq: f64) -> Self {
        Self {
            sample_variance_sum: g.variance_sum,
            m: g.sample_size,
            residual_norm_sq,
        }
    }

    pub fn rho(&self, theta: f64) -> Result<f64> {
        ratio(self.sample_variance_sum, self.m, theta, self.residual_norm_sq)
    }
}

fn ratio(var_sum: f64, m: usize, theta: f64, residual_sq: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::TooFewSamples { required: 2, got: m });
    }
    if residual_sq == 0.0 {
        return Ok(0.0);
    }
    let m = m as f64;
    Ok(var_sum / ((m - 1.0) * m * theta * theta * residual_sq))
}

/// `ϱ = Σ_j ‖term_j − mean‖² / ((M−1) M θ² ‖R‖²)` from scalar or vector terms
/// given by their squared deviations. A zero residual returns `0`.
pub fn rho_cvar(terms: &[Vec<f64>], config: &NormTestConfig, residual_norm: f64) -> Result<f64> {
    let m = terms.len();
    if m < 2 {
        return Err(Error::TooFewSamples { required: 2, got: m });
    }
    let dim = terms[0].len();
    let mut mean = vec![0.0; dim];
    for t in terms {
        if t.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: t.len(),
            });
        }
        for (a, b) in mean.iter_mut().zip(t) {
            *a += b / m as f64;
        }
    }
    let var_sum: f64 = terms
        .iter()
        .map(|t| t.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    ratio(var_sum, m, config.theta, residual_norm * residual_norm)
}

/// `M_k` when `ϱ ≤ 1`, otherwise `⌈min(ϱ, cap) M_k⌉`.
pub fn next_sample_size(m_k: usize, rho: f64, config: &NormTestConfig) -> usize {
    if !(rho > 1.0) {
        return m_k;
    }
    let grown = (rho.min(config.growth_cap) * m_k as f64).ceil();
    // ϱ M_k can land a hair above an integer through rounding in ϱ.
    let near = grown - 1.0;
    let exact = rho.min(config.growth_cap) * m_k as f64;
    let m = if (exact - near).abs() <= 1e-9 * exact { near } else { grown };
    (m as usize).max(m_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(theta: f64, cap: f64) -> NormTestConfig {
        NormTestConfig::new(theta, 0.5, cap).unwrap()
    }

    #[test]
    fn equal_terms_give_zero() {
        let t = vec![vec![1.0, 2.0]; 5];
        assert_eq!(rho_cvar(&t, &cfg(0.5, 10.0), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn hand_examples() {
        let t = vec![vec![1.0], vec![3.0]];
        assert_eq!(rho_cvar(&t, &cfg(0.5, 10.0), 2.0).unwrap(), 1.0);
        assert_eq!(rho_cvar(&t, &cfg(1.0, 10.0), 2.0).unwrap(), 0.25);
    }

    #[test]
    fn too_few_and_stationary() {
        assert!(matches!(
            rho_cvar(&[vec![1.0]], &cfg(0.5, 10.0), 1.0),
            Err(Error::TooFewSamples { .. })
        ));
        let t = vec![vec![1.0], vec![3.0]];
        assert_eq!(rho_cvar(&t, &cfg(0.5, 10.0), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn sample_size_update() {
        assert_eq!(next_sample_size(10, 0.5, &cfg(0.5, 10.0)), 10);
        assert_eq!(next_sample_size(10, 1.7, &cfg(0.5, 10.0)), 17);
        assert_eq!(next_sample_size(10, 100.0, &cfg(0.5, 4.0)), 40);
        assert_eq!(next_sample_size(10, 1.71, &cfg(0.5, 10.0)), 18);
    }

    #[test]
    fn config_validation() {
        assert!(NormTestConfig::new(0.0, 0.5, 10.0).is_err());
        assert!(NormTestConfig::new(0.5, 0.5, 0.5).is_err());
    }
}
