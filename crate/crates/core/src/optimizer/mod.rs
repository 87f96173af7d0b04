//! Drivers for nominal adaptive sampling and adaptive importance sampling,
//! plus the deterministic reference solver.

mod reference;
mod run;
mod surrogate;

pub use reference::{compute_reference, Reference, ReferenceCache, ReferenceConfig, ReferenceKey};
pub use run::{run_alg1, run_alg2};
pub use surrogate::{BuiltSurrogate, ExactFactory, RomFactory, SurrogateFactory, SurrogateRequest};

use crate::adaptive::NormTestConfig;
use crate::cvar::CvarParams;
use crate::error::{Error, Result};
use crate::model::ControlVector;
use serde::{Deserialize, Serialize};

/// Convex admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Projection {
    #[default]
    Identity,
    /// Componentwise `lower ≤ z_i ≤ upper` on the coefficients.
    Box { lower: f64, upper: f64 },
}

impl Projection {
    pub fn project(&self, z: &ControlVector) -> ControlVector {
        match *self {
            Projection::Identity => z.clone(),
            Projection::Box { lower, upper } => {
                ControlVector::new(z.coefficients().map(|v| v.clamp(lower, upper)))
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            Projection::Box { lower, upper } if !(lower <= upper) => Err(Error::InvalidConfig(
                format!("empty box [{lower}, {upper}]"),
            )),
            _ => Ok(()),
        }
    }
}

/// Reaction to a sampled VaR below the estimated threshold.
///
/// Minimizing over `t ≥ t^{r,e}` keeps every sample with `g'_ε(f − t) > 0`
/// inside the region, so a clamped `t` still gives an unbiased gradient at
/// that `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InconsistencyPolicy {
    /// Re-estimate once with more trial points; fail if it happens again.
    Abort,
    /// Re-estimate once; keep `t = t^{r,e}` if it happens again.
    #[default]
    ResampleThenClamp,
    /// Keep `t = t^{r,e}` right away.
    Clamp,
}

impl std::str::FromStr for InconsistencyPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abort" => Ok(Self::Abort),
            "resample-then-clamp" => Ok(Self::ResampleThenClamp),
            "clamp" => Ok(Self::Clamp),
            o => Err(Error::InvalidConfig(format!(
                "unknown inconsistency policy '{o}' (abort, resample-then-clamp, clamp)"
            ))),
        }
    }
}

/// Knobs that only the importance-sampling driver reads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    /// Nominal trial draws per threshold estimate.
    pub m_trial: usize,
    /// Factor applied to `m_trial` when the threshold must be re-estimated.
    pub trial_escalation: usize,
    /// Snapshots of the current sample reused for the next basis.
    pub snapshot_count: usize,
    /// Cap on greedy full solves per iteration.
    pub greedy_max_additions: usize,
    /// Use the whole domain as the region and skip the surrogate entirely.
    pub whole_region: bool,
    pub inconsistency: InconsistencyPolicy,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            m_trial: 1000,
            trial_escalation: 10,
            snapshot_count: 40,
            greedy_max_additions: 100,
            whole_region: false,
            inconsistency: InconsistencyPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub cvar: CvarParams,
    /// Step length, `θ` and the growth cap.
    pub norm_test: NormTestConfig,
    pub m0: usize,
    /// Budget of full-order solves.
    pub m_max: u64,
    pub projection: Projection,
    pub seed: u64,
    /// Starting control; zero when absent.
    pub z0: Option<ControlVector>,
    /// Optional iteration cap on top of the budget.
    pub max_iterations: Option<usize>,
    pub importance: ImportanceConfig,
}

impl OptimizerConfig {
    pub fn new(cvar: CvarParams, m0: usize, m_max: u64, seed: u64) -> Self {
        Self {
            cvar,
            norm_test: NormTestConfig::default(),
            m0,
            m_max,
            projection: Projection::Identity,
            seed,
            z0: None,
            max_iterations: None,
            importance: ImportanceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m0 < 2 {
            return Err(Error::InvalidConfig(format!("M0 must be at least 2, got {}", self.m0)));
        }
        if self.m_max <= self.m0 as u64 {
            return Err(Error::InvalidConfig(format!(
                "M_max ({}) must exceed M0 ({})",
                self.m_max, self.m0
            )));
        }
        if self.importance.m_trial == 0 || self.importance.trial_escalation == 0 {
            return Err(Error::InvalidConfig("M_trial and its escalation must be positive".into()));
        }
        NormTestConfig::new(self.norm_test.theta, self.norm_test.alpha, self.norm_test.growth_cap)?;
        self.projection.check()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Nominal adaptive sampling.
    Alg1,
    /// Adaptive importance sampling.
    Alg2,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub m_k: usize,
    pub t_k: f64,
    /// `‖(z_{k+1} − z_k)/α‖_Z`.
    pub residual_norm: f64,
    /// Sample variance of the weighted gradient terms, `Σ‖term − mean‖²/(M−1)`.
    pub variance: f64,
    pub w_k: f64,
    pub rho: f64,
    /// Gradient solves spent at this iteration.
    pub active_gradients: usize,
    /// Full-order solves since the start, including everything done here.
    pub cum_solves: u64,
    /// Relative error of `z_{k+1}`.
    pub rel_error: Option<f64>,
    pub wall_seconds: f64,
    /// Threshold estimate prepared for the next iteration.
    pub next_threshold: Option<f64>,
    pub basis_dim: Option<usize>,
    pub greedy_solves: usize,
    /// Threshold re-estimations performed at this iteration.
    pub resamples: u32,
    /// `t_k` was held at the estimated threshold.
    pub clamped: bool,
    /// Samples of `S_k` at which the surrogate bound `|f − f_r| ≤ e_z` fails.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<IterationRecord>,
    pub final_z: ControlVector,
    pub stop: StopReason,
}

impl RunRecord {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn total_solves(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.cum_solves)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projections() {
        let z = ControlVector::from_slice(&[-1.0, 0.5, 3.0]);
        assert_eq!(Projection::Identity.project(&z), z);
        let b = Projection::Box { lower: 0.0, upper: f64::INFINITY };
        let p = b.project(&ControlVector::from_slice(&[-1.0, -1.0]));
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
        let b = Projection::Box { lower: 0.0, upper: 1.0 };
        assert_eq!(b.project(&b.project(&z)), b.project(&z));
        assert!(Projection::Box { lower: 1.0, upper: 0.0 }.check().is_err());
    }

    #[test]
    fn config_validation() {
        let p = CvarParams::new(0.9, 1e-4).unwrap();
        assert!(OptimizerConfig::new(p, 10, 1000, 0).validate().is_ok());
        assert!(OptimizerConfig::new(p, 1, 1000, 0).validate().is_err());
        assert!(OptimizerConfig::new(p, 10, 10, 0).validate().is_err());
    }
}
