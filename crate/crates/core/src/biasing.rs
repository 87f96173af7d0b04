//! Surrogate-driven risk regions and sampling from the nominal density
//! restricted to them.

use crate::cvar::{minimize_t_with, CvarParams, Coefficients, SampleSet};
use crate::error::{Error, Result};
use crate::model::{NominalDensity, ParamPoint};
use crate::rng::{Purpose, Reservoir, StreamKey};
use crate::rom::ReducedModel;
use crate::smoothing::SmoothingParams;
use rayon::prelude::*;

/// Cheap approximation `f_r(z, ξ)` with a bound `e_z(ξ) ≥ |f − f_r|` at a
/// fixed control.
pub trait Surrogate: Sync {
    /// `(f_r, e_z)`.
    fn estimate(&self, xi: &ParamPoint) -> Result<(f64, f64)>;
}

impl Surrogate for ReducedModel {
    fn estimate(&self, xi: &ParamPoint) -> Result<(f64, f64)> {
        let e = self.evaluate(xi)?;
        Ok((e.value, e.qoi_bound))
    }
}

/// Surrogate given by closures for the value and the bound. With a zero
/// bound and the true `f` it yields the exact risk region.
pub struct FnSurrogate<F, E> {
    value: F,
    bound: E,
}

impl<F, E> FnSurrogate<F, E>
where
    F: Fn(&ParamPoint) -> f64 + Sync,
    E: Fn(&ParamPoint) -> f64 + Sync,
{
    pub fn new(value: F, bound: E) -> Self {
        Self { value, bound }
    }
}

impl<F, E> Surrogate for FnSurrogate<F, E>
where
    F: Fn(&ParamPoint) -> f64 + Sync,
    E: Fn(&ParamPoint) -> f64 + Sync,
{
    fn estimate(&self, xi: &ParamPoint) -> Result<(f64, f64)> {
        Ok(((self.value)(xi), (self.bound)(xi)))
    }
}

/// `{ξ : f_r(ξ) + e_z(ξ) ≥ threshold − ε/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskRegion {
    pub threshold: f64,
    pub smoothing: SmoothingParams,
}

impl RiskRegion {
    pub fn new(threshold: f64, smoothing: SmoothingParams) -> Self {
        Self {
            threshold,
            smoothing,
        }
    }

    /// The whole parameter domain.
    pub fn whole(smoothing: SmoothingParams) -> Self {
        Self::new(f64::NEG_INFINITY, smoothing)
    }

    #[inline]
    pub fn contains_estimate(&self, value: f64, bound: f64) -> bool {
        value + bound >= self.threshold - self.smoothing.half_width()
    }

    pub fn contains<S: Surrogate + ?Sized>(&self, surrogate: &S, xi: &ParamPoint) -> Result<bool> {
        if self.threshold == f64::NEG_INFINITY {
            return Ok(true);
        }
        let (v, e) = surrogate.estimate(xi)?;
        Ok(self.contains_estimate(v, e))
    }
}

/// Surrogate values and bounds at the trial points.
pub fn evaluate_trials<S: Surrogate + ?Sized>(surrogate: &S, points: &[ParamPoint]) -> Result<Vec<(f64, f64)>> {
    points.par_iter().map(|xi| surrogate.estimate(xi)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEstimate {
    pub threshold: f64,
    /// All pessimistic values coincide or the bracket had no sign change.
    pub degenerate: bool,
}

/// Minimizer over `t` of `t + 1/((1-β)M) Σ g_ε(f_r − e_z − t)` on the trials.
pub fn estimate_threshold(params: &CvarParams, trials: &[(f64, f64)]) -> Result<ThresholdEstimate> {
    if trials.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let pessimistic: Vec<f64> = trials.iter().map(|(v, e)| v - e).collect();
    let c = Coefficients::Uniform(1.0 / trials.len() as f64);
    let m = minimize_t_with(params, c, &pessimistic, None)?;
    let (lo, hi) = pessimistic
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(ThresholdEstimate {
        threshold: m.t,
        degenerate: m.degenerate || lo == hi,
    })
}

/// Fraction of trials inside the region; an empty hit set is an error.
pub fn estimate_region_probability(region: &RiskRegion, trials: &[(f64, f64)]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let hits = trials
        .iter()
        .filter(|(v, e)| region.contains_estimate(*v, *e))
        .count();
    if hits == 0 {
        return Err(Error::EmptyRiskRegion {
            trials: trials.len(),
        });
    }
    Ok(hits as f64 / trials.len() as f64)
}

/// Nominal density restricted to a region, with its estimated mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasingDensity {
    pub region: RiskRegion,
    pub probability: f64,
    pub trial_count: usize,
}

impl BiasingDensity {
    /// Nominal sampling written as a (trivial) biasing density.
    pub fn nominal(smoothing: SmoothingParams) -> Self {
        Self {
            region: RiskRegion::whole(smoothing),
            probability: 1.0,
            trial_count: 0,
        }
    }

    /// Candidate budget `1000 M / p` before acceptance-rejection gives up.
    pub fn max_trials(&self, target: usize) -> u64 {
        (1000.0 * target as f64 / self.probability).ceil() as u64
    }
}

/// Output of acceptance-rejection.
#[derive(Debug, Clone)]
pub struct AcceptanceOutcome {
    pub samples: SampleSet,
    /// Uniform reservoir of rejected candidates.
    pub rejected_pool: Vec<ParamPoint>,
    pub candidates_drawn: u64,
}

/// Retained rejected candidates.
pub const REJECTED_POOL_CAPACITY: usize = 100;

/// Draws candidates `0, 1, 2, …` of the stream `key` from the nominal density
/// and keeps those in the region until `target` are accepted. Membership is
/// decided by the surrogate only. Candidates are tested in parallel blocks but
/// accepted strictly in index order, so the result is independent of the
/// thread count.
pub fn acceptance_rejection<S: Surrogate + ?Sized>(
    surrogate: &S,
    biasing: &BiasingDensity,
    nominal: &NominalDensity,
    target: usize,
    key: StreamKey,
    iteration: usize,
) -> Result<AcceptanceOutcome> {
    if !(biasing.probability > 0.0) {
        return Err(Error::InvalidConfig("biasing density has zero mass".into()));
    }
    let max_trials = biasing.max_trials(target);
    let stream = key.stream(nominal.dim());
    let reservoir_key = StreamKey {
        purpose: Purpose::Reservoir,
        ..key
    };
    let mut reservoir = Reservoir::new(REJECTED_POOL_CAPACITY, reservoir_key);
    let mut accepted = Vec::with_capacity(target);
    let mut next: u64 = 0;
    while accepted.len() < target {
        if next >= max_trials {
            return Err(Error::MaxTrialsExceeded {
                trials: next,
                accepted: accepted.len(),
                target,
                probability: biasing.probability,
            });
        }
        let remaining = (target - accepted.len()) as f64;
        let block = ((remaining / biasing.probability) * 1.1 + 16.0).ceil() as u64;
        let block = block.min(max_trials - next).max(1);
        let tested: Vec<(ParamPoint, bool)> = (next..next + block)
            .into_par_iter()
            .map_init(
                || stream.clone(),
                |s, i| {
                    let xi = s.point(i, nominal);
                    let inside = biasing.region.contains(surrogate, &xi)?;
                    Ok((xi, inside))
                },
            )
            .collect::<Result<_>>()?;
        for (xi, inside) in tested {
            next += 1;
            if inside {
                accepted.push(xi);
                if accepted.len() == target {
                    break;
                }
            } else {
                reservoir.offer(xi);
            }
        }
    }
    let samples = if biasing.probability >= 1.0 && biasing.region.threshold == f64::NEG_INFINITY {
        SampleSet::nominal(accepted, key.run_seed)
    } else {
        SampleSet::biased(accepted, biasing.probability.min(1.0), iteration, key.run_seed)?
    };
    Ok(AcceptanceOutcome {
        samples,
        rejected_pool: reservoir.into_items(),
        candidates_drawn: next,
    })
}

/// Outcome of comparing the estimated threshold with the sampled VaR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consistency {
    Ok,
    MustResample,
}

/// `Ok` iff `t_re ≤ t_next`.
pub fn verify_threshold_consistency(t_re: f64, t_next: f64) -> Consistency {
    if t_re <= t_next {
        Consistency::Ok
    } else {
        Consistency::MustResample
    }
}
