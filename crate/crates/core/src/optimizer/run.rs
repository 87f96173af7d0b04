use super::surrogate::{SurrogateFactory, SurrogateRequest};
use super::{Algorithm, InconsistencyPolicy, IterationRecord, OptimizerConfig, RunRecord, StopReason};
use crate::adaptive::{next_sample_size, VarianceReport};
use crate::biasing::{
    acceptance_rejection, estimate_region_probability, estimate_threshold, evaluate_trials,
    verify_threshold_consistency, BiasingDensity, Consistency, RiskRegion, Surrogate,
};
use crate::cvar::{evaluate_values, minimize_t, sample_gradient, GradientEstimate, SampleSet, TMinimum};
use crate::error::{Error, Result};
use crate::model::{ControlVector, ModelEvaluation, ParamPoint, StochasticModel};
use crate::rng::{choose_indices, nominal_points, Purpose, StreamKey};
use std::time::Instant;

/// Bookkeeping shared by both drivers.
struct Tracker<'a, M: ?Sized> {
    model: &'a M,
    start_solves: u64,
    clock: Instant,
    reference: Option<(&'a ControlVector, f64)>,
}

impl<'a, M: StochasticModel + ?Sized> Tracker<'a, M> {
    fn new(model: &'a M, reference: Option<&'a ControlVector>) -> Self {
        let reference = reference.map(|r| (r, model.control_space().norm(r)));
        Self {
            model,
            start_solves: model.solve_count(),
            clock: Instant::now(),
            reference,
        }
    }

    fn spent(&self) -> u64 {
        self.model.solve_count() - self.start_solves
    }

    fn rel_error(&self, z: &ControlVector) -> Option<f64> {
        self.reference.map(|(r, n)| {
            let d = self.model.control_space().norm(&(z - r));
            if n > 0.0 {
                d / n
            } else {
                d
            }
        })
    }
}

/// Everything one projected gradient step produces.
struct Step {
    t: TMinimum,
    gradient: GradientEstimate,
    z_next: ControlVector,
    residual_norm: f64,
    rho: f64,
    m_next: usize,
}

fn step<M: StochasticModel + ?Sized>(
    model: &M,
    config: &OptimizerConfig,
    set: &SampleSet,
    z: &ControlVector,
    evals: &[ModelEvaluation],
    t: TMinimum,
) -> Result<Step> {
    let gradient = sample_gradient(model, &config.cvar, set, z, t.t, evals)?;
    let alpha = config.norm_test.alpha;
    let z_next = config.projection.project(&(z - &gradient.mean.scale(alpha)));
    let residual = (&z_next - z).scale(1.0 / alpha);
    let residual_sq = model.control_space().norm_squared(&residual);
    let rho = VarianceReport::from_estimate(&gradient, residual_sq).rho(config.norm_test.theta)?;
    let m_next = next_sample_size(set.len(), rho, &config.norm_test);
    Ok(Step {
        t,
        gradient,
        z_next,
        residual_norm: residual_sq.sqrt(),
        rho,
        m_next,
    })
}

fn values(evals: &[ModelEvaluation]) -> Vec<f64> {
    evals.iter().map(|e| e.value).collect()
}

fn initial_control<M: StochasticModel + ?Sized>(model: &M, config: &OptimizerConfig) -> Result<ControlVector> {
    let z = config
        .z0
        .clone()
        .unwrap_or_else(|| ControlVector::zeros(model.control_space().dim()));
    model.control_space().check(&z)?;
    Ok(config.projection.project(&z))
}

/// Worst-case cost of one iteration with `m` samples: every value and every
/// gradient.
fn worst_case(m: usize) -> u64 {
    2 * m as u64
}

/// Adaptive sampling from the nominal density.
///
/// `on_row` sees every row as soon as it is complete.
pub fn run_alg1<M: StochasticModel + ?Sized>(
    model: &M,
    config: &OptimizerConfig,
    reference: Option<&ControlVector>,
    mut on_row: impl FnMut(&IterationRecord),
) -> Result<RunRecord> {
    config.validate()?;
    let tracker = Tracker::new(model, reference);
    let density = model.density().clone();
    let mut z = initial_control(model, config)?;
    let mut m = config.m0;
    let mut rows = Vec::new();
    let stop = loop {
        let k = rows.len();
        if config.max_iterations.is_some_and(|n| k >= n) {
            break StopReason::MaxIterations;
        }
        if tracker.spent() + worst_case(m) > config.m_max {
            break StopReason::Budget;
        }
        let iteration = || -> Result<(Step, SampleSet)> {
            let points = nominal_points(StreamKey::new(config.seed, k, Purpose::Sample), m, &density);
            let set = SampleSet::nominal(points, config.seed);
            let evals = evaluate_values(model, &z, &set.points)?;
            let t = minimize_t(&config.cvar, &set, &values(&evals), None)?;
            Ok((step(model, config, &set, &z, &evals, t)?, set))
        };
        let (s, set) = iteration().map_err(|e| e.at(k))?;
        z = s.z_next.clone();
        let row = IterationRecord {
            k,
            m_k: m,
            t_k: s.t.t,
            residual_norm: s.residual_norm,
            variance: s.gradient.term_variance(),
            w_k: set.weight,
            rho: s.rho,
            active_gradients: s.gradient.gradient_solves,
            cum_solves: tracker.spent(),
            rel_error: tracker.rel_error(&z),
            wall_seconds: tracker.clock.elapsed().as_secs_f64(),
            next_threshold: None,
            basis_dim: None,
            greedy_solves: 0,
            resamples: 0,
            clamped: false,
            bound_violations: 0,
        };
        on_row(&row);
        rows.push(row);
        m = s.m_next;
    };
    Ok(RunRecord {
        algorithm: Algorithm::Alg1,
        seed: config.seed,
        rows,
        final_z: z,
        stop,
    })
}

/// Sample set for the next iteration together with how it was obtained.
struct Prepared {
    set: SampleSet,
    /// Surrogate that decided membership; `None` for nominal samples.
    surrogate: Option<Box<dyn Surrogate + Send>>,
    threshold: Option<f64>,
    trial_count: usize,
    pool: Vec<ParamPoint>,
}

/// Threshold, region mass and acceptance-rejection at control `z` for
/// iteration `k`.
fn draw_biased<S: Surrogate + ?Sized>(
    surrogate: &S,
    config: &OptimizerConfig,
    density: &crate::model::NominalDensity,
    k: usize,
    target: usize,
    attempt: u32,
    trial_count: usize,
    trials: Option<Vec<ParamPoint>>,
) -> Result<Prepared> {
    let trials = trials.unwrap_or_else(|| {
        nominal_points(
            StreamKey::new(config.seed, k, Purpose::Trial).with_attempt(attempt),
            trial_count,
            density,
        )
    });
    let estimates = evaluate_trials(surrogate, &trials)?;
    let threshold = estimate_threshold(&config.cvar, &estimates)?.threshold;
    let region = RiskRegion::new(threshold, config.cvar.smoothing());
    let probability = estimate_region_probability(&region, &estimates)?;
    let biasing = BiasingDensity {
        region,
        probability,
        trial_count,
    };
    let key = StreamKey::new(config.seed, k, Purpose::Sample).with_attempt(attempt);
    let out = acceptance_rejection(surrogate, &biasing, density, target, key, k)?;
    Ok(Prepared {
        set: out.samples,
        surrogate: None,
        threshold: Some(threshold),
        trial_count,
        pool: out.rejected_pool,
    })
}

/// Samples where the surrogate bound fails, `|f − f_r| > e_z`.
fn count_violations<S: Surrogate + ?Sized>(
    surrogate: &S,
    points: &[ParamPoint],
    evals: &[ModelEvaluation],
) -> Result<usize> {
    let est = evaluate_trials(surrogate, points)?;
    Ok(est
        .iter()
        .zip(evals)
        .filter(|((v, e), ev)| (ev.value - v).abs() > *e)
        .count())
}

/// Smoothed VaR of the accepted sample predicted by the surrogate.
fn surrogate_var<S: Surrogate + ?Sized>(surrogate: &S, config: &OptimizerConfig, p: &Prepared) -> Result<f64> {
    let v: Vec<f64> = evaluate_trials(surrogate, &p.set.points)?
        .into_iter()
        .map(|(v, _)| v)
        .collect();
    Ok(minimize_t(&config.cvar, &p.set, &v, None)?.t)
}

fn consistent<S: Surrogate + ?Sized>(surrogate: &S, config: &OptimizerConfig, p: &Prepared) -> Result<bool> {
    let Some(threshold) = p.threshold else { return Ok(true) };
    let t_next = surrogate_var(surrogate, config, p)?;
    Ok(verify_threshold_consistency(threshold, t_next) == Consistency::Ok)
}

/// Adaptive importance sampling with surrogate-built risk regions.
///
/// Iteration 0 samples the nominal density. Afterwards every iteration builds
/// a surrogate at the new control from reused states and the rejected pool,
/// estimates the threshold and region mass on fresh trial points, and draws
/// the next sample by acceptance-rejection. If the VaR the surrogate predicts
/// for that sample falls below the estimate, the estimate is redone once with
/// more trial points; this costs no full solves. `t_k` is always minimized
/// over `t ≥ t^{r,e}`.
pub fn run_alg2<M: StochasticModel + ?Sized, F: SurrogateFactory + ?Sized>(
    model: &M,
    factory: &F,
    config: &OptimizerConfig,
    reference: Option<&ControlVector>,
    mut on_row: impl FnMut(&IterationRecord),
) -> Result<RunRecord> {
    config.validate()?;
    let imp = config.importance;
    let tracker = Tracker::new(model, reference);
    let density = model.density().clone();
    let mut z = initial_control(model, config)?;
    let mut m = config.m0;
    let mut rows: Vec<IterationRecord> = Vec::new();
    let mut prepared = Prepared {
        set: SampleSet::nominal(
            nominal_points(StreamKey::new(config.seed, 0, Purpose::Sample), m, &density),
            config.seed,
        ),
        surrogate: None,
        threshold: None,
        trial_count: 0,
        pool: vec![],
    };
    let stop = loop {
        let k = rows.len();
        if config.max_iterations.is_some_and(|n| k >= n) {
            break StopReason::MaxIterations;
        }
        if tracker.spent() + worst_case(m) > config.m_max {
            break StopReason::Budget;
        }
        let evals = evaluate_values(model, &z, &prepared.set.points).map_err(|e| e.at(k))?;
        let t = minimize_t(&config.cvar, &prepared.set, &values(&evals), prepared.threshold)
            .map_err(|e| e.at(k))?;
        let clamped = t.clamped;
        let bound_violations = match &prepared.surrogate {
            Some(s) => count_violations(s.as_ref(), &prepared.set.points, &evals).map_err(|e| e.at(k))?,
            None => 0,
        };
        let set = std::mem::replace(&mut prepared.set, SampleSet::nominal(vec![], config.seed));
        let s = step(model, config, &set, &z, &evals, t).map_err(|e| e.at(k))?;
        z = s.z_next.clone();
        let m_next = s.m_next;

        let mut basis_dim = None;
        let mut greedy_solves = 0;
        let mut next_threshold = None;
        let mut resamples = 0u32;
        let mut out_of_budget = false;
        if imp.whole_region {
            let b = BiasingDensity::nominal(config.cvar.smoothing());
            let key = StreamKey::new(config.seed, k + 1, Purpose::Sample);
            let all = crate::biasing::FnSurrogate::new(|_: &ParamPoint| 0.0, |_: &ParamPoint| 0.0);
            let out = acceptance_rejection(&all, &b, &density, m_next, key, k + 1).map_err(|e| e.at(k))?;
            prepared = Prepared {
                set: out.samples,
                surrogate: None,
                threshold: None,
                trial_count: 0,
                pool: vec![],
            };
        } else {
            let left = config.m_max as i64 - tracker.spent() as i64 - worst_case(m_next) as i64;
            if left < 0 {
                out_of_budget = true;
            } else {
                let trial_points = nominal_points(
                    StreamKey::new(config.seed, k + 1, Purpose::Trial),
                    imp.m_trial,
                    &density,
                );
                let snapshot_ids = choose_indices(
                    StreamKey::new(config.seed, k, Purpose::SnapshotPick),
                    set.len(),
                    set.len().min(imp.snapshot_count),
                );
                let snapshots = snapshot_ids
                    .iter()
                    .filter_map(|&j| evals[j].state.clone().map(|y| (set.points[j].clone(), y)))
                    .collect();
                let candidates = if prepared.pool.is_empty() {
                    trial_points.iter().take(crate::biasing::REJECTED_POOL_CAPACITY).cloned().collect()
                } else {
                    std::mem::take(&mut prepared.pool)
                };
                let built = factory
                    .build(SurrogateRequest {
                        iteration: k,
                        z: &z,
                        snapshots,
                        candidates,
                        max_full_solves: imp.greedy_max_additions.min(left as usize),
                    })
                    .map_err(|e| e.at(k))?;
                basis_dim = built.basis_dim;
                greedy_solves = built.full_solves;
                prepared = draw_biased(
                    built.surrogate.as_ref(),
                    config,
                    &density,
                    k + 1,
                    m_next,
                    0,
                    imp.m_trial,
                    Some(trial_points),
                )
                .map_err(|e| e.at(k))?;
                let rom = built.surrogate.as_ref();
                if !consistent(rom, config, &prepared).map_err(|e| e.at(k))?
                    && imp.inconsistency != InconsistencyPolicy::Clamp
                {
                    prepared = draw_biased(
                        rom,
                        config,
                        &density,
                        k + 1,
                        m_next,
                        1,
                        imp.m_trial * imp.trial_escalation,
                        None,
                    )
                    .map_err(|e| e.at(k))?;
                    resamples += 1;
                    if !consistent(rom, config, &prepared).map_err(|e| e.at(k))?
                        && imp.inconsistency == InconsistencyPolicy::Abort
                    {
                        let t_next = surrogate_var(rom, config, &prepared).map_err(|e| e.at(k))?;
                        return Err(Error::ThresholdInconsistent {
                            iteration: k,
                            threshold: prepared.threshold.unwrap_or(f64::NAN),
                            t_next,
                            trial_count: prepared.trial_count,
                        });
                    }
                }
                next_threshold = prepared.threshold;
                prepared.surrogate = Some(built.surrogate);
            }
        }

        let row = IterationRecord {
            k,
            m_k: m,
            t_k: s.t.t,
            residual_norm: s.residual_norm,
            variance: s.gradient.term_variance(),
            w_k: set.weight,
            rho: s.rho,
            active_gradients: s.gradient.gradient_solves,
            cum_solves: tracker.spent(),
            rel_error: tracker.rel_error(&z),
            wall_seconds: tracker.clock.elapsed().as_secs_f64(),
            next_threshold,
            basis_dim,
            greedy_solves,
            resamples,
            clamped,
            bound_violations,
        };
        on_row(&row);
        rows.push(row);
        m = m_next;
        if out_of_budget {
            break StopReason::Budget;
        }
    };
    Ok(RunRecord {
        algorithm: Algorithm::Alg2,
        seed: config.seed,
        rows,
        final_z: z,
        stop,
    })
}
