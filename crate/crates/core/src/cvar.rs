//! Smoothed CVaR objective `t + 1/(1-β) E[g_ε(f - t)]`, its minimization in
//! `t`, gradient estimators and a tensor-quadrature reference.

use crate::error::{Error, Result};
use crate::model::{
    ControlVector, ModelEvaluation, ParamPoint, QuadraticForm, StochasticModel,
};
use crate::quadrature::{tensor_rule, TensorRule};
use crate::smoothing::{smooth_plus, smooth_plus_d1, SmoothingParams};
use rayon::prelude::*;

/// Risk level and smoothing width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CvarParams {
    beta: f64,
    smoothing: SmoothingParams,
}

impl CvarParams {
    pub fn new(beta: f64, epsilon: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self {
            beta,
            smoothing: SmoothingParams::new(epsilon)?,
        })
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    #[inline]
    pub fn smoothing(&self) -> SmoothingParams {
        self.smoothing
    }

    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.smoothing.epsilon()
    }

    /// `1 / (1 - β)`.
    #[inline]
    pub fn tail_factor(&self) -> f64 {
        1.0 / (1.0 - self.beta)
    }
}

/// Where the points of a sample set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleOrigin {
    Nominal,
    /// Drawn from the biasing density built after iteration `iteration - 1`.
    Biased { iteration: usize },
}

/// An i.i.d. batch sharing one importance weight.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub points: Vec<ParamPoint>,
    pub weight: f64,
    pub origin: SampleOrigin,
    pub seed: u64,
}

impl SampleSet {
    pub fn nominal(points: Vec<ParamPoint>, seed: u64) -> Self {
        Self {
            points,
            weight: 1.0,
            origin: SampleOrigin::Nominal,
            seed,
        }
    }

    pub fn biased(points: Vec<ParamPoint>, weight: f64, iteration: usize, seed: u64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "importance weight must lie in (0, 1], got {weight}"
            )));
        }
        Ok(Self {
            points,
            weight,
            origin: SampleOrigin::Biased { iteration },
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coefficient `w / M` multiplying every sample in the averages.
    pub fn coefficients(&self) -> Coefficients<'static> {
        Coefficients::Uniform(self.weight / self.points.len() as f64)
    }
}

/// Iterate of the alternating scheme.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub z: ControlVector,
    pub t: f64,
    pub k: usize,
    pub m: usize,
}

/// Per-sample coefficients of an expectation estimate `Σ c_j h(ξ_j)`.
#[derive(Debug, Clone, Copy)]
pub enum Coefficients<'a> {
    Uniform(f64),
    Weights(&'a [f64]),
}

impl Coefficients<'_> {
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        match self {
            Coefficients::Uniform(c) => *c,
            Coefficients::Weights(w) => w[j],
        }
    }
}

/// `t + 1/(1-β) Σ c_j g_ε(v_j - t)`.
pub fn objective_with(params: &CvarParams, c: Coefficients<'_>, values: &[f64], t: f64) -> f64 {
    let p = params.smoothing();
    let s: f64 = values
        .iter()
        .enumerate()
        .map(|(j, v)| c.get(j) * smooth_plus(v - t, p))
        .sum();
    t + params.tail_factor() * s
}

/// `∂_t` of [`objective_with`]; nondecreasing in `t`.
pub fn t_derivative_with(params: &CvarParams, c: Coefficients<'_>, values: &[f64], t: f64) -> f64 {
    let p = params.smoothing();
    let s: f64 = values
        .iter()
        .enumerate()
        .map(|(j, v)| c.get(j) * smooth_plus_d1(v - t, p))
        .sum();
    1.0 - params.tail_factor() * s
}

/// Sample objective `t + w/((1-β)M) Σ g_ε(values_j - t)`.
pub fn sample_objective(params: &CvarParams, set: &SampleSet, values: &[f64], t: f64) -> Result<f64> {
    check_values(set, values)?;
    Ok(objective_with(params, set.coefficients(), values, t))
}

fn check_values(set: &SampleSet, values: &[f64]) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if values.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Result of the one-dimensional minimization in `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TMinimum {
    pub t: f64,
    /// `∂_t` was already nonnegative at the left end of the bracket.
    pub degenerate: bool,
    /// The unconstrained minimizer lies below the requested lower bound.
    pub clamped: bool,
    pub iterations: usize,
}

const T_MAX_ITER: usize = 200;

/// Leftmost zero of the nondecreasing `∂_t` by bisection on
/// `[min v - ε, max v + ε]`, stopped at width `1e-12 (1 + |t|)`.
///
/// With `lower_bound = Some(b)` the search is restricted to `t ≥ b`; if the
/// derivative is already nonnegative at `b` the result is `b` with
/// `clamped = true`.
pub fn minimize_t_with(
    params: &CvarParams,
    c: Coefficients<'_>,
    values: &[f64],
    lower_bound: Option<f64>,
) -> Result<TMinimum> {
    if values.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let eps = params.epsilon();
    let (vmin, vmax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(vmin.is_finite() && vmax.is_finite()) {
        return Err(Error::InvalidConfig("non-finite quantity of interest".into()));
    }
    let mut lo = vmin - eps;
    let mut hi = vmax + eps;
    let d = |t: f64| t_derivative_with(params, c, values, t);

    if let Some(b) = lower_bound {
        if b >= hi || d(b) >= 0.0 {
            return Ok(TMinimum {
                t: b,
                degenerate: false,
                clamped: true,
                iterations: 0,
            });
        }
        lo = lo.max(b);
    }
    if d(lo) >= 0.0 {
        return Ok(TMinimum {
            t: lo,
            degenerate: true,
            clamped: false,
            iterations: 0,
        });
    }
    let mut it = 0;
    while it < T_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) || mid == lo || mid == hi {
            break;
        }
        if d(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        it += 1;
    }
    Ok(TMinimum {
        t: 0.5 * (lo + hi),
        degenerate: false,
        clamped: false,
        iterations: it,
    })
}

/// Minimizer in `t` of the sample objective.
pub fn minimize_t(
    params: &CvarParams,
    set: &SampleSet,
    values: &[f64],
    lower_bound: Option<f64>,
) -> Result<TMinimum> {
    check_values(set, values)?;
    minimize_t_with(params, set.coefficients(), values, lower_bound)
}

/// Values `f(z, ξ_j)` for all points, evaluated concurrently. Order is preserved.
pub fn evaluate_values<M: StochasticModel + ?Sized>(
    model: &M,
    z: &ControlVector,
    points: &[ParamPoint],
) -> Result<Vec<ModelEvaluation>> {
    points
        .par_iter()
        .map(|xi| model.evaluate(z, xi, false))
        .collect()
}

/// Gradient estimate together with what the norm test needs.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// `w/((1-β)M) Σ g'_j ∇f_j`.
    pub mean: ControlVector,
    /// Nonzero per-sample terms `w g'_j ∇f_j / (1-β)`, with their sample index.
    pub active_terms: Vec<(usize, ControlVector)>,
    /// Sample size `M`, including samples whose term vanishes.
    pub sample_size: usize,
    /// `Σ_j ‖term_j − mean‖²` over all `M` samples, in the norm of `Z`.
    pub variance_sum: f64,
    /// Gradient (adjoint) solves spent.
    pub gradient_solves: usize,
}

impl GradientEstimate {
    /// Builds the estimate from the active terms; the remaining
    /// `sample_size − active` terms are zero.
    pub fn from_terms(
        space: &crate::model::ControlSpace,
        sample_size: usize,
        dim: usize,
        active_terms: Vec<(usize, ControlVector)>,
    ) -> Self {
        let mut mean = ControlVector::zeros(dim);
        for (_, term) in &active_terms {
            mean.axpy(1.0, term);
        }
        let mean = mean.scale(1.0 / sample_size as f64);
        let zeros = (sample_size - active_terms.len()) as f64;
        let mut variance_sum = zeros * space.norm_squared(&mean);
        for (_, term) in &active_terms {
            variance_sum += space.norm_squared(&(term - &mean));
        }
        let gradient_solves = active_terms.len();
        Self {
            mean,
            active_terms,
            sample_size,
            variance_sum,
            gradient_solves,
        }
    }

    /// Unbiased sample variance of the terms, `variance_sum / (M − 1)`.
    pub fn term_variance(&self) -> f64 {
        if self.sample_size < 2 {
            0.0
        } else {
            self.variance_sum / (self.sample_size - 1) as f64
        }
    }
}

/// Sample gradient at fixed `t`. Gradients are only requested for samples
/// with `g'_ε(f_j − t) > 0`, each costing one adjoint solve.
pub fn sample_gradient<M: StochasticModel + ?Sized>(
    model: &M,
    params: &CvarParams,
    set: &SampleSet,
    z: &ControlVector,
    t: f64,
    evaluations: &[ModelEvaluation],
) -> Result<GradientEstimate> {
    if set.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if evaluations.len() != set.len() {
        return Err(Error::DimensionMismatch {
            expected: set.len(),
            got: evaluations.len(),
        });
    }
    let p = params.smoothing();
    let scale = set.weight * params.tail_factor();
    let active: Vec<(usize, f64)> = evaluations
        .iter()
        .enumerate()
        .filter_map(|(j, e)| {
            let d = smooth_plus_d1(e.value - t, p);
            (d > 0.0).then_some((j, d))
        })
        .collect();
    let terms: Vec<(usize, ControlVector)> = active
        .par_iter()
        .map(|&(j, d)| {
            let g = match &evaluations[j].gradient {
                Some(g) => g.clone(),
                None => model.gradient_after(z, &set.points[j], &evaluations[j])?,
            };
            Ok((j, g.scale(scale * d)))
        })
        .collect::<Result<_>>()?;
    Ok(GradientEstimate::from_terms(
        model.control_space(),
        set.len(),
        z.dim(),
        terms,
    ))
}

/// Value, gradient and inner minimizer of the smoothed CVaR computed with a
/// tensor Gauss–Legendre rule.
#[derive(Debug, Clone)]
pub struct QuadratureReference {
    pub value: f64,
    pub gradient: ControlVector,
    pub t_star: f64,
}

/// Tensor rule over the parameter box, optionally holding the exact quadratic
/// dependence on `z` at every node so that later evaluations need no solves.
pub struct QuadratureOracle<'m, M: StochasticModel + ?Sized> {
    model: &'m M,
    params: CvarParams,
    rule: TensorRule,
    forms: Option<Vec<QuadraticForm>>,
}

impl<'m, M: StochasticModel + ?Sized> QuadratureOracle<'m, M> {
    pub fn new(model: &'m M, params: CvarParams, grid_order: usize) -> Result<Self> {
        let rule = tensor_rule(model.density(), grid_order)?;
        Ok(Self {
            model,
            params,
            rule,
            forms: None,
        })
    }

    /// Expands every node's quadratic form once, when the model offers one.
    /// Returns whether the cache is in use.
    pub fn with_cached_forms(mut self) -> Result<(Self, bool)> {
        let first = match &self.rule.points.first() {
            Some(p) => self.model.quadratic_form(p),
            None => None,
        };
        let Some(first) = first else {
            return Ok((self, false));
        };
        let mut forms = vec![first?];
        let rest: Vec<QuadraticForm> = self.rule.points[1..]
            .par_iter()
            .map(|p| self.model.quadratic_form(p).expect("form availability is uniform"))
            .collect::<Result<_>>()?;
        forms.extend(rest);
        self.forms = Some(forms);
        Ok((self, true))
    }

    pub fn rule(&self) -> &TensorRule {
        &self.rule
    }

    pub fn params(&self) -> &CvarParams {
        &self.params
    }

    fn values_and_gradients(&self, z: &ControlVector) -> Result<(Vec<f64>, Vec<ControlVector>)> {
        let space = self.model.control_space();
        match &self.forms {
            Some(forms) => Ok(forms
                .par_iter()
                .map(|q| (q.value(z), space.riesz(q.euclidean_gradient(z))))
                .unzip()),
            None => {
                let ev: Vec<ModelEvaluation> = self
                    .rule
                    .points
                    .par_iter()
                    .map(|xi| self.model.evaluate(z, xi, true))
                    .collect::<Result<_>>()?;
                Ok(ev
                    .into_iter()
                    .map(|e| (e.value, e.gradient.expect("gradient requested")))
                    .unzip())
            }
        }
    }

    /// Values `f(z, ξ_i)` at the nodes.
    pub fn values(&self, z: &ControlVector) -> Result<Vec<f64>> {
        match &self.forms {
            Some(forms) => Ok(forms.par_iter().map(|q| q.value(z)).collect()),
            None => Ok(self
                .rule
                .points
                .par_iter()
                .map(|xi| self.model.evaluate(z, xi, false).map(|e| e.value))
                .collect::<Result<_>>()?),
        }
    }

    /// Reduced value `min_t F(z, t)` and its minimizer.
    pub fn reduced_value(&self, z: &ControlVector) -> Result<(f64, f64)> {
        let v = self.values(z)?;
        let c = Coefficients::Weights(&self.rule.weights);
        let tm = minimize_t_with(&self.params, c, &v, None)?;
        Ok((objective_with(&self.params, c, &v, tm.t), tm.t))
    }

    pub fn evaluate(&self, z: &ControlVector) -> Result<QuadratureReference> {
        let (v, g) = self.values_and_gradients(z)?;
        let c = Coefficients::Weights(&self.rule.weights);
        let tm = minimize_t_with(&self.params, c, &v, None)?;
        let p = self.params.smoothing();
        let mut grad = ControlVector::zeros(z.dim());
        for ((vi, gi), wi) in v.iter().zip(&g).zip(&self.rule.weights) {
            let d = smooth_plus_d1(vi - tm.t, p);
            if d > 0.0 {
                grad.axpy(wi * d, gi);
            }
        }
        Ok(QuadratureReference {
            value: objective_with(&self.params, c, &v, tm.t),
            gradient: grad.scale(self.params.tail_factor()),
            t_star: tm.t,
        })
    }
}

/// One-shot quadrature reference at `z`.
pub fn reference_quadrature<M: StochasticModel + ?Sized>(
    model: &M,
    params: &CvarParams,
    z: &ControlVector,
    grid_order: usize,
) -> Result<QuadratureReference> {
    QuadratureOracle::new(model, *params, grid_order)?.evaluate(z)
}

/// Relative discrepancy between a central-difference gradient of the reduced
/// functional `z ↦ min_t F(z, t)` (with `t` re-minimized at every perturbed
/// point) and `∇_z F(z, h(z))`, both taken in Euclidean coordinates.
pub fn reduced_gradient_identity_check<M: StochasticModel + ?Sized>(
    model: &M,
    params: &CvarParams,
    z: &ControlVector,
    grid_order: usize,
    fd_step: f64,
) -> Result<f64> {
    let (oracle, _) = QuadratureOracle::new(model, *params, grid_order)?.with_cached_forms()?;
    gradient_identity_with(&oracle, z, fd_step)
}

pub fn gradient_identity_with<M: StochasticModel + ?Sized>(
    oracle: &QuadratureOracle<'_, M>,
    z: &ControlVector,
    fd_step: f64,
) -> Result<f64> {
    let r = oracle.evaluate(z)?;
    let analytic = oracle.model.control_space().lower(&r.gradient);
    let mut fd = nalgebra::DVector::zeros(z.dim());
    for i in 0..z.dim() {
        let mut zp = z.clone().into_inner();
        zp[i] += fd_step;
        let mut zm = z.clone().into_inner();
        zm[i] -= fd_step;
        let (fp, _) = oracle.reduced_value(&ControlVector::new(zp))?;
        let (fm, _) = oracle.reduced_value(&ControlVector::new(zm))?;
        fd[i] = (fp - fm) / (2.0 * fd_step);
    }
    let denom = analytic.norm().max(f64::MIN_POSITIVE);
    Ok((fd - &analytic).norm() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(beta: f64, eps: f64) -> CvarParams {
        CvarParams::new(beta, eps).unwrap()
    }

    fn set_of(n: usize) -> SampleSet {
        SampleSet::nominal(vec![ParamPoint::new(vec![0.5]); n], 0)
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(CvarParams::new(1.0, 0.1).is_err());
        assert!(CvarParams::new(0.0, 0.1).is_err());
        assert!(CvarParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn objective_below_band_is_t() {
        let p = params(0.9, 0.1);
        let v = [0.0, 0.1, 0.2];
        assert_eq!(sample_objective(&p, &set_of(3), &v, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn single_sample_linear_branch() {
        let p = params(0.5, 1e-6);
        let t = 0.3;
        let f = sample_objective(&p, &set_of(1), &[t + 1.0], t).unwrap();
        assert!((f - (t + 2.0)).abs() < 1e-14);
    }

    #[test]
    fn empty_set_is_an_error() {
        let p = params(0.5, 0.1);
        assert!(matches!(
            sample_objective(&p, &set_of(0), &[], 0.0),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn single_sample_minimizer_is_the_value() {
        let p = params(0.5, 0.01);
        let m = minimize_t(&p, &set_of(1), &[0.7], None).unwrap();
        assert!((m.t - 0.7).abs() < 1e-11, "{}", m.t);
        let m = minimize_t(&p, &set_of(4), &[-2.0; 4], None).unwrap();
        assert!((m.t + 2.0).abs() < 1e-11);
    }

    #[test]
    fn lower_bound_clamps() {
        let p = params(0.5, 0.01);
        let m = minimize_t(&p, &set_of(1), &[0.7], Some(0.9)).unwrap();
        assert!(m.clamped);
        assert_eq!(m.t, 0.9);
        let m = minimize_t(&p, &set_of(1), &[0.7], Some(0.1)).unwrap();
        assert!(!m.clamped);
        assert!((m.t - 0.7).abs() < 1e-11);
    }

    #[test]
    fn small_weight_is_degenerate() {
        // w < 1 - β makes the objective unbounded below in t.
        let p = params(0.5, 0.01);
        let s = SampleSet::biased(vec![ParamPoint::new(vec![0.5])], 0.25, 1, 0).unwrap();
        let m = minimize_t(&p, &s, &[1.0], None).unwrap();
        assert!(m.degenerate);
    }

    #[test]
    fn derivative_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = params(0.8, 0.05);
        let v: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = Coefficients::Uniform(1.0 / 200.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let t = -0.1 + 1.2 * i as f64 / 1000.0;
            let d = t_derivative_with(&p, c, &v, t);
            assert!(d >= prev - 1e-15);
            prev = d;
        }
    }

    #[test]
    fn variance_sum_counts_zero_terms() {
        let space = crate::model::ControlSpace::euclidean(1);
        let terms = vec![(1, ControlVector::from_slice(&[3.0]))];
        let g = GradientEstimate::from_terms(&space, 2, 1, terms);
        assert_eq!(g.mean.as_slice(), &[1.5]);
        assert_eq!(g.variance_sum, 4.5);
        assert_eq!(g.term_variance(), 4.5);
    }
}
