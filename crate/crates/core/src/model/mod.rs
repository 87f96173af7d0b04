//! Parametric quantities of interest `f(z, ξ)` and their control gradients.

mod toy;

pub use toy::{make_quadratic_toy, ConvexityCertificate, QuadraticToy, QuadraticToySpec};

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::ops::{Add, Mul, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Coefficients of a decision variable. Norms and inner products are taken in
/// the owning [`ControlSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector(DVector<f64>);

impl ControlVector {
    pub fn new(coefficients: DVector<f64>) -> Self {
        Self(coefficients)
    }

    pub fn from_slice(c: &[f64]) -> Self {
        Self(DVector::from_column_slice(c))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &ControlVector) {
        self.0.axpy(a, &x.0, 1.0);
    }
}

impl Add for &ControlVector {
    type Output = ControlVector;
    fn add(self, rhs: Self) -> ControlVector {
        ControlVector(&self.0 + &rhs.0)
    }
}

impl Sub for &ControlVector {
    type Output = ControlVector;
    fn sub(self, rhs: Self) -> ControlVector {
        ControlVector(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &ControlVector {
    type Output = ControlVector;
    fn mul(self, rhs: f64) -> ControlVector {
        self.scale(rhs)
    }
}

/// Decision space `Z` with inner product `(a, b) = aᵀ G b`. `G = I` when no
/// Gram matrix is given.
#[derive(Debug, Clone)]
pub struct ControlSpace {
    dim: usize,
    gram: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

impl ControlSpace {
    pub fn euclidean(dim: usize) -> Self {
        Self { dim, gram: None }
    }

    pub fn with_gram(gram: DMatrix<f64>) -> Result<Self> {
        if !gram.is_square() {
            return Err(Error::InvalidConfig("Gram matrix must be square".into()));
        }
        let dim = gram.nrows();
        let chol = Cholesky::new(gram.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            context: "control-space Gram matrix".into(),
        })?;
        Ok(Self {
            dim,
            gram: Some((gram, chol)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gram(&self) -> Option<&DMatrix<f64>> {
        self.gram.as_ref().map(|(g, _)| g)
    }

    pub fn inner(&self, a: &ControlVector, b: &ControlVector) -> f64 {
        match &self.gram {
            None => a.0.dot(&b.0),
            Some((g, _)) => a.0.dot(&(g * &b.0)),
        }
    }

    pub fn norm_squared(&self, a: &ControlVector) -> f64 {
        self.inner(a, a)
    }

    pub fn norm(&self, a: &ControlVector) -> f64 {
        self.norm_squared(a).max(0.0).sqrt()
    }

    /// Riesz representative of a linear functional given by its Euclidean
    /// coefficient vector: solves `G r = e`.
    pub fn riesz(&self, euclidean: DVector<f64>) -> ControlVector {
        match &self.gram {
            None => ControlVector(euclidean),
            Some((_, chol)) => ControlVector(chol.solve(&euclidean)),
        }
    }

    /// Euclidean coefficients `G v` of the functional `(v, ·)`.
    pub fn lower(&self, v: &ControlVector) -> DVector<f64> {
        match &self.gram {
            None => v.0.clone(),
            Some((g, _)) => g * &v.0,
        }
    }

    pub fn check(&self, z: &ControlVector) -> Result<()> {
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.dim(),
            });
        }
        Ok(())
    }
}

/// A realization `ξ ∈ Γ ⊂ R^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(Vec<f64>);

impl ParamPoint {
    pub fn new(xi: Vec<f64>) -> Self {
        Self(xi)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl std::ops::Index<usize> for ParamPoint {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Product-uniform density on a box `Π_i (lower_i, upper_i)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NominalDensity {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl NominalDensity {
    pub fn product_uniform(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidConfig("bounds must be nonempty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidConfig("each lower bound must be below its upper bound".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unit_cube(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn pdf(&self, xi: &ParamPoint) -> f64 {
        if self.contains(xi) {
            1.0 / self.volume()
        } else {
            0.0
        }
    }

    pub fn contains(&self, xi: &ParamPoint) -> bool {
        xi.dim() == self.dim()
            && xi
                .coords()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (a, b))| *x >= *a && *x <= *b)
    }

    pub fn check(&self, xi: &ParamPoint) -> Result<()> {
        if self.contains(xi) {
            Ok(())
        } else {
            Err(Error::OutsideDomain {
                point: xi.coords().to_vec(),
            })
        }
    }

    /// Maps a point of the open unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> ParamPoint {
        ParamPoint(
            u.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(u, (a, b))| a + (b - a) * u)
                .collect(),
        )
    }
}

/// Counter of full-order solves. Increments from concurrent evaluations are
/// never lost.
#[derive(Debug, Default)]
pub struct SolveTally(AtomicU64);

impl SolveTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Output of one model evaluation.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub value: f64,
    pub gradient: Option<ControlVector>,
    /// Full-order solves consumed: 1 for the value, one more for the gradient.
    pub cost_units: u32,
    /// Discrete state, for models that have one (used as a POD snapshot).
    pub state: Option<Arc<DVector<f64>>>,
}

/// `f(z) = ½ zᵀ H z + gᵀ z + c` in Euclidean control coordinates.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadraticForm {
    pub fn value(&self, z: &ControlVector) -> f64 {
        let z = z.coefficients();
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z) + self.constant
    }

    pub fn euclidean_gradient(&self, z: &ControlVector) -> DVector<f64> {
        &self.hessian * z.coefficients() + &self.linear
    }
}

/// Evaluator of `f(z, ξ)` and `∇f(z, ξ)`.
///
/// Implementations count full-order solves in their [`SolveTally`]; cached
/// or closed-form shortcuts must still charge the tally as if solved.
pub trait StochasticModel: Send + Sync {
    fn control_space(&self) -> &ControlSpace;

    fn density(&self) -> &NominalDensity;

    fn tally(&self) -> &SolveTally;

    /// Value and, on request, the Riesz gradient in `Z`. Charges 1 or 2 solves.
    fn evaluate(&self, z: &ControlVector, xi: &ParamPoint, need_gradient: bool)
        -> Result<ModelEvaluation>;

    /// Gradient at a point whose value was already paid for by `prior`;
    /// charges one (adjoint) solve.
    fn gradient_after(
        &self,
        z: &ControlVector,
        xi: &ParamPoint,
        prior: &ModelEvaluation,
    ) -> Result<ControlVector>;

    /// Exact quadratic dependence on the control at fixed `ξ`, if the model
    /// has one. Charges whatever solves the expansion needs.
    fn quadratic_form(&self, _xi: &ParamPoint) -> Option<Result<QuadraticForm>> {
        None
    }

    fn param_dim(&self) -> usize {
        self.density().dim()
    }

    fn solve_count(&self) -> u64 {
        self.tally().get()
    }
}
