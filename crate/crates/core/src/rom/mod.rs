//! Reduced-basis surrogate of the FEM quantity of interest at a fixed control,
//! with a residual-based certificate.

mod pod;

pub use pod::{pod, PodModes};

use crate::error::{Error, Result};
use crate::fem::FemProblem;
use crate::model::{ControlVector, ParamPoint};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::sync::Arc;

/// How the state-error certificate is turned into a bound on `|f − f_r|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QoiBound {
    /// `(‖y_r‖_{L²(D₀)} + ½ e) e`, a guaranteed bound.
    #[default]
    Rigorous,
    /// `‖y_r‖²_{L²(D₀)} e`, cheaper to motivate but not guaranteed.
    Heuristic,
}

impl std::str::FromStr for QoiBound {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigorous" => Ok(QoiBound::Rigorous),
            "heuristic" => Ok(QoiBound::Heuristic),
            o => Err(Error::InvalidConfig(format!("unknown QoI bound '{o}'"))),
        }
    }
}

/// Constant of `‖v‖_{L²(D₀)} ≤ C ‖v‖_V`. The Poincaré constant of the unit
/// square with Dirichlet data on two opposite sides is `1/π`; `1` is safe.
pub const EMBEDDING_CONSTANT: f64 = 1.0;

/// Relative size of the floating-point guard added to residual norms.
const ROUNDOFF_GUARD: f64 = 1e-13;

/// Reduced model at one control `z`: a basis `V` orthonormal in `L²(D)`, the
/// projected operators, and a thin QR factor of the residual generators
/// `X^{-1/2} [ℓ + Bz, A_1 V, …, A_Q V]`.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    problem: Arc<FemProblem>,
    z: ControlVector,
    basis: DMatrix<f64>,
    a_hat: Vec<DMatrix<f64>>,
    f_hat: DVector<f64>,
    m0_hat: DMatrix<f64>,
    x_hat: DMatrix<f64>,
    residual_r: DMatrix<f64>,
    residual_col_norms: Vec<f64>,
    z_term: f64,
    qoi_bound: QoiBound,
}

/// Everything one reduced evaluation produces.
#[derive(Debug, Clone)]
pub struct ReducedEvaluation {
    pub coefficients: DVector<f64>,
    /// `f_r(z, ξ)`.
    pub value: f64,
    /// `‖y_r‖_{L²(D₀)}`.
    pub observed_norm: f64,
    /// `‖y_r‖_V`.
    pub state_norm: f64,
    /// Certified bound on `‖y − y_r‖_V`.
    pub state_bound: f64,
    /// Bound on `|f − f_r|` of the configured kind.
    pub qoi_bound: f64,
}

impl ReducedModel {
    /// Builds the reduced model on the span of `basis`, which is
    /// re-orthonormalized in `L²(D)`.
    pub fn new(problem: Arc<FemProblem>, z: ControlVector, basis: &DMatrix<f64>, qoi_bound: QoiBound) -> Result<Self> {
        problem.control_space().check(&z)?;
        let basis = orthonormalize(&problem, basis);
        if basis.ncols() == 0 {
            return Err(Error::EmptyBasis);
        }
        let z_term = 0.5 * problem.nu() * problem.control_space().norm_squared(&z);
        let mut rom = Self {
            problem,
            z,
            basis,
            a_hat: vec![],
            f_hat: DVector::zeros(0),
            m0_hat: DMatrix::zeros(0, 0),
            x_hat: DMatrix::zeros(0, 0),
            residual_r: DMatrix::zeros(0, 0),
            residual_col_norms: vec![],
            z_term,
            qoi_bound,
        };
        rom.project();
        Ok(rom)
    }

    fn project(&mut self) {
        let p = &self.problem;
        let v = &self.basis;
        let (n, r) = v.shape();
        let q = p.blocks().len();
        let rhs = p.rhs(&self.z);
        let av: Vec<DMatrix<f64>> = p
            .blocks()
            .iter()
            .map(|a| {
                let mut out = DMatrix::zeros(n, r);
                for c in 0..r {
                    out.set_column(c, &a.mul(v.column(c).clone_owned().as_slice()));
                }
                out
            })
            .collect();
        self.a_hat = av.iter().map(|a| {
            let m = v.transpose() * a;
            0.5 * (&m + m.transpose())
        }).collect();
        self.f_hat = v.transpose() * &rhs;
        let mut m0v = DMatrix::zeros(n, r);
        for c in 0..r {
            m0v.set_column(c, &p.mass_d0().mul(v.column(c).clone_owned().as_slice()));
        }
        let m0 = v.transpose() * m0v;
        self.m0_hat = 0.5 * (&m0 + m0.transpose());
        let mut xv = DMatrix::zeros(n, r);
        for c in 0..r {
            xv.set_column(c, &p.laplacian().mul(v.column(c).clone_owned().as_slice()));
        }
        let x = v.transpose() * xv;
        self.x_hat = 0.5 * (&x + x.transpose());

        // Residual generators whitened by the Laplacian: ‖r‖_{V'} = ‖L⁻¹ r‖.
        let lx = p.laplacian_cholesky();
        let cols = 1 + q * r;
        let mut phi = DMatrix::zeros(n, cols);
        let mut col = rhs.clone();
        lx.solve_lower_in_place(col.as_mut_slice());
        phi.set_column(0, &col);
        for (qi, a) in av.iter().enumerate() {
            for c in 0..r {
                let mut col = a.column(c).clone_owned();
                lx.solve_lower_in_place(col.as_mut_slice());
                phi.set_column(1 + qi * r + c, &col);
            }
        }
        self.residual_col_norms = (0..cols).map(|c| phi.column(c).norm()).collect();
        let qr = phi.qr();
        self.residual_r = qr.r();
    }

    pub fn problem(&self) -> &Arc<FemProblem> {
        &self.problem
    }

    pub fn control(&self) -> &ControlVector {
        &self.z
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn qoi_bound_kind(&self) -> QoiBound {
        self.qoi_bound
    }

    /// Full-order coefficients `V c`.
    pub fn reconstruct(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.basis * c
    }

    /// Solves `(Σ θ_q Â_q) c = Vᵀ(ℓ + Bz)` and evaluates both bounds.
    pub fn evaluate(&self, xi: &ParamPoint) -> Result<ReducedEvaluation> {
        self.problem.density().check(xi)?;
        let theta = self.problem.theta(xi);
        let r = self.dim();
        let mut a = DMatrix::zeros(r, r);
        for (t, ah) in theta.iter().zip(&self.a_hat) {
            a += ah * *t;
        }
        let chol = Cholesky::new(a).ok_or_else(|| Error::NotPositiveDefinite {
            context: "reduced stiffness".into(),
        })?;
        let c = chol.solve(&self.f_hat);
        let m0c = &self.m0_hat * &c;
        let obs_sq = c.dot(&m0c).max(0.0);
        let value = 0.5 * obs_sq + self.z_term;

        // s = [1, −θ_1 c, …, −θ_Q c]
        let mut s = DVector::zeros(1 + theta.len() * r);
        s[0] = 1.0;
        for (qi, t) in theta.iter().enumerate() {
            for k in 0..r {
                s[1 + qi * r + k] = -t * c[k];
            }
        }
        let res = (&self.residual_r * &s).norm();
        let guard: f64 = s
            .iter()
            .zip(&self.residual_col_norms)
            .map(|(a, b)| (a * b).abs())
            .sum::<f64>()
            * ROUNDOFF_GUARD;
        let alpha = self.problem.coercivity_lower_bound(xi);
        let state_bound = (res + guard) / alpha;
        let e = EMBEDDING_CONSTANT * state_bound;
        let observed_norm = obs_sq.sqrt();
        let qoi_bound = match self.qoi_bound {
            QoiBound::Rigorous => (observed_norm + 0.5 * e) * e,
            QoiBound::Heuristic => obs_sq * state_bound,
        };
        let state_norm = c.dot(&(&self.x_hat * &c)).max(0.0).sqrt();
        Ok(ReducedEvaluation {
            coefficients: c,
            value,
            observed_norm,
            state_norm,
            state_bound,
            qoi_bound,
        })
    }

    /// Adds one full-order state to the span. Returns `false` (and leaves the
    /// model unchanged) if the state is already represented to round-off.
    pub fn enrich(&mut self, state: &DVector<f64>) -> bool {
        let p = self.problem.clone();
        let mut w = state.clone();
        let norm0 = mass_norm(&p, &w);
        if !(norm0 > 0.0) {
            return false;
        }
        for _ in 0..2 {
            for k in 0..self.basis.ncols() {
                let vk = self.basis.column(k).clone_owned();
                let proj = mass_inner(&p, &vk, &w);
                w.axpy(-proj, &vk, 1.0);
            }
        }
        let norm = mass_norm(&p, &w);
        if norm <= 1e-10 * norm0 {
            return false;
        }
        w /= norm;
        let r = self.basis.ncols();
        self.basis = self.basis.clone().insert_column(r, 0.0);
        self.basis.set_column(r, &w);
        self.project();
        true
    }
}

fn mass_inner(p: &FemProblem, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    p.mass().bilinear(a.as_slice(), b.as_slice())
}

fn mass_norm(p: &FemProblem, a: &DVector<f64>) -> f64 {
    mass_inner(p, a, a).max(0.0).sqrt()
}

/// Modified Gram–Schmidt in `L²(D)`, applied twice; columns that vanish
/// relative to their original length are dropped.
pub fn orthonormalize(p: &FemProblem, basis: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(basis.ncols());
    for c in 0..basis.ncols() {
        let mut w = basis.column(c).clone_owned();
        let n0 = mass_norm(p, &w);
        if !(n0 > 0.0) {
            continue;
        }
        for _ in 0..2 {
            for v in &out {
                let proj = mass_inner(p, v, &w);
                w.axpy(-proj, v, 1.0);
            }
        }
        let n = mass_norm(p, &w);
        if n > 1e-10 * n0 {
            out.push(w / n);
        }
    }
    if out.is_empty() {
        DMatrix::zeros(basis.nrows(), 0)
    } else {
        DMatrix::from_columns(&out)
    }
}

/// Largest deviation of `Vᵀ M V` from the identity.
pub fn gram_deviation(p: &FemProblem, basis: &DMatrix<f64>) -> f64 {
    let r = basis.ncols();
    let mut worst: f64 = 0.0;
    for i in 0..r {
        let vi = basis.column(i).clone_owned();
        for j in 0..=i {
            let vj = basis.column(j).clone_owned();
            let g = mass_inner(p, &vi, &vj);
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Stopping rule and limits of the greedy loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyConfig {
    /// The loop runs while `max e^RB / ‖y_r‖_V ≥ tol` over the candidates.
    pub tol: f64,
    pub max_additions: usize,
}

/// What the greedy loop did.
#[derive(Debug, Clone, Default)]
pub struct GreedyReport {
    /// Maximum relative bound over the remaining candidates, recorded before
    /// every selection and once at exit.
    pub max_bound_history: Vec<f64>,
    /// Parameters whose full-order states were added.
    pub added: Vec<ParamPoint>,
    /// Full-order solves spent.
    pub full_solves: usize,
}

/// Enriches `rom` at the candidate with the largest relative state bound
/// until every remaining candidate is below `tol`, the candidates run out,
/// or `max_additions` is reached. `full_solver` must charge its solves.
pub fn greedy_enrich(
    rom: &mut ReducedModel,
    mut candidates: Vec<ParamPoint>,
    config: GreedyConfig,
    mut full_solver: impl FnMut(&ParamPoint) -> Result<DVector<f64>>,
) -> Result<GreedyReport> {
    let mut report = GreedyReport::default();
    loop {
        if candidates.is_empty() {
            break;
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for (i, xi) in candidates.iter().enumerate() {
            let e = rom.evaluate(xi)?;
            let rel = e.state_bound / e.state_norm.max(f64::MIN_POSITIVE);
            if rel > best.1 {
                best = (i, rel);
            }
        }
        report.max_bound_history.push(best.1);
        if best.1 < config.tol || report.added.len() >= config.max_additions {
            break;
        }
        let xi = candidates.swap_remove(best.0);
        let y = full_solver(&xi)?;
        report.full_solves += 1;
        rom.enrich(&y);
        report.added.push(xi);
    }
    Ok(report)
}

/// `tol_k = max(tol_min, tol_0 γ^k)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToleranceSchedule {
    pub initial: f64,
    pub factor: f64,
    pub floor: f64,
}

impl Default for ToleranceSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-2,
            factor: 0.8,
            floor: 1e-6,
        }
    }
}

impl ToleranceSchedule {
    pub fn at(&self, k: usize) -> f64 {
        (self.initial * self.factor.powi(k as i32)).max(self.floor)
    }
}
