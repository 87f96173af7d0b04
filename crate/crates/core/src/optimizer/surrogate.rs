use crate::biasing::{FnSurrogate, Surrogate};
use crate::error::{Error, Result};
use crate::fem::FemModel;
use crate::linalg::BandedCholesky;
use crate::model::{ControlVector, ParamPoint};
use crate::rom::{greedy_enrich, pod, GreedyConfig, QoiBound, ReducedModel, ToleranceSchedule};
use nalgebra::DVector;
use std::sync::Arc;

/// Inputs for building the surrogate at the next control.
pub struct SurrogateRequest<'a> {
    /// Outer iteration that requests the surrogate.
    pub iteration: usize,
    pub z: &'a ControlVector,
    /// States already computed at the previous control (set `I₁`).
    pub snapshots: Vec<(ParamPoint, Arc<DVector<f64>>)>,
    /// Candidates for greedy enrichment (set `I₂`).
    pub candidates: Vec<ParamPoint>,
    /// Full solves the builder may still spend.
    pub max_full_solves: usize,
}

pub struct BuiltSurrogate {
    pub surrogate: Box<dyn Surrogate + Send>,
    pub full_solves: usize,
    pub basis_dim: Option<usize>,
    pub greedy_history: Vec<f64>,
}

pub trait SurrogateFactory: Sync {
    fn build(&self, request: SurrogateRequest<'_>) -> Result<BuiltSurrogate>;
}

/// Uses a cheap closed form of `f` itself, with a zero error bound.
pub struct ExactFactory<F> {
    value: Arc<F>,
}

impl<F> ExactFactory<F>
where
    F: Fn(&ControlVector, &ParamPoint) -> f64 + Send + Sync + 'static,
{
    pub fn new(value: F) -> Self {
        Self {
            value: Arc::new(value),
        }
    }
}

impl<F> SurrogateFactory for ExactFactory<F>
where
    F: Fn(&ControlVector, &ParamPoint) -> f64 + Send + Sync + 'static,
{
    fn build(&self, request: SurrogateRequest<'_>) -> Result<BuiltSurrogate> {
        let f = self.value.clone();
        let z = request.z.clone();
        Ok(BuiltSurrogate {
            surrogate: Box::new(FnSurrogate::new(move |xi: &ParamPoint| f(&z, xi), |_: &ParamPoint| 0.0)),
            full_solves: 0,
            basis_dim: None,
            greedy_history: vec![],
        })
    }
}

/// POD of the reused states followed by greedy enrichment over the candidates.
pub struct RomFactory {
    model: FemModel,
    mass: BandedCholesky,
    pub schedule: ToleranceSchedule,
    pub qoi_bound: QoiBound,
}

impl RomFactory {
    /// Greedy solves are charged to `model`'s tally.
    pub fn new(model: FemModel, qoi_bound: QoiBound) -> Result<Self> {
        let mass = model.problem().mass().cholesky()?;
        Ok(Self {
            model,
            mass,
            schedule: ToleranceSchedule::default(),
            qoi_bound,
        })
    }
}

impl SurrogateFactory for RomFactory {
    fn build(&self, request: SurrogateRequest<'_>) -> Result<BuiltSurrogate> {
        let tol = self.schedule.at(request.iteration);
        let states: Vec<DVector<f64>> = request.snapshots.iter().map(|(_, y)| (**y).clone()).collect();
        let modes = pod(&states, &self.mass, tol);
        let problem = self.model.problem().clone();
        let z = request.z.clone();
        let mut rom = if modes.is_empty() {
            // Every reused state vanished; seed the basis with one fresh solve.
            let Some(first) = request.candidates.first() else {
                return Err(Error::EmptyBasis);
            };
            if request.max_full_solves == 0 {
                return Err(Error::EmptyBasis);
            }
            let y = self.model.solve_state(&z, first)?;
            ReducedModel::new(problem, z.clone(), &nalgebra::DMatrix::from_columns(&[y]), self.qoi_bound)?
        } else {
            ReducedModel::new(problem, z.clone(), &modes.modes, self.qoi_bound)?
        };
        let seeded = usize::from(modes.is_empty());
        let report = greedy_enrich(
            &mut rom,
            request.candidates,
            GreedyConfig {
                tol,
                max_additions: request.max_full_solves - seeded,
            },
            |xi| self.model.solve_state(&z, xi),
        )?;
        Ok(BuiltSurrogate {
            basis_dim: Some(rom.dim()),
            full_solves: report.full_solves + seeded,
            greedy_history: report.max_bound_history,
            surrogate: Box::new(rom),
        })
    }
}
