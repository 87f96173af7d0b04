//! Gradient methods for minimizing a smoothed Conditional Value-at-Risk of a
//! parametric quantity of interest, with adaptive sample sizes and
//! reduced-order-model driven importance sampling.

pub mod adaptive;
pub mod biasing;
pub mod cvar;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod problems;
pub mod quadrature;
pub mod rng;
pub mod rom;
pub mod smoothing;

pub use error::{Error, Result};
pub use model::{
    ControlSpace, ControlVector, ModelEvaluation, NominalDensity, ParamPoint, SolveTally,
    StochasticModel,
};
