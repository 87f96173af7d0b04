//! Shipped problem instances.

use crate::error::{Error, Result};
use crate::fem::{AffineDiffusion, FemModel, FemProblem, FemSpec};
use crate::model::{make_quadratic_toy, NominalDensity, QuadraticToy, QuadraticToySpec};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// `1 + (ξ₁/2) sin πx sin πy + (ξ₂/5) sin πx sin 2πy`.
pub fn kappa1(x: [f64; 2], xi: [f64; 2]) -> f64 {
    let [x, y] = x;
    1.0 + 0.5 * xi[0] * (PI * x).sin() * (PI * y).sin()
        + 0.2 * xi[1] * (PI * x).sin() * (2.0 * PI * y).sin()
}

/// `0.01 + ξ₁ exp(sin πx sin πy) + ξ₂ exp(cos πx cos πy)`.
pub fn kappa2(x: [f64; 2], xi: [f64; 2]) -> f64 {
    let [x, y] = x;
    0.01 + xi[0] * ((PI * x).sin() * (PI * y).sin()).exp()
        + xi[1] * ((PI * x).cos() * (PI * y).cos()).exp()
}

pub fn kappa1_affine() -> AffineDiffusion {
    AffineDiffusion {
        name: "kappa1",
        fields: vec![
            |_, _| 1.0,
            |x, y| (PI * x).sin() * (PI * y).sin(),
            |x, y| (PI * x).sin() * (2.0 * PI * y).sin(),
        ],
        factors: |xi| vec![1.0, 0.5 * xi[0], 0.2 * xi[1]],
    }
}

pub fn kappa2_affine() -> AffineDiffusion {
    AffineDiffusion {
        name: "kappa2",
        fields: vec![
            |_, _| 1.0,
            |x, y| ((PI * x).sin() * (PI * y).sin()).exp(),
            |x, y| ((PI * x).cos() * (PI * y).cos()).exp(),
        ],
        factors: |xi| vec![0.01, xi[0], xi[1]],
    }
}

/// Correlation length of the point-like sources.
pub const SOURCE_LENGTH: f64 = 0.05;

/// `100 Σ_{i=1}^{3} exp(−‖x − x_i‖ / L)` with `x_i = (0.25, 0.25 i)`.
pub fn source(x: f64, y: f64) -> f64 {
    (1..=3)
        .map(|i| {
            let dx = x - 0.25;
            let dy = y - 0.25 * i as f64;
            (-(dx * dx + dy * dy).sqrt() / SOURCE_LENGTH).exp()
        })
        .sum::<f64>()
        * 100.0
}

/// Observation region `D₀ = (0.5, 1) × (0, 1)`.
pub fn in_observation_region(x: f64, _y: f64) -> bool {
    x > 0.5
}

pub const DEFAULT_NU: f64 = 1e-3;

/// Names addressable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    ToyQuadratic,
    FemKappa1,
    FemKappa2,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::ToyQuadratic => "toy-quadratic",
            ProblemKind::FemKappa1 => "fem-kappa1",
            ProblemKind::FemKappa2 => "fem-kappa2",
        }
    }

    pub fn is_fem(self) -> bool {
        !matches!(self, ProblemKind::ToyQuadratic)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-quadratic" => Ok(ProblemKind::ToyQuadratic),
            "fem-kappa1" => Ok(ProblemKind::FemKappa1),
            "fem-kappa2" => Ok(ProblemKind::FemKappa2),
            other => Err(Error::InvalidConfig(format!(
                "unknown problem '{other}' (expected toy-quadratic, fem-kappa1 or fem-kappa2)"
            ))),
        }
    }
}

/// Model-level parameters of a problem.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Cells per side of the FEM mesh (ignored by the toy).
    pub mesh_n: usize,
    pub nu: f64,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, mesh_n: usize, nu: f64) -> Self {
        Self { kind, mesh_n, nu }
    }
}

pub fn fem_problem(kind: ProblemKind, n: usize, nu: f64) -> Result<FemProblem> {
    let diffusion = match kind {
        ProblemKind::FemKappa1 => kappa1_affine(),
        ProblemKind::FemKappa2 => kappa2_affine(),
        ProblemKind::ToyQuadratic => {
            return Err(Error::InvalidConfig("toy-quadratic is not a FEM problem".into()))
        }
    };
    FemProblem::new(FemSpec {
        n,
        diffusion,
        load: source,
        observe: in_observation_region,
        nu,
        density: NominalDensity::unit_cube(2),
    })
}

pub fn fem_model(kind: ProblemKind, n: usize, nu: f64) -> Result<FemModel> {
    Ok(FemModel::new(Arc::new(fem_problem(kind, n, nu)?)))
}

/// Centre of the shipped toy; it is the minimizer of every risk measure.
pub const TOY_CENTER: [f64; 2] = [1.0, -0.5];

/// `f(z, ξ) = 0.1 (1 + ξ₁) ‖z − c‖² + ξ₂` on the unit square, `c = (1, −0.5)`.
pub fn toy_quadratic() -> QuadraticToy {
    let spec = QuadraticToySpec::isotropic(
        &TOY_CENTER,
        0.2,
        &[0.2, 0.0],
        0.0,
        &[0.0, 1.0],
        NominalDensity::unit_cube(2),
        3.0,
    );
    make_quadratic_toy(spec).expect("shipped toy is convex").0
}
