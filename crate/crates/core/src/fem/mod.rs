//! Boundary-controlled parametric diffusion on the unit square.
//!
//! `−∇·(κ(x, ξ)∇y) = l` with `y = 0` on `y ∈ {0, 1}`, zero flux on `x = 0`
//! and flux `z` on the right edge `x = 1`. The quantity of interest is
//! `½‖y‖²_{L²(D₀)} + ν/2 ‖z‖²_{L²(E)}`.

mod assembly;
mod mesh;

pub use assembly::{
    assemble_diffusion_blocks, assemble_load, assemble_load_all_nodes, assemble_mass,
    control_operator, edge_mass, AffineDiffusion, Field,
};
pub use mesh::Mesh;

use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, BandedSymmetric};
use crate::model::{
    ControlSpace, ControlVector, ModelEvaluation, NominalDensity, ParamPoint, QuadraticForm,
    SolveTally, StochasticModel,
};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Everything that does not depend on `(z, ξ)`.
#[derive(Debug)]
pub struct FemProblem {
    mesh: Mesh,
    diffusion: AffineDiffusion,
    blocks: Vec<BandedSymmetric>,
    field_min: Vec<f64>,
    field_max: Vec<f64>,
    laplacian: BandedSymmetric,
    laplacian_chol: BandedCholesky,
    mass: BandedSymmetric,
    mass_d0: BandedSymmetric,
    load: DVector<f64>,
    control: DMatrix<f64>,
    control_t: DMatrix<f64>,
    space: ControlSpace,
    density: NominalDensity,
    nu: f64,
}

/// Inputs of [`FemProblem::new`].
#[derive(Debug, Clone)]
pub struct FemSpec {
    pub n: usize,
    pub diffusion: AffineDiffusion,
    pub load: fn(f64, f64) -> f64,
    /// Observation region of the tracking term.
    pub observe: fn(f64, f64) -> bool,
    pub nu: f64,
    pub density: NominalDensity,
}

impl FemProblem {
    pub fn new(spec: FemSpec) -> Result<Self> {
        if !(spec.nu >= 0.0) {
            return Err(Error::InvalidConfig(format!("nu must be nonnegative, got {}", spec.nu)));
        }
        if spec.n < 2 {
            return Err(Error::InvalidConfig("mesh needs at least two cells per side".into()));
        }
        let mesh = Mesh::unit_square(spec.n);
        let (blocks, field_min, field_max) = assemble_diffusion_blocks(&mesh, &spec.diffusion);
        let (lap, _, _) = assemble_diffusion_blocks(&mesh, &AffineDiffusion::unit());
        let laplacian = lap.into_iter().next().expect("one block");
        let laplacian_chol = laplacian.cholesky()?;
        let mass = assemble_mass(&mesh, |_, _| true);
        let mass_d0 = assemble_mass(&mesh, spec.observe);
        let load = assemble_load(&mesh, spec.load);
        let control = control_operator(&mesh);
        let control_t = control.transpose();
        let space = ControlSpace::with_gram(edge_mass(&mesh))?;
        Ok(Self {
            mesh,
            diffusion: spec.diffusion,
            blocks,
            field_min,
            field_max,
            laplacian,
            laplacian_chol,
            mass,
            mass_d0,
            load,
            control,
            control_t,
            space,
            density: spec.density,
            nu: spec.nu,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn diffusion(&self) -> &AffineDiffusion {
        &self.diffusion
    }

    pub fn blocks(&self) -> &[BandedSymmetric] {
        &self.blocks
    }

    /// The `κ ≡ 1` stiffness, defining the state norm `‖v‖_V² = vᵀ X v`.
    pub fn laplacian(&self) -> &BandedSymmetric {
        &self.laplacian
    }

    pub fn laplacian_cholesky(&self) -> &BandedCholesky {
        &self.laplacian_chol
    }

    /// `L²(D)` mass on the free nodes.
    pub fn mass(&self) -> &BandedSymmetric {
        &self.mass
    }

    pub fn mass_d0(&self) -> &BandedSymmetric {
        &self.mass_d0
    }

    pub fn load(&self) -> &DVector<f64> {
        &self.load
    }

    pub fn control_operator(&self) -> &DMatrix<f64> {
        &self.control
    }

    pub fn control_space(&self) -> &ControlSpace {
        &self.space
    }

    pub fn density(&self) -> &NominalDensity {
        &self.density
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn state_dim(&self) -> usize {
        self.mesh.free_count()
    }

    pub fn control_dim(&self) -> usize {
        self.mesh.cells_per_side() + 1
    }

    pub fn theta(&self, xi: &ParamPoint) -> Vec<f64> {
        self.diffusion.theta(xi.coords())
    }

    /// Lower bound of `κ(·, ξ)` over all quadrature points, taken term by term.
    /// The discrete form satisfies `a(v, v; ξ) ≥ α_LB(ξ) ‖v‖_V²`.
    pub fn coercivity_lower_bound(&self, xi: &ParamPoint) -> f64 {
        self.theta(xi)
            .iter()
            .enumerate()
            .map(|(q, t)| {
                if *t >= 0.0 {
                    t * self.field_min[q]
                } else {
                    t * self.field_max[q]
                }
            })
            .sum()
    }

    pub fn stiffness(&self, xi: &ParamPoint) -> BandedSymmetric {
        BandedSymmetric::combination(&self.theta(xi), &self.blocks)
    }

    pub fn factor(&self, xi: &ParamPoint) -> Result<BandedCholesky> {
        self.stiffness(xi).cholesky()
    }

    /// `ℓ + B z`.
    pub fn rhs(&self, z: &ControlVector) -> DVector<f64> {
        &self.load + &self.control * z.coefficients()
    }

    pub fn solve_state_with(&self, chol: &BandedCholesky, z: &ControlVector) -> DVector<f64> {
        let mut y = self.rhs(z);
        chol.solve_in_place(y.as_mut_slice());
        y
    }

    /// `½ yᵀ M_{D₀} y + ν/2 zᵀ M_E z`.
    pub fn qoi(&self, y: &DVector<f64>, z: &ControlVector) -> f64 {
        0.5 * self.mass_d0.bilinear(y.as_slice(), y.as_slice())
            + 0.5 * self.nu * self.space.norm_squared(z)
    }

    /// Riesz gradient `ν z + M_E⁻¹ Bᵀ p` with `A p = M_{D₀} y`.
    pub fn gradient_with(&self, chol: &BandedCholesky, y: &DVector<f64>, z: &ControlVector) -> ControlVector {
        let mut p = self.mass_d0.mul(y.as_slice());
        chol.solve_in_place(p.as_mut_slice());
        let euclid = &self.control_t * p + self.space.lower(z) * self.nu;
        self.space.riesz(euclid)
    }

    /// `‖v‖_V = (vᵀ X v)^{1/2}`.
    pub fn state_norm(&self, v: &DVector<f64>) -> f64 {
        self.laplacian.bilinear(v.as_slice(), v.as_slice()).max(0.0).sqrt()
    }

    /// `‖y_h − u‖_{L²(D)}` for a free-node vector `y_h`, by the seven-point rule
    /// on every triangle.
    pub fn l2_error(&self, y: &DVector<f64>, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let rule = assembly::triangle_rule();
        let mesh = &self.mesh;
        let mut sum = 0.0;
        for tri in mesh.triangles() {
            let el = assembly::Element::new(mesh, tri);
            let vals = tri.map(|v| mesh.free_index(v).map_or(0.0, |i| y[i]));
            for (bary, w) in &rule {
                let [x, yy] = el.point(bary);
                let uh: f64 = bary.iter().zip(&vals).map(|(b, v)| b * v).sum();
                sum += w * el.area * (uh - exact(x, yy)).powi(2);
            }
        }
        sum.sqrt()
    }

    /// `‖v‖_{L²(D₀)}`.
    pub fn observed_norm(&self, v: &DVector<f64>) -> f64 {
        self.mass_d0.bilinear(v.as_slice(), v.as_slice()).max(0.0).sqrt()
    }
}

/// [`StochasticModel`] view of a [`FemProblem`] with its own solve tally.
#[derive(Debug, Clone)]
pub struct FemModel {
    problem: Arc<FemProblem>,
    tally: Arc<SolveTally>,
}

impl FemModel {
    pub fn new(problem: Arc<FemProblem>) -> Self {
        Self {
            problem,
            tally: Arc::new(SolveTally::new()),
        }
    }

    pub fn problem(&self) -> &Arc<FemProblem> {
        &self.problem
    }

    /// Same problem, fresh tally.
    pub fn fresh(&self) -> Self {
        Self::new(self.problem.clone())
    }

    /// State `y(z, ξ)`, charging one solve.
    pub fn solve_state(&self, z: &ControlVector, xi: &ParamPoint) -> Result<DVector<f64>> {
        self.check(z, xi)?;
        let chol = self.problem.factor(xi)?;
        self.tally.add(1);
        Ok(self.problem.solve_state_with(&chol, z))
    }

    fn check(&self, z: &ControlVector, xi: &ParamPoint) -> Result<()> {
        self.problem.space.check(z)?;
        self.problem.density.check(xi)
    }
}

impl StochasticModel for FemModel {
    fn control_space(&self) -> &ControlSpace {
        &self.problem.space
    }

    fn density(&self) -> &NominalDensity {
        &self.problem.density
    }

    fn tally(&self) -> &SolveTally {
        &self.tally
    }

    fn evaluate(&self, z: &ControlVector, xi: &ParamPoint, need_gradient: bool) -> Result<ModelEvaluation> {
        self.check(z, xi)?;
        let p = &self.problem;
        let chol = p.factor(xi)?;
        let y = p.solve_state_with(&chol, z);
        let value = p.qoi(&y, z);
        let gradient = need_gradient.then(|| p.gradient_with(&chol, &y, z));
        let cost = if need_gradient { 2 } else { 1 };
        self.tally.add(cost as u64);
        Ok(ModelEvaluation {
            value,
            gradient,
            cost_units: cost,
            state: Some(Arc::new(y)),
        })
    }

    fn gradient_after(&self, z: &ControlVector, xi: &ParamPoint, prior: &ModelEvaluation) -> Result<ControlVector> {
        self.check(z, xi)?;
        let p = &self.problem;
        let chol = p.factor(xi)?;
        let y = match &prior.state {
            Some(y) => y.clone(),
            None => Arc::new(p.solve_state_with(&chol, z)),
        };
        self.tally.add(1);
        Ok(p.gradient_with(&chol, &y, z))
    }

    /// `y(z) = y₀ + S z` with `S = A⁻¹B`; charges one solve per column plus
    /// one for `y₀`.
    fn quadratic_form(&self, xi: &ParamPoint) -> Option<Result<QuadraticForm>> {
        Some((|| {
            self.problem.density.check(xi)?;
            let p = &self.problem;
            let chol = p.factor(xi)?;
            let nc = p.control_dim();
            let mut y0 = p.load.clone();
            chol.solve_in_place(y0.as_mut_slice());
            let mut s = p.control.clone();
            for c in 0..nc {
                let mut col = s.column(c).clone_owned();
                chol.solve_in_place(col.as_mut_slice());
                s.set_column(c, &col);
            }
            self.tally.add(nc as u64 + 1);
            let m0 = p.mass_d0.to_dense();
            let m0s = &m0 * &s;
            let hessian = s.transpose() * &m0s + p.space.gram().expect("edge mass Gram") * p.nu;
            let linear = m0s.transpose() * &y0;
            let constant = 0.5 * p.mass_d0.bilinear(y0.as_slice(), y0.as_slice());
            Ok(QuadraticForm {
                hessian: 0.5 * (&hessian + hessian.transpose()),
                linear,
                constant,
            })
        })())
    }
}
