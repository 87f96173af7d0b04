use super::{
    ControlSpace, ControlVector, ModelEvaluation, NominalDensity, ParamPoint, QuadraticForm,
    SolveTally, StochasticModel,
};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `f(z, ξ) = ½ zᵀ A(ξ) z − b(ξ)ᵀ z + c(ξ)` with every coefficient affine in `ξ`:
/// `A(ξ) = A₀ + Σᵢ ξᵢ Aᵢ`, and likewise for `b` and `c`.
#[derive(Debug, Clone)]
pub struct QuadraticToySpec {
    pub a0: DMatrix<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b0: DVector<f64>,
    pub b: Vec<DVector<f64>>,
    pub c0: f64,
    pub c: Vec<f64>,
    pub density: NominalDensity,
    /// Radius of the ball around the origin on which `C_f` is certified.
    pub admissible_radius: f64,
}

impl QuadraticToySpec {
    /// `f(z, ξ) = ½ s(ξ)‖z − center‖² + offset(ξ)`, with `s(ξ) = s₀ + Σ sᵢ ξᵢ`
    /// and `offset(ξ) = o₀ + Σ oᵢ ξᵢ`. Every sample gradient vanishes at
    /// `center`, which is therefore the minimizer of any risk measure of `f`.
    pub fn isotropic(
        center: &[f64],
        curvature0: f64,
        curvature: &[f64],
        offset0: f64,
        offset: &[f64],
        density: NominalDensity,
        admissible_radius: f64,
    ) -> Self {
        let d = center.len();
        let c = DVector::from_column_slice(center);
        let cc = c.norm_squared();
        let eye = DMatrix::<f64>::identity(d, d);
        Self {
            a0: &eye * curvature0,
            a: curvature.iter().map(|s| &eye * *s).collect(),
            b0: &c * curvature0,
            b: curvature.iter().map(|s| &c * *s).collect(),
            c0: 0.5 * curvature0 * cc + offset0,
            c: curvature
                .iter()
                .zip(offset)
                .map(|(s, o)| 0.5 * s * cc + o)
                .collect(),
            density,
            admissible_radius,
        }
    }
}

/// Strong convexity, smoothness and gradient bounds of a toy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityCertificate {
    pub mu_f: f64,
    pub l_f: f64,
    pub c_f: f64,
}

#[derive(Debug)]
pub struct QuadraticToy {
    spec: QuadraticToySpec,
    space: ControlSpace,
    tally: SolveTally,
}

/// Builds a quadratic toy and certifies its eigenvalue bounds.
///
/// `λ_min(A(ξ))` is concave and `λ_max(A(ξ))` convex in `ξ`, so both extremes
/// over the box are attained at its vertices; likewise `‖b(ξ)‖`.
pub fn make_quadratic_toy(spec: QuadraticToySpec) -> Result<(QuadraticToy, ConvexityCertificate)> {
    let d = spec.a0.nrows();
    let n = spec.density.dim();
    if !spec.a0.is_square() || spec.b0.len() != d {
        return Err(Error::InvalidConfig("toy coefficient shapes disagree".into()));
    }
    if spec.a.len() != n || spec.b.len() != n || spec.c.len() != n {
        return Err(Error::InvalidConfig(format!(
            "toy needs one affine term per parameter ({n})"
        )));
    }
    if spec.a.iter().any(|m| m.shape() != (d, d)) || spec.b.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidConfig("toy coefficient shapes disagree".into()));
    }
    let sym_err = |m: &DMatrix<f64>| (m - m.transpose()).amax();
    if sym_err(&spec.a0) > 0.0 || spec.a.iter().any(|m| sym_err(m) > 0.0) {
        return Err(Error::InvalidConfig("A(ξ) must be symmetric".into()));
    }

    let mut mu = f64::INFINITY;
    let mut l = 0.0f64;
    let mut bmax = 0.0f64;
    for mask in 0..(1usize << n) {
        let vertex: Vec<f64> = (0..n)
            .map(|i| {
                if mask >> i & 1 == 1 {
                    spec.density.upper()[i]
                } else {
                    spec.density.lower()[i]
                }
            })
            .collect();
        let xi = ParamPoint::new(vertex);
        let eig = SymmetricEigen::new(a_of(&spec, &xi));
        mu = mu.min(eig.eigenvalues.min());
        l = l.max(eig.eigenvalues.max());
        bmax = bmax.max(b_of(&spec, &xi).norm());
    }
    if !(mu > 0.0) {
        return Err(Error::NotPositiveDefinite {
            context: format!("toy A(ξ) has minimal eigenvalue {mu:e} on the parameter box"),
        });
    }
    let cert = ConvexityCertificate {
        mu_f: mu,
        l_f: l,
        c_f: l * spec.admissible_radius + bmax,
    };
    let toy = QuadraticToy {
        space: ControlSpace::euclidean(d),
        spec,
        tally: SolveTally::new(),
    };
    Ok((toy, cert))
}

fn a_of(spec: &QuadraticToySpec, xi: &ParamPoint) -> DMatrix<f64> {
    let mut a = spec.a0.clone();
    for (m, x) in spec.a.iter().zip(xi.coords()) {
        a += m * *x;
    }
    a
}

fn b_of(spec: &QuadraticToySpec, xi: &ParamPoint) -> DVector<f64> {
    let mut b = spec.b0.clone();
    for (v, x) in spec.b.iter().zip(xi.coords()) {
        b += v * *x;
    }
    b
}

fn c_of(spec: &QuadraticToySpec, xi: &ParamPoint) -> f64 {
    spec.c0 + spec.c.iter().zip(xi.coords()).map(|(c, x)| c * x).sum::<f64>()
}

impl QuadraticToy {
    pub fn spec(&self) -> &QuadraticToySpec {
        &self.spec
    }

    /// Same model with a zeroed solve tally.
    pub fn fresh(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            space: self.space.clone(),
            tally: SolveTally::new(),
        }
    }

    /// Closed-form value; does not touch the tally.
    pub fn value_uncounted(&self, z: &ControlVector, xi: &ParamPoint) -> f64 {
        let a = a_of(&self.spec, xi);
        let z = z.coefficients();
        0.5 * z.dot(&(a * z)) - b_of(&self.spec, xi).dot(z) + c_of(&self.spec, xi)
    }

    /// Closed-form gradient; does not touch the tally.
    pub fn gradient_uncounted(&self, z: &ControlVector, xi: &ParamPoint) -> ControlVector {
        let a = a_of(&self.spec, xi);
        ControlVector::new(a * z.coefficients() - b_of(&self.spec, xi))
    }

    fn check(&self, z: &ControlVector, xi: &ParamPoint) -> Result<()> {
        self.space.check(z)?;
        self.spec.density.check(xi)
    }
}

impl StochasticModel for QuadraticToy {
    fn control_space(&self) -> &ControlSpace {
        &self.space
    }

    fn density(&self) -> &NominalDensity {
        &self.spec.density
    }

    fn tally(&self) -> &SolveTally {
        &self.tally
    }

    fn evaluate(
        &self,
        z: &ControlVector,
        xi: &ParamPoint,
        need_gradient: bool,
    ) -> Result<ModelEvaluation> {
        self.check(z, xi)?;
        let cost = if need_gradient { 2 } else { 1 };
        self.tally.add(cost as u64);
        Ok(ModelEvaluation {
            value: self.value_uncounted(z, xi),
            gradient: need_gradient.then(|| self.gradient_uncounted(z, xi)),
            cost_units: cost,
            state: None,
        })
    }

    fn gradient_after(
        &self,
        z: &ControlVector,
        xi: &ParamPoint,
        _prior: &ModelEvaluation,
    ) -> Result<ControlVector> {
        self.check(z, xi)?;
        self.tally.add(1);
        Ok(self.gradient_uncounted(z, xi))
    }

    fn quadratic_form(&self, xi: &ParamPoint) -> Option<Result<QuadraticForm>> {
        Some(self.spec.density.check(xi).map(|_| {
            self.tally.add(1);
            QuadraticForm {
                hessian: a_of(&self.spec, xi),
                linear: -b_of(&self.spec, xi),
                constant: c_of(&self.spec, xi),
            }
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_toy() -> QuadraticToy {
        // f(z, ξ) = ½ (1 + ξ₁) z²
        let spec = QuadraticToySpec {
            a0: DMatrix::from_element(1, 1, 1.0),
            a: vec![DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(1, 1)],
            b0: DVector::zeros(1),
            b: vec![DVector::zeros(1), DVector::zeros(1)],
            c0: 0.0,
            c: vec![0.0, 0.0],
            density: NominalDensity::unit_cube(2),
            admissible_radius: 1.0,
        };
        make_quadratic_toy(spec).unwrap().0
    }

    #[test]
    fn hand_evaluation_and_cost() {
        let toy = scalar_toy();
        let z = ControlVector::from_slice(&[2.0]);
        let xi = ParamPoint::new(vec![1.0, 0.0]);
        let e = toy.evaluate(&z, &xi, false).unwrap();
        assert_eq!(e.value, 4.0);
        assert_eq!(e.cost_units, 1);
        assert!(e.gradient.is_none());
        let e = toy.evaluate(&z, &xi, true).unwrap();
        assert_eq!(e.gradient.as_ref().unwrap().as_slice(), &[4.0]);
        assert_eq!(e.cost_units, 2);
        assert_eq!(toy.solve_count(), 3);
        let g = toy.gradient_after(&z, &xi, &e).unwrap();
        assert_eq!(g.as_slice(), &[4.0]);
        assert_eq!(toy.solve_count(), 4);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let toy = scalar_toy();
        let z = ControlVector::from_slice(&[2.0]);
        let xi = ParamPoint::new(vec![1.5, 0.0]);
        assert!(matches!(
            toy.evaluate(&z, &xi, false),
            Err(Error::OutsideDomain { .. })
        ));
        assert_eq!(toy.solve_count(), 0);
    }

    #[test]
    fn certificate_eigenvalue_bounds() {
        let spec = QuadraticToySpec {
            a0: DMatrix::identity(3, 3),
            a: vec![DMatrix::identity(3, 3), DMatrix::zeros(3, 3)],
            b0: DVector::zeros(3),
            b: vec![DVector::zeros(3), DVector::zeros(3)],
            c0: 0.0,
            c: vec![0.0, 0.0],
            density: NominalDensity::unit_cube(2),
            admissible_radius: 1.0,
        };
        let (_, cert) = make_quadratic_toy(spec).unwrap();
        assert_eq!(cert.mu_f, 1.0);
        assert_eq!(cert.l_f, 2.0);
    }

    #[test]
    fn identity_toy_minimizer_is_origin() {
        let spec = QuadraticToySpec::isotropic(
            &[0.0, 0.0],
            1.0,
            &[0.0, 0.0],
            0.0,
            &[1.0, 0.0],
            NominalDensity::unit_cube(2),
            1.0,
        );
        let (toy, _) = make_quadratic_toy(spec).unwrap();
        let z = ControlVector::zeros(2);
        for xi in [[0.1, 0.2], [0.9, 0.4]] {
            let g = toy.gradient_uncounted(&z, &ParamPoint::new(xi.to_vec()));
            assert_eq!(g.coefficients().norm(), 0.0);
        }
    }

    #[test]
    fn non_spd_is_rejected() {
        let spec = QuadraticToySpec {
            a0: DMatrix::from_element(1, 1, 0.5),
            a: vec![DMatrix::from_element(1, 1, -1.0)],
            b0: DVector::zeros(1),
            b: vec![DVector::zeros(1)],
            c0: 0.0,
            c: vec![0.0],
            density: NominalDensity::unit_cube(1),
            admissible_radius: 1.0,
        };
        assert!(matches!(
            make_quadratic_toy(spec),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn isotropic_matches_closed_form() {
        let spec = QuadraticToySpec::isotropic(
            &[1.0, -0.5],
            0.2,
            &[0.2, 0.0],
            0.0,
            &[0.0, 1.0],
            NominalDensity::unit_cube(2),
            3.0,
        );
        let (toy, _) = make_quadratic_toy(spec).unwrap();
        let z = ControlVector::from_slice(&[0.3, 0.7]);
        let xi = ParamPoint::new(vec![0.4, 0.8]);
        let expected = 0.1 * 1.4 * ((0.3f64 - 1.0).powi(2) + 1.2f64.powi(2)) + 0.8;
        assert!((toy.value_uncounted(&z, &xi) - expected).abs() < 1e-14);
    }
}
