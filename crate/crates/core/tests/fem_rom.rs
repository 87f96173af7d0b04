use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riskgrad_core::fem::{AffineDiffusion, FemModel, FemProblem, FemSpec};
use riskgrad_core::model::{ControlVector, NominalDensity, ParamPoint, StochasticModel};
use riskgrad_core::problems::{fem_problem, ProblemKind};
use riskgrad_core::rom::{gram_deviation, greedy_enrich, pod, GreedyConfig, QoiBound, ReducedModel};
use std::f64::consts::PI;
use std::sync::Arc;

fn exact(x: f64, y: f64) -> f64 {
    (PI * y).sin() * (PI * x).cos()
}

fn manufactured_load(x: f64, y: f64) -> f64 {
    2.0 * PI * PI * exact(x, y)
}

fn laplace_problem(n: usize, load: fn(f64, f64) -> f64) -> FemProblem {
    FemProblem::new(FemSpec {
        n,
        diffusion: AffineDiffusion::unit(),
        load,
        observe: |_, _| true,
        nu: 0.0,
        density: NominalDensity::unit_cube(2),
    })
    .unwrap()
}

fn random_xi(rng: &mut ChaCha8Rng) -> ParamPoint {
    ParamPoint::new(vec![rng.random::<f64>(), rng.random::<f64>()])
}

fn random_control(rng: &mut ChaCha8Rng, dim: usize) -> ControlVector {
    ControlVector::new(DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0)))
}

#[test]
fn manufactured_solution_converges_at_second_order() {
    let xi = ParamPoint::new(vec![0.5, 0.5]);
    let mut errors = vec![];
    for n in [8, 16, 32, 64] {
        let p = laplace_problem(n, manufactured_load);
        let chol = p.factor(&xi).unwrap();
        let y = p.solve_state_with(&chol, &ControlVector::zeros(p.control_dim()));
        errors.push(p.l2_error(&y, exact));
    }
    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate >= 1.9, "rate {rate} from {errors:?}");
    }
}

#[test]
fn zero_data_gives_zero_state() {
    let p = laplace_problem(6, |_, _| 0.0);
    let chol = p.factor(&ParamPoint::new(vec![0.1, 0.9])).unwrap();
    let y = p.solve_state_with(&chol, &ControlVector::zeros(p.control_dim()));
    assert_eq!(y.amax(), 0.0);
}

#[test]
fn value_matches_a_dense_solve() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa1, 8, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let xi = random_xi(&mut rng);
        let z = random_control(&mut rng, p.control_dim());
        let a = p.stiffness(&xi).to_dense();
        assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        let y = a.lu().solve(&p.rhs(&z)).unwrap();
        let m0 = p.mass_d0().to_dense();
        let me = p.control_space().gram().unwrap().clone();
        let zc = z.coefficients();
        let f = 0.5 * y.dot(&(&m0 * &y)) + 0.5 * p.nu() * zc.dot(&(&me * zc));
        let v = model.evaluate(&z, &xi, false).unwrap().value;
        assert!((v - f).abs() <= 1e-12 * f.abs().max(1e-300), "{v} vs {f}");
    }
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    for kind in [ProblemKind::FemKappa1, ProblemKind::FemKappa2] {
        let p = Arc::new(fem_problem(kind, 8, 1e-3).unwrap());
        let model = FemModel::new(p.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xi = random_xi(&mut rng);
        let z = random_control(&mut rng, p.control_dim());
        let ev = model.evaluate(&z, &xi, true).unwrap();
        assert_eq!(ev.cost_units, 2);
        let g = ev.gradient.unwrap();
        for _ in 0..5 {
            let d = random_control(&mut rng, p.control_dim());
            let h = 1e-4;
            let mut zp = z.clone();
            zp.axpy(h, &d);
            let mut zm = z.clone();
            zm.axpy(-h, &d);
            let fd = (model.evaluate(&zp, &xi, false).unwrap().value - model.evaluate(&zm, &xi, false).unwrap().value)
                / (2.0 * h);
            let an = model.control_space().inner(&g, &d);
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "{kind:?}: {fd} vs {an}");
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_counted() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa2, 8, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let xi = ParamPoint::new(vec![0.2, 0.7]);
    let z = ControlVector::from_slice(&vec![0.3; p.control_dim()]);
    let a = model.evaluate(&z, &xi, false).unwrap();
    let b = model.evaluate(&z, &xi, true).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(model.solve_count(), 3);
    model.gradient_after(&z, &xi, &a).unwrap();
    assert_eq!(model.solve_count(), 4);
    assert!(model.evaluate(&z, &ParamPoint::new(vec![1.5, 0.5]), false).is_err());
}

fn snapshots(model: &FemModel, z: &ControlVector, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| model.solve_state(z, &random_xi(&mut rng)).unwrap())
        .collect()
}

#[test]
fn certified_bounds_hold_on_random_parameters() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa1, 16, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let z = random_control(&mut rng, p.control_dim());
    let snaps = snapshots(&model, &z, 6, 1);
    let modes = pod(&snaps, &p.mass().cholesky().unwrap(), 1e-3);
    let rom = ReducedModel::new(p.clone(), z.clone(), &modes.modes, QoiBound::Rigorous).unwrap();
    let heuristic = ReducedModel::new(p.clone(), z.clone(), &modes.modes, QoiBound::Heuristic).unwrap();
    let (mut state_viol, mut qoi_viol, mut heur_viol) = (0, 0, 0);
    for _ in 0..100 {
        let xi = random_xi(&mut rng);
        let ev = model.evaluate(&z, &xi, false).unwrap();
        let y = ev.state.unwrap();
        let r = rom.evaluate(&xi).unwrap();
        let err = p.state_norm(&(y.as_ref() - rom.reconstruct(&r.coefficients)));
        state_viol += usize::from(err > r.state_bound);
        qoi_viol += usize::from((ev.value - r.value).abs() > r.qoi_bound);
        let h = heuristic.evaluate(&xi).unwrap();
        heur_viol += usize::from((ev.value - h.value).abs() > h.qoi_bound);
    }
    assert_eq!(state_viol, 0);
    assert_eq!(qoi_viol, 0);
    eprintln!("heuristic bound violations: {heur_viol}/100");
}

#[test]
fn greedy_enrichment_is_monotone_and_charged() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa2, 16, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let z = ControlVector::zeros(p.control_dim());
    let first = model.solve_state(&z, &ParamPoint::new(vec![0.5, 0.5])).unwrap();
    let basis = DMatrix::from_column_slice(first.len(), 1, first.as_slice());
    let mut rom = ReducedModel::new(p.clone(), z.clone(), &basis, QoiBound::Rigorous).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let candidates: Vec<ParamPoint> = (0..60).map(|_| random_xi(&mut rng)).collect();
    let before = model.solve_count();
    let report = greedy_enrich(
        &mut rom,
        candidates,
        GreedyConfig {
            tol: 1e-6,
            max_additions: 12,
        },
        |xi| model.solve_state(&z, xi),
    )
    .unwrap();
    assert_eq!(model.solve_count() - before, report.full_solves as u64);
    assert!(report.full_solves > 0);
    for w in report.max_bound_history.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", report.max_bound_history);
    }
    assert!(gram_deviation(&p, rom.basis()) <= 1e-10);
    for xi in &report.added {
        let r = rom.evaluate(xi).unwrap();
        assert!(r.state_bound <= 1e-8 * r.state_norm.max(1.0), "{}", r.state_bound);
    }
}

#[test]
fn targeted_enrichment_shrinks_the_bound() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa1, 16, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let z = ControlVector::from_slice(&vec![-1.0; p.control_dim()]);
    let snaps = snapshots(&model, &z, 2, 9);
    let modes = pod(&snaps, &p.mass().cholesky().unwrap(), 0.0);
    let mut rom = ReducedModel::new(p.clone(), z.clone(), &modes.modes, QoiBound::Rigorous).unwrap();
    let xi = ParamPoint::new(vec![0.9, 0.05]);
    let before = rom.evaluate(&xi).unwrap();
    let y = model.solve_state(&z, &xi).unwrap();
    assert!(rom.enrich(&y));
    let after = rom.evaluate(&xi).unwrap();
    assert!(after.qoi_bound * 10.0 <= before.qoi_bound);
    let f = model.evaluate(&z, &xi, false).unwrap().value;
    assert!((f - after.value).abs() <= 1e-8 * (1.0 + f.abs()));

    // A held-out parameter never gets a worse certificate.
    let held = ParamPoint::new(vec![0.3, 0.6]);
    let b0 = rom.evaluate(&held).unwrap().state_bound;
    for s in snapshots(&model, &z, 3, 21) {
        rom.enrich(&s);
    }
    assert!(rom.evaluate(&held).unwrap().state_bound <= b0 * (1.0 + 1e-8));
}

#[test]
fn full_basis_is_exact() {
    let p = Arc::new(fem_problem(ProblemKind::FemKappa2, 4, 1e-3).unwrap());
    let model = FemModel::new(p.clone());
    let n = p.state_dim();
    let rom = ReducedModel::new(p.clone(), ControlVector::zeros(p.control_dim()), &DMatrix::identity(n, n), QoiBound::Rigorous)
        .unwrap();
    let xi = ParamPoint::new(vec![0.4, 0.2]);
    let f = model.evaluate(&ControlVector::zeros(p.control_dim()), &xi, false).unwrap().value;
    let r = rom.evaluate(&xi).unwrap();
    assert!((f - r.value).abs() <= 1e-12 * f.abs());
}

#[test]
fn pod_ranks() {
    let p = fem_problem(ProblemKind::FemKappa1, 8, 1e-3).unwrap();
    let mass = p.mass().cholesky().unwrap();
    let n = p.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = DVector::from_fn(n, |_, _| rng.random::<f64>());
    assert_eq!(pod(&vec![v.clone(); 5], &mass, 1e-8).rank(), 1);

    let mut e1 = DVector::zeros(n);
    e1[0] = 1.0;
    let mut e2 = DVector::zeros(n);
    e2[n - 1] = 1.0;
    assert_eq!(pod(&[e1, e2], &mass, 0.0).rank(), 2);

    let gens: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect();
    let snaps: Vec<DVector<f64>> = (0..40)
        .map(|_| gens.iter().fold(DVector::zeros(n), |acc, g| acc + g * rng.random_range(-1.0..1.0)))
        .collect();
    let modes = pod(&snaps, &mass, 1e-12);
    assert_eq!(modes.rank(), 3);
    assert!(gram_deviation(&p, &modes.modes) <= 1e-10);

    assert!(pod(&[DVector::zeros(n)], &mass, 1e-3).is_empty());
}
