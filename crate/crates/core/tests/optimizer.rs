use nalgebra::{DMatrix, DVector};
use riskgrad_core::cvar::CvarParams;
use riskgrad_core::model::{make_quadratic_toy, ControlVector, NominalDensity, QuadraticToySpec, StochasticModel};
use riskgrad_core::optimizer::{
    compute_reference, run_alg1, run_alg2, ExactFactory, IterationRecord, OptimizerConfig, Projection,
    ReferenceConfig, RomFactory, RunRecord,
};
use riskgrad_core::problems::{fem_model, toy_quadratic, ProblemKind, TOY_CENTER};
use riskgrad_core::rng::{nominal_points, Purpose, StreamKey};
use riskgrad_core::rom::QoiBound;

fn config(beta: f64, m_max: u64, seed: u64) -> OptimizerConfig {
    OptimizerConfig::new(CvarParams::new(beta, 1e-4).unwrap(), 10, m_max, seed)
}

fn toy_alg2(cfg: &OptimizerConfig, reference: Option<&ControlVector>) -> RunRecord {
    let toy = toy_quadratic();
    let oracle = toy.fresh();
    let factory = ExactFactory::new(move |z: &ControlVector, xi: &_| oracle.value_uncounted(z, xi));
    run_alg2(&toy, &factory, cfg, reference, |_| {}).unwrap()
}

fn check_budget(run: &RunRecord, m_max: u64) {
    let mut prev = 0;
    for r in &run.rows {
        assert!(r.cum_solves >= prev + r.m_k as u64, "row {}: {} after {}", r.k, r.cum_solves, prev);
        prev = r.cum_solves;
    }
    assert!(prev <= m_max);
}

#[test]
fn whole_region_reproduces_plain_sampling() {
    let mut cfg = config(0.9, 4000, 3);
    cfg.importance.whole_region = true;
    let toy = toy_quadratic();
    let a = run_alg1(&toy, &cfg, None, |_| {}).unwrap();
    let b = toy_alg2(&cfg, None);
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.m_k, y.m_k);
        assert!((x.t_k - y.t_k).abs() <= 1e-12);
        assert_eq!(x.cum_solves, y.cum_solves);
    }
    assert!((&a.final_z - &b.final_z).coefficients().amax() <= 1e-12);
}

#[test]
fn budgets_are_respected() {
    let toy = toy_quadratic();
    for seed in 0..3 {
        let cfg = config(0.9, 3000, seed);
        check_budget(&run_alg1(&toy.fresh(), &cfg, None, |_| {}).unwrap(), 3000);
        check_budget(&toy_alg2(&cfg, None), 3000);
    }
}

#[test]
fn rows_stream_in_order() {
    let toy = toy_quadratic();
    let cfg = config(0.95, 2000, 1);
    let mut seen: Vec<IterationRecord> = vec![];
    let run = run_alg1(&toy, &cfg, None, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, run.rows);
    assert!(seen.iter().enumerate().all(|(i, r)| r.k == i));
}

#[test]
fn deterministic_model_is_projected_gradient_descent() {
    // f(z, ξ) = ½‖z − c‖², independent of ξ.
    let c = DVector::from_vec(vec![0.5, -1.0]);
    let spec = QuadraticToySpec {
        a0: DMatrix::identity(2, 2),
        a: vec![DMatrix::zeros(2, 2); 2],
        b0: c.clone(),
        b: vec![DVector::zeros(2); 2],
        c0: 0.5 * c.norm_squared(),
        c: vec![0.0; 2],
        density: NominalDensity::unit_cube(2),
        admissible_radius: 5.0,
    };
    let (toy, _) = make_quadratic_toy(spec).unwrap();
    let mut cfg = config(0.9, 100_000, 0);
    cfg.max_iterations = Some(20);
    let reference = ControlVector::new(c);
    let run = run_alg1(&toy, &cfg, Some(&reference), |_| {}).unwrap();
    assert!(run.rows.iter().all(|r| r.m_k == 10));
    // All samples agree, so the CVaR gradient is ∇f and the error halves,
    // up to the bisection tolerance on t.
    let errs: Vec<f64> = run.rows.iter().map(|r| r.rel_error.unwrap()).collect();
    for w in errs.windows(2).take(10) {
        assert!((w[1] / w[0] - 0.5).abs() < 1e-6, "{errs:?}");
    }
}

#[test]
fn importance_sampling_stays_admissible_on_the_toy() {
    let cfg = config(0.9, 3000, 4);
    let center = ControlVector::from_slice(&TOY_CENTER);
    let run = toy_alg2(&cfg, Some(&center));
    assert!(run.rows.len() > 5);
    for w in run.rows.windows(2) {
        let thr = w[0].next_threshold.expect("threshold after every step");
        assert!(w[1].t_k >= thr);
        assert!(w[1].w_k > 0.0 && w[1].w_k <= 1.0);
        assert_eq!(w[1].bound_violations, 0);
    }
    assert!(run.rows.last().unwrap().rel_error.unwrap() < run.rows[0].rel_error.unwrap());
}

#[test]
fn importance_sampling_lowers_the_gradient_variance() {
    let toy = toy_quadratic();
    let n = 8;
    let (mut v1, mut v2) = (vec![0.0; n], vec![0.0; n]);
    for seed in 0..5 {
        let mut cfg = config(0.9, 100_000, seed);
        cfg.max_iterations = Some(n);
        let a = run_alg1(&toy.fresh(), &cfg, None, |_| {}).unwrap();
        let b = toy_alg2(&cfg, None);
        for k in 1..n {
            v1[k] += a.rows[k].variance;
            v2[k] += b.rows[k].variance;
        }
    }
    for k in 1..n {
        assert!(v2[k] <= v1[k], "k = {k}: {} > {}", v2[k], v1[k]);
    }
}

#[test]
fn fresh_streams_per_iteration() {
    let d = NominalDensity::unit_cube(2);
    let a = nominal_points(StreamKey::new(1, 4, Purpose::Sample), 20, &d);
    let b = nominal_points(StreamKey::new(1, 5, Purpose::Sample), 20, &d);
    let c = nominal_points(StreamKey::new(1, 4, Purpose::Trial), 20, &d);
    assert!(a.iter().all(|x| !b.contains(x) && !c.contains(x)));
    assert_eq!(a, nominal_points(StreamKey::new(1, 4, Purpose::Sample), 20, &d));
}

#[test]
fn reduced_models_drive_the_fem_problem() {
    let model = fem_model(ProblemKind::FemKappa1, 8, 1e-3).unwrap();
    let factory = RomFactory::new(model.clone(), QoiBound::Rigorous).unwrap();
    let mut cfg = config(0.9, 3000, 2);
    cfg.max_iterations = Some(12);
    let run = run_alg2(&model, &factory, &cfg, None, |_| {}).unwrap();
    assert_eq!(run.rows.len(), 12);
    let mut prev = 0;
    for r in &run.rows {
        // Values, adjoints and greedy snapshots are the only full solves.
        assert_eq!(r.cum_solves - prev, (r.m_k + r.active_gradients + r.greedy_solves) as u64);
        assert_eq!(r.bound_violations, 0);
        prev = r.cum_solves;
    }
    assert!(run.rows.iter().all(|r| r.w_k > 0.0 && r.w_k <= 1.0));
    assert!(run.rows.last().unwrap().w_k < 0.5);
    assert_eq!(model.solve_count(), prev);
}

#[test]
fn box_projection_is_enforced() {
    let toy = toy_quadratic();
    let mut cfg = config(0.9, 2000, 0);
    cfg.projection = Projection::Box { lower: 0.0, upper: 0.6 };
    let run = run_alg1(&toy, &cfg, None, |_| {}).unwrap();
    assert!(run.final_z.as_slice().iter().all(|v| (0.0..=0.6).contains(v)));
    let r = compute_reference(&toy.fresh(), &cfg.cvar, &cfg.projection, &ReferenceConfig::default(), None).unwrap();
    // The centre (1, −0.5) projects onto the corner (0.6, 0).
    assert!((r.z[0] - 0.6).abs() < 1e-8 && r.z[1].abs() < 1e-8, "{:?}", r.z);
}

fn fem_reference(order: usize, eps: f64) -> riskgrad_core::optimizer::Reference {
    let model = fem_model(ProblemKind::FemKappa1, 8, 1e-3).unwrap();
    let params = CvarParams::new(0.9, eps).unwrap();
    let cfg = ReferenceConfig {
        grid_order: order,
        ..ReferenceConfig::default()
    };
    compute_reference(&model, &params, &Projection::Identity, &cfg, None).unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn fem_reference_is_grid_converged_when_the_band_is_resolved() {
    let a = fem_reference(32, 1e-2);
    let b = fem_reference(64, 1e-2);
    assert!(rel_diff(&a.z, &b.z) <= 1e-8, "{}", rel_diff(&a.z, &b.z));
    assert!((a.value - b.value).abs() <= 1e-10 * b.value);
    assert!(b.residual_norm <= 1e-10);
}

#[test]
fn fem_reference_with_a_narrow_band() {
    // The ε-wide band of g'_ε is not resolved by 32 or 64 Gauss points, so
    // self-convergence is algebraic rather than spectral here.
    let a = fem_reference(32, 1e-4);
    let b = fem_reference(64, 1e-4);
    assert!(rel_diff(&a.z, &b.z) <= 1e-3, "{}", rel_diff(&a.z, &b.z));
    assert!((a.value - b.value).abs() <= 1e-5 * b.value);
}
