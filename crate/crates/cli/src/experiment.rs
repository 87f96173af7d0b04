//! Runs both algorithms over seeds and risk levels and writes the traces.

use crate::config::{AlgChoice, ExperimentConfig};
use crate::output::{summarize, write_mean_trace, RowWriter, SummaryRow};
use anyhow::{Context, Result};
use rayon::prelude::*;
use riskgrad_core::adaptive::NormTestConfig;
use riskgrad_core::cvar::CvarParams;
use riskgrad_core::fem::FemModel;
use riskgrad_core::model::QuadraticToy;
use riskgrad_core::optimizer::{
    compute_reference, run_alg1, run_alg2, Algorithm, ExactFactory, ImportanceConfig,
    OptimizerConfig, Projection, Reference, ReferenceCache, ReferenceConfig, ReferenceKey,
    RomFactory, RunRecord,
};
use riskgrad_core::problems::{fem_model, toy_quadratic, ProblemKind};
use riskgrad_core::ControlVector;
use std::path::PathBuf;

/// A problem instance whose solve tally can be reset per run.
pub enum ProblemModel {
    Toy(QuadraticToy),
    Fem(FemModel),
}

impl ProblemModel {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        Ok(match config.problem {
            ProblemKind::ToyQuadratic => ProblemModel::Toy(toy_quadratic()),
            k => ProblemModel::Fem(fem_model(k, config.mesh, config.nu)?),
        })
    }

    pub fn fresh(&self) -> Self {
        match self {
            ProblemModel::Toy(t) => ProblemModel::Toy(t.fresh()),
            ProblemModel::Fem(f) => ProblemModel::Fem(f.fresh()),
        }
    }
}

pub fn optimizer_config(config: &ExperimentConfig, beta: f64, seed: u64) -> Result<OptimizerConfig> {
    let cvar = CvarParams::new(beta, config.epsilon)?;
    let mut o = OptimizerConfig::new(cvar, config.m0, config.m_max, seed);
    o.norm_test = NormTestConfig::new(config.theta, config.alpha, config.growth_cap)?;
    o.max_iterations = config.max_iterations;
    o.importance = ImportanceConfig {
        m_trial: config.m_trial,
        inconsistency: config.inconsistency,
        ..ImportanceConfig::default()
    };
    o.validate()?;
    Ok(o)
}

pub fn reference_key(config: &ExperimentConfig, beta: f64) -> ReferenceKey {
    let fem = config.problem.is_fem();
    ReferenceKey {
        problem: config.problem.name().into(),
        beta,
        epsilon: config.epsilon,
        nu: fem.then_some(config.nu),
        mesh: fem.then_some(config.mesh),
        grid_order: config.ref_grid_order,
        projection: Projection::Identity,
        tol: ReferenceConfig::default().tol,
    }
}

/// Reference minimizer from the cache, computed on a miss.
pub fn reference(config: &ExperimentConfig, model: &ProblemModel, beta: f64) -> Result<Reference> {
    let cache = ReferenceCache::from_env_or(config.out.join("reference-cache"));
    let key = reference_key(config, beta);
    let rc = ReferenceConfig {
        grid_order: config.ref_grid_order,
        alpha: config.alpha,
        ..ReferenceConfig::default()
    };
    let params = CvarParams::new(beta, config.epsilon)?;
    let r = cache.get_or_compute(&key, || match model.fresh() {
        ProblemModel::Toy(t) => compute_reference(&t, &params, &Projection::Identity, &rc, None),
        ProblemModel::Fem(f) => compute_reference(&f, &params, &Projection::Identity, &rc, None),
    })?;
    Ok(r)
}

/// Runs one algorithm for one seed on a fresh tally.
pub fn run_single(
    model: &ProblemModel,
    alg: Algorithm,
    opt: &OptimizerConfig,
    qoi_bound: riskgrad_core::rom::QoiBound,
    reference: Option<&ControlVector>,
    on_row: impl FnMut(&riskgrad_core::optimizer::IterationRecord),
) -> Result<RunRecord> {
    let record = match (model.fresh(), alg) {
        (ProblemModel::Toy(t), Algorithm::Alg1) => run_alg1(&t, opt, reference, on_row)?,
        (ProblemModel::Fem(f), Algorithm::Alg1) => run_alg1(&f, opt, reference, on_row)?,
        (ProblemModel::Toy(t), Algorithm::Alg2) => {
            let exact = t.fresh();
            let factory = ExactFactory::new(move |z, xi| exact.value_uncounted(z, xi));
            run_alg2(&t, &factory, opt, reference, on_row)?
        }
        (ProblemModel::Fem(f), Algorithm::Alg2) => {
            let factory = RomFactory::new(f.clone(), qoi_bound)?;
            run_alg2(&f, &factory, opt, reference, on_row)?
        }
    };
    Ok(record)
}

/// Everything an experiment produced.
#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Seed-averaged trace per (algorithm, β).
    pub traces: Vec<PathBuf>,
    pub summary: PathBuf,
    pub summary_rows: Vec<SummaryRow>,
    /// Every run, ordered by β, then algorithm, then seed.
    pub runs: Vec<(f64, RunRecord)>,
}

pub fn beta_label(beta: f64) -> String {
    format!("{beta}")
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let model = ProblemModel::build(config)?;
    let runs_dir = config.out.join("runs");
    std::fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    let algs: Vec<Algorithm> = match config.alg {
        AlgChoice::Alg1 => vec![Algorithm::Alg1],
        AlgChoice::Alg2 => vec![Algorithm::Alg2],
        AlgChoice::Both => vec![Algorithm::Alg1, Algorithm::Alg2],
    };
    let name = config.problem.name();
    let mut traces = Vec::new();
    let mut runs = Vec::new();
    let mut summary_rows = Vec::new();
    for &beta in &config.betas {
        let reference = reference(config, &model, beta)?;
        let z_star = reference.control();
        let mut per_alg: Vec<(Algorithm, Vec<RunRecord>)> = Vec::new();
        for &alg in &algs {
            let records: Vec<RunRecord> = config
                .seeds
                .par_iter()
                .map(|&seed| {
                    let opt = optimizer_config(config, beta, seed)?;
                    let path = runs_dir.join(format!(
                        "{name}-{}-beta{}-seed{seed}.csv",
                        alg.name(),
                        beta_label(beta)
                    ));
                    let mut writer = RowWriter::create(&path, config.wall_clock, true)?;
                    let mut failure = None;
                    let record = run_single(&model, alg, &opt, config.qoi_bound, Some(&z_star), |row| {
                        if failure.is_none() {
                            failure = writer.write(row, None).err();
                        }
                    })
                    .with_context(|| format!("{name} {} beta={beta} seed={seed}", alg.name()))?;
                    if let Some(e) = failure {
                        return Err(e);
                    }
                    writer.finish()?;
                    Ok(record)
                })
                .collect::<Result<_>>()?;
            let path = config
                .out
                .join(format!("{name}-{}-beta{}.csv", alg.name(), beta_label(beta)));
            write_mean_trace(&path, &records, config.wall_clock)?;
            traces.push(path);
            per_alg.push((alg, records));
        }
        if let [(_, a1), (_, a2)] = per_alg.as_slice() {
            summary_rows.push(summarize(name, beta, a1, a2, config.wall_clock));
        }
        for (_, records) in per_alg {
            runs.extend(records.into_iter().map(|r| (beta, r)));
        }
    }
    let summary = config.out.join(format!("{name}-summary.csv"));
    crate::output::write_summary(&summary, &summary_rows)?;
    Ok(ExperimentOutcome {
        traces,
        summary,
        summary_rows,
        runs,
    })
}
