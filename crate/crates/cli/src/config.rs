//! Experiment configuration: presets, TOML file, command-line overrides.

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use riskgrad_core::problems::{ProblemKind, DEFAULT_NU};
use riskgrad_core::rom::QoiBound;
use riskgrad_core::optimizer::InconsistencyPolicy;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgChoice {
    Alg1,
    Alg2,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Mesh 16, budget 10⁴, 5 seeds.
    Desk,
    /// Mesh 32, budget 10⁶, 20 seeds.
    Paper,
}

/// Keys accepted in a `--config` file. Every key mirrors a flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<String>,
    pub alg: Option<AlgChoice>,
    pub beta: Option<Vec<f64>>,
    pub seeds: Option<usize>,
    pub seed_base: Option<u64>,
    pub scale: Option<Scale>,
    pub out: Option<PathBuf>,
    pub nu: Option<f64>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub theta: Option<f64>,
    pub growth_cap: Option<f64>,
    pub m0: Option<usize>,
    pub mmax: Option<u64>,
    pub mtrial: Option<usize>,
    pub mesh: Option<usize>,
    pub ref_grid_order: Option<usize>,
    pub qoi_bound: Option<String>,
    pub max_iterations: Option<usize>,
    pub wall_clock: Option<bool>,
    pub on_inconsistent: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Compare plain and importance-sampled adaptive CVaR minimization.
#[derive(Debug, Clone, Parser, Default)]
#[command(name = "riskgrad", version)]
pub struct Args {
    /// TOML file with defaults; flags given here win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// toy-quadratic, fem-kappa1 or fem-kappa2.
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub alg: Option<AlgChoice>,
    /// Risk level; repeat for several.
    #[arg(long)]
    pub beta: Vec<f64>,
    /// Number of independent seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// First seed value.
    #[arg(long)]
    pub seed_base: Option<u64>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Largest factor of sample growth per iteration.
    #[arg(long)]
    pub growth_cap: Option<f64>,
    #[arg(long)]
    pub m0: Option<usize>,
    /// Budget of full-order solves.
    #[arg(long)]
    pub mmax: Option<u64>,
    #[arg(long)]
    pub mtrial: Option<usize>,
    /// Cells per side of the FEM mesh.
    #[arg(long)]
    pub mesh: Option<usize>,
    #[arg(long)]
    pub ref_grid_order: Option<usize>,
    /// rigorous or heuristic.
    #[arg(long)]
    pub qoi_bound: Option<String>,
    /// Iteration cap in addition to the budget.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Record wall-clock seconds (makes output machine dependent).
    #[arg(long)]
    pub wall_clock: bool,
    /// Reaction to a sampled VaR below the estimated threshold:
    /// abort, resample-then-clamp or clamp.
    #[arg(long)]
    pub on_inconsistent: Option<String>,
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub alg: AlgChoice,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scale: Scale,
    pub out: PathBuf,
    pub nu: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub theta: f64,
    pub growth_cap: f64,
    pub m0: usize,
    pub m_max: u64,
    pub m_trial: usize,
    pub mesh: usize,
    pub ref_grid_order: usize,
    pub qoi_bound: QoiBound,
    pub max_iterations: Option<usize>,
    pub wall_clock: bool,
    pub inconsistency: InconsistencyPolicy,
}

impl ExperimentConfig {
    /// Defaults of a scale preset.
    pub fn preset(problem: ProblemKind, scale: Scale) -> Self {
        let (mesh, m_max, seeds) = match scale {
            Scale::Desk => (16, 10_000, 5),
            Scale::Paper => (32, 1_000_000, 20),
        };
        Self {
            problem,
            alg: AlgChoice::Both,
            betas: vec![0.9],
            seeds: (0..seeds).collect(),
            scale,
            out: PathBuf::from("results"),
            nu: DEFAULT_NU,
            epsilon: 1e-4,
            alpha: 0.5,
            theta: 0.5,
            growth_cap: 10.0,
            m0: 10,
            m_max,
            m_trial: 1000,
            mesh,
            ref_grid_order: 64,
            qoi_bound: QoiBound::Rigorous,
            max_iterations: None,
            wall_clock: false,
            inconsistency: InconsistencyPolicy::default(),
        }
    }

    /// Preset, then file, then flags.
    pub fn resolve(args: &Args) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let problem: ProblemKind = args
            .problem
            .clone()
            .or(file.problem.clone())
            .unwrap_or_else(|| "toy-quadratic".into())
            .parse()?;
        let scale = args.scale.or(file.scale).unwrap_or(Scale::Desk);
        let mut c = Self::preset(problem, scale);
        let seed_base = args.seed_base.or(file.seed_base).unwrap_or(0);
        let seeds = args.seeds.or(file.seeds).unwrap_or(c.seeds.len());
        c.seeds = (0..seeds as u64).map(|i| seed_base + i).collect();
        c.alg = args.alg.or(file.alg).unwrap_or(c.alg);
        if !args.beta.is_empty() {
            c.betas = args.beta.clone();
        } else if let Some(b) = file.beta {
            c.betas = b;
        }
        c.out = args.out.clone().or(file.out).unwrap_or(c.out);
        c.nu = args.nu.or(file.nu).unwrap_or(c.nu);
        c.epsilon = args.epsilon.or(file.epsilon).unwrap_or(c.epsilon);
        c.alpha = args.alpha.or(file.alpha).unwrap_or(c.alpha);
        c.theta = args.theta.or(file.theta).unwrap_or(c.theta);
        c.growth_cap = args.growth_cap.or(file.growth_cap).unwrap_or(c.growth_cap);
        c.m0 = args.m0.or(file.m0).unwrap_or(c.m0);
        c.m_max = args.mmax.or(file.mmax).unwrap_or(c.m_max);
        c.m_trial = args.mtrial.or(file.mtrial).unwrap_or(c.m_trial);
        c.mesh = args.mesh.or(file.mesh).unwrap_or(c.mesh);
        c.ref_grid_order = args.ref_grid_order.or(file.ref_grid_order).unwrap_or(c.ref_grid_order);
        if let Some(q) = args.qoi_bound.clone().or(file.qoi_bound) {
            c.qoi_bound = q.parse()?;
        }
        c.max_iterations = args.max_iterations.or(file.max_iterations);
        c.wall_clock = args.wall_clock || file.wall_clock.unwrap_or(false);
        if let Some(p) = args.on_inconsistent.clone().or(file.on_inconsistent) {
            c.inconsistency = p.parse()?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            bail!("at least one --beta is required");
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            bail!("beta must lie in (0, 1), got {b}");
        }
        if self.seeds.is_empty() {
            bail!("--seeds must be at least 1");
        }
        if !(self.epsilon > 0.0 && self.nu >= 0.0) {
            bail!("epsilon must be positive and nu nonnegative");
        }
        if self.mesh < 2 {
            bail!("--mesh must be at least 2");
        }
        if self.ref_grid_order == 0 {
            bail!("--ref-grid-order must be positive");
        }
        Ok(())
    }
}
