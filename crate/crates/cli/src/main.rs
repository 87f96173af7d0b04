use clap::Parser;
use riskgrad_cli::{run_experiment, Args, ExperimentConfig};
use std::process::ExitCode;

fn main() -> ExitCode {
    let args = Args::parse();
    let result = ExperimentConfig::resolve(&args).and_then(|c| run_experiment(&c));
    match result {
        Ok(out) => {
            for t in &out.traces {
                println!("trace   {}", t.display());
            }
            println!("summary {}", out.summary.display());
            for r in &out.summary_rows {
                println!(
                    "beta={} iterations alg1={} alg2={} solve_ratio={}",
                    r.beta,
                    r.alg1_iterations,
                    r.alg2_iterations,
                    r.solve_ratio.map_or("n/a".into(), |v| format!("{v:.3}"))
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
