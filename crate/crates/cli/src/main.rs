//! `mfgw`: generate an EV fleet scenario, solve it and write the reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mfg_welfare::harness::{compare_algorithms, run_scenario, AlgorithmChoice, ScenarioConfig};

#[derive(Debug, Parser)]
#[command(name = "mfgw", version, about = "Social-welfare solver for aggregative charging games")]
struct Args {
    /// Scenario file (TOML); defaults are used for anything it omits.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_algorithm)]
    algorithm: Option<AlgorithmChoice>,
    #[arg(long)]
    n_agents: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_algorithm(s: &str) -> Result<AlgorithmChoice, String> {
    s.parse().map_err(|e: mfg_welfare::Error| e.to_string())
}

fn build_config(args: &Args) -> mfg_welfare::Result<ScenarioConfig> {
    let mut config = match &args.scenario {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(a) = args.algorithm {
        config.solver.algorithm = a;
    }
    if let Some(n) = args.n_agents {
        config.fleet.n_agents = n;
    }
    if let Some(k) = args.horizon {
        config.grid.horizon = k;
    }
    if let Some(s) = args.seed {
        config.fleet.seed = s;
    }
    if let Some(t) = args.tol {
        config.solver.tol = t;
    }
    if let Some(m) = args.max_iter {
        config.solver.max_iter = m;
    }
    if let Some(d) = &args.out_dir {
        config.solver.out_dir = d.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(args: &Args) -> mfg_welfare::Result<()> {
    let config = build_config(args)?;
    let report = run_scenario(&config)?;
    let summary = report.summary();
    println!(
        "N={} K={} seed={} potential check: {}",
        summary.n_agents,
        summary.horizon,
        summary.seed,
        if summary.potential_check_passed { "passed" } else { "FAILED" }
    );
    if report.runs.len() >= 2 {
        print!("{}", compare_algorithms(&report)?.table);
    }
    for a in &summary.algorithms {
        let gap = a.max_nash_gap.map_or("-".to_string(), |g| format!("{g:.3e}"));
        let dual = a.duality_gap.map_or("-".to_string(), |g| format!("{g:.3e}"));
        println!(
            "{}: converged={} iterations={} welfare={:.9} nash_gap={gap} duality_gap={dual}",
            a.algorithm.as_str(),
            a.converged,
            a.iterations,
            a.final_welfare
        );
    }
    println!("outputs written to {}", config.solver.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
