use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use log::{error, info};
use mpcrl::experiment::{run_experiment, write_artifacts, Case, ExperimentConfig};

/// Safe policy-gradient learning of a robust MPC policy on the rotation plant.
///
/// Exit status: 0 on success, 1 when the safety audit finds a violation,
/// 2 on configuration or solver failure.
#[derive(Debug, Parser)]
#[command(name = "mpcrl", version)]
struct Args {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured artifact directory
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// 1 (stable plant) or 2 (unstable plant); resets kappa and alpha
    #[arg(long)]
    case: Option<String>,
    /// Number of parameter updates
    #[arg(long)]
    rl_steps: Option<usize>,
}

fn configure(args: &Args) -> mpcrl::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::for_case(Case::Stable),
    };
    if let Some(c) = &args.case {
        cfg.set("case", c)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(n) = args.rl_steps {
        cfg.rl_steps = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let cfg = match configure(&args) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    info!("case {:?}: kappa {}, alpha {}, {} RL steps, seed {}", cfg.case, cfg.kappa, cfg.alpha, cfg.rl_steps, cfg.seed);
    let start = Instant::now();
    let art = match run_experiment(&cfg) {
        Ok(a) => a,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_artifacts(&art, &cfg.output_dir) {
        error!("writing artifacts to {}: {e}", cfg.output_dir.display());
        return ExitCode::from(2);
    }
    let a = &art.audit;
    info!(
        "done in {:.1?}: {} closed-loop steps, {} violations, {} failed episodes, {} rejected updates; J {:.6} -> {:.6}",
        start.elapsed(),
        a.closed_loop_steps,
        a.violations,
        a.failed_episodes,
        a.rejected_updates,
        art.j_window(10, false),
        art.j_window(10, true)
    );
    if a.violations > 0 || a.membership_failures > 0 {
        error!("safety audit failed");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
