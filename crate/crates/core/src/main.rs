use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convexflow::config::RunConfig;
use convexflow::run::{exit_code, run, Command};

/// Convex envelopes via the convexifying evolution equation, with Monte
/// Carlo validation and gradient-flow global minimization.
#[derive(Parser)]
#[command(name = "convexflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in problem name.
    #[arg(long)]
    problem: Option<String>,
    /// Nodes per axis.
    #[arg(long)]
    n: Option<usize>,
    /// Solver horizon.
    #[arg(long = "T")]
    t_end: Option<f64>,
    /// Direction preset: axes, stencil8 or stencil16.
    #[arg(long)]
    dirs: Option<String>,
    /// CFL safety factor in (0, 1].
    #[arg(long)]
    safety: Option<f64>,
    /// RNG seed for all Monte Carlo estimators.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (CONVEXFLOW_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    /// ODE method for the gradient flow: euler or rk4.
    #[arg(long)]
    method: Option<String>,
    /// Monte Carlo path count for the feedback estimator.
    #[arg(long)]
    paths: Option<usize>,
    /// Monte Carlo time step.
    #[arg(long = "dt-mc")]
    dt_mc: Option<f64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Evolve the equation, write snapshots and the structural audit.
    Solve(Common),
    /// Compute the discrete convex envelope and oracle cross-checks.
    Envelope(Common),
    /// Integrate gradient-flow trajectories to the envelope's minimizers.
    Flow(Common),
    /// Monte Carlo checks of the stochastic-control representation.
    McValidate(Common),
    /// Fit the exponential convergence rate of the error series.
    Rates(Common),
    /// Structural-invariant audit plus the gradient bound check.
    Audit(Common),
    /// Everything above into one output directory.
    All(Common),
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::Solve(c) => (Command::Solve, c),
            Sub::Envelope(c) => (Command::Envelope, c),
            Sub::Flow(c) => (Command::Flow, c),
            Sub::McValidate(c) => (Command::McValidate, c),
            Sub::Rates(c) => (Command::Rates, c),
            Sub::Audit(c) => (Command::Audit, c),
            Sub::All(c) => (Command::All, c),
        }
    }
}

/// Precedence: flags > config file > defaults.
fn build_config(common: &Common) -> convexflow::Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.problem {
        cfg.problem = v.clone();
    }
    if let Some(v) = common.n {
        cfg.n = v;
    }
    if let Some(v) = common.t_end {
        cfg.t_end = v;
    }
    if let Some(v) = &common.dirs {
        cfg.dirs = v.clone();
    }
    if let Some(v) = common.safety {
        cfg.safety = v;
    }
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = &common.method {
        cfg.flow.method = v.clone();
    }
    if let Some(v) = common.paths {
        cfg.mc.paths = v;
    }
    if let Some(v) = common.dt_mc {
        cfg.mc.dt_mc = v;
    }
    if let Some(v) = &common.out {
        cfg.out = v.display().to_string();
    }
    let out = match std::env::var_os("CONVEXFLOW_OUT") {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from(&cfg.out),
    };
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = cli.command.split();
    let (cfg, out) = match build_config(common) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(cmd, &cfg, &out) {
        Ok(outcome) if outcome.invariant_failures.is_empty() => {
            println!("ok: artifacts in {}", out.display());
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            for f in &outcome.invariant_failures {
                eprintln!("invariant failure: {f}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
