//! Experiment orchestration: turns a validated `RunConfig` plus a subcommand
//! into solver runs, reports, and artifacts under one output directory.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::diagnostics::{
    error_floor, fit_rate, grad_error_series, gradient_bound_check, structural_audit,
    sup_error_series,
};
use crate::envelope::{biconjugate, caratheodory_bruteforce, EnvelopeResult, BRUTE_FORCE_GUARD};
use crate::error::{Error, Result};
use crate::field::{DirectionSet, Grid, ScalarField};
use crate::flow::{argmin_set, dist_to_argmin, integrate, FlowParams};
use crate::output::OutputWriter;
use crate::problems::Problem;
use crate::solver::{m_disc, solve, Snapshots, SolveParams};
use crate::stochastic::{exit_time_tail, facet_walk_1d, feedback_value_estimate, q_of_r};
use crate::tolerances::{C_DISC, TAIL_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Envelope,
    Flow,
    McValidate,
    Rates,
    Audit,
    All,
}

/// Collected soft failures: the run finished, but a validated bound or
/// invariant did not hold. Maps to exit code 1.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub invariant_failures: Vec<String>,
}

impl RunOutcome {
    fn fail(&mut self, msg: String) {
        self.invariant_failures.push(msg);
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    problem: Problem,
    grid: Grid,
    dirs: DirectionSet,
    u0: ScalarField,
    envelope: EnvelopeResult,
    snapshots: Option<Snapshots>,
    writer: OutputWriter,
    outcome: RunOutcome,
}

pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let grid = cfg.validate()?;
    let problem = cfg.problem()?;
    let dirs = cfg.direction_set(grid.dim)?;
    let u0 = problem.sample_u0(&grid);
    let envelope = match grid.dim {
        1 => problem.reference_envelope(&u0)?,
        _ => biconjugate(&u0, cfg.slope_count_factor * grid.n[0].max(grid.n[1]))?,
    };
    let writer = OutputWriter::new(out_dir)?;
    let mut runner = Runner {
        cfg,
        problem,
        grid,
        dirs,
        u0,
        envelope,
        snapshots: None,
        writer,
        outcome: RunOutcome::default(),
    };

    match cmd {
        Command::Solve => runner.cmd_solve()?,
        Command::Envelope => runner.cmd_envelope()?,
        Command::Flow => runner.cmd_flow()?,
        Command::McValidate => runner.cmd_mc_validate()?,
        Command::Rates => runner.cmd_rates()?,
        Command::Audit => runner.cmd_audit()?,
        Command::All => {
            runner.cmd_envelope()?;
            runner.cmd_solve()?;
            runner.cmd_rates()?;
            runner.cmd_audit()?;
            runner.cmd_flow()?;
            runner.cmd_mc_validate()?;
        }
    }

    runner.writer.finish(cfg)?;
    Ok(runner.outcome)
}

impl Runner<'_> {
    fn snapshots(&mut self) -> Result<&Snapshots> {
        if self.snapshots.is_none() {
            let mut params = SolveParams::new(self.cfg.t_end, self.cfg.snapshot_times());
            params.safety = self.cfg.safety;
            self.snapshots = Some(solve(&self.problem, &self.grid, &self.dirs, &params)?);
        }
        Ok(self.snapshots.as_ref().unwrap())
    }

    fn scale(&self) -> f64 {
        self.u0.scale()
    }

    fn cmd_envelope(&mut self) -> Result<()> {
        #[derive(Serialize)]
        struct EnvelopeReport {
            method: crate::envelope::EnvelopeMethod,
            max_gap_to_input: f64,
            /// max |reference - brute force| when the node-count guard
            /// allows the cross-check.
            caratheodory_max_diff: Option<f64>,
        }
        let cara_diff = if self.grid.len() <= BRUTE_FORCE_GUARD {
            let cara = caratheodory_bruteforce(&self.u0)?;
            Some(
                self.envelope
                    .envelope
                    .values
                    .iter()
                    .zip(&cara.envelope.values)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            )
        } else {
            None
        };
        self.writer.write_field("envelope.csv", &self.envelope.envelope)?;
        self.writer.write_field("u0.csv", &self.u0)?;
        self.writer.write_json(
            "envelope.json",
            &EnvelopeReport {
                method: self.envelope.method,
                max_gap_to_input: self.envelope.max_gap_to_input,
                caratheodory_max_diff: cara_diff,
            },
        )?;
        if let Some(d) = cara_diff {
            let tol = 5e-3 * self.scale();
            if d > tol {
                self.outcome.fail(format!(
                    "envelope methods disagree: max diff {d} > {tol}"
                ));
            }
        }
        Ok(())
    }

    fn cmd_solve(&mut self) -> Result<()> {
        self.snapshots()?;
        let snaps = self.snapshots.as_ref().unwrap().clone();
        self.writer.write_snapshots(&snaps, "snapshot")?;
        self.writer.write_field("envelope.csv", &self.envelope.envelope)?;
        let m = m_disc(&self.u0, &self.dirs);
        let audit = structural_audit(&snaps, &self.envelope.envelope, &self.u0, m)?;
        self.writer.write_json("audit.json", &audit)?;
        for c in audit.checks.iter().filter(|c| !c.pass) {
            self.outcome.fail(format!(
                "audit check {} failed: margin {} > threshold {}",
                c.name, c.margin, c.threshold
            ));
        }
        Ok(())
    }

    fn cmd_rates(&mut self) -> Result<()> {
        self.snapshots()?;
        let snaps = self.snapshots.as_ref().unwrap().clone();
        let env = &self.envelope.envelope;
        let sup = sup_error_series(&snaps, env)?;
        let grad = grad_error_series(&snaps, env)?;
        let floor = error_floor(self.scale(), self.grid.h);
        let sup_fit = fit_rate(&sup, TAIL_FRACTION, floor)?;
        // the gradient series is noisier; a failed fit is reported, not fatal
        let grad_fit = fit_rate(&grad, TAIL_FRACTION, floor).ok();

        self.writer.write_error_series("sup_error.csv", &sup.times, &sup.errors)?;
        self.writer.write_error_series("grad_error.csv", &grad.times, &grad.errors)?;
        self.writer.write_rate_plot_script("sup_error.gp", "sup_error.csv")?;
        self.writer.write_rate_plot_script("grad_error.gp", "grad_error.csv")?;
        #[derive(Serialize)]
        struct RateReport {
            sup: crate::diagnostics::RateFit,
            grad: Option<crate::diagnostics::RateFit>,
            clamped_nodes: usize,
            min_signed: f64,
        }
        if sup_fit.lambda <= 0.0 {
            self.outcome.fail(format!("fitted sup-error rate is not positive: {}", sup_fit.lambda));
        }
        for k in 1..sup.errors.len() {
            if sup.errors[k] > sup.errors[k - 1] {
                self.outcome.fail(format!(
                    "sup error increased between snapshots {} and {}",
                    k - 1,
                    k
                ));
                break;
            }
        }
        self.writer.write_json(
            "rates.json",
            &RateReport {
                sup: sup_fit,
                grad: grad_fit,
                clamped_nodes: sup.clamped_nodes,
                min_signed: sup.min_signed,
            },
        )?;
        Ok(())
    }

    fn cmd_audit(&mut self) -> Result<()> {
        self.snapshots()?;
        let snaps = self.snapshots.as_ref().unwrap().clone();
        let m = m_disc(&self.u0, &self.dirs);
        let audit = structural_audit(&snaps, &self.envelope.envelope, &self.u0, m)?;
        let gradient_bound =
            gradient_bound_check(&snaps, &self.envelope.envelope, m, self.problem.r0 / 2.0)?;
        self.writer.write_json("audit.json", &audit)?;
        self.writer.write_json("gradient_bound.json", &gradient_bound)?;
        for c in audit.checks.iter().filter(|c| !c.pass) {
            self.outcome.fail(format!(
                "audit check {} failed: margin {} > threshold {}",
                c.name, c.margin, c.threshold
            ));
        }
        if gradient_bound.worst_ratio > 1.0 + gradient_bound.tolerance {
            self.outcome.fail(format!(
                "gradient bound ratio {} exceeds 1 + {}",
                gradient_bound.worst_ratio, gradient_bound.tolerance
            ));
        }
        Ok(())
    }

    fn cmd_flow(&mut self) -> Result<()> {
        self.snapshots()?;
        let snaps = self.snapshots.as_ref().unwrap().clone();
        let env = self.envelope.envelope.clone();
        let starts = self.cfg.flow_starts(&self.grid)?;
        let params = FlowParams::new(
            self.cfg.flow.t_end,
            self.cfg.flow.dt_ode,
            self.cfg.ode_method()?,
        );
        let env_min = env.min();
        let scale = self.scale();
        #[derive(Serialize)]
        struct TrajectorySummary {
            start: Vec<f64>,
            end: Vec<f64>,
            env_at_end: f64,
            env_gap: f64,
            dist_to_argmin: f64,
            reason: crate::flow::TerminationReason,
        }
        let mut summaries = Vec::new();
        for (k, &x0) in starts.iter().enumerate() {
            let traj = integrate(&snaps, &env, x0, &params)?;
            self.writer
                .write_trajectory(&format!("trajectory_{k}.csv"), &traj, self.grid.dim)?;
            let end = traj.final_point();
            let gap = traj.final_env_value() - env_min;
            summaries.push(TrajectorySummary {
                start: x0[..self.grid.dim].to_vec(),
                end: end[..self.grid.dim].to_vec(),
                env_at_end: traj.final_env_value(),
                env_gap: gap,
                dist_to_argmin: dist_to_argmin(&env, end),
                reason: traj.terminated_reason,
            });
            if gap > 1e-3 * scale {
                self.outcome.fail(format!(
                    "trajectory from {x0:?} ended {gap} above the envelope minimum"
                ));
            }
        }
        #[derive(Serialize)]
        struct FlowReport {
            argmin: Vec<Vec<f64>>,
            env_min: f64,
            trajectories: Vec<TrajectorySummary>,
        }
        let argmin: Vec<Vec<f64>> = argmin_set(&env)
            .iter()
            .map(|p| p[..self.grid.dim].to_vec())
            .collect();
        self.writer.write_json(
            "flow.json",
            &FlowReport { argmin, env_min, trajectories: summaries },
        )?;
        Ok(())
    }

    fn cmd_mc_validate(&mut self) -> Result<()> {
        self.snapshots()?;
        let snaps = self.snapshots.as_ref().unwrap().clone();
        let env = self.envelope.envelope.clone();
        let scale = self.scale();
        let cfg_paths = self.cfg.mc_config(self.cfg.mc.paths)?;

        // feedback control: E[u0(Y_t)] must bracket the solver value
        let t = self.cfg.mc.t.min(snaps.last_time());
        let x0 = self.cfg.mc_x0();
        let feedback = feedback_value_estimate(&snaps, x0, t, &cfg_paths)?;
        let disc_slack = C_DISC * (self.grid.h + self.cfg.mc.dt_mc.sqrt()) * scale;
        let gap = (feedback.mean - feedback.solver_value).abs();
        let tol = 3.0 * feedback.se + disc_slack;
        if gap > tol {
            self.outcome.fail(format!(
                "feedback estimate {} vs solver value {}: gap {gap} > {tol}",
                feedback.mean, feedback.solver_value
            ));
        }
        // any admissible control gives an upper bound on the value
        let u0_at_x0 = self.u0.interp_value(x0, crate::field::Extrapolation::Error)?;
        if feedback.solver_value > u0_at_x0 + 1e-12 * scale {
            self.outcome.fail(format!(
                "zero-control bound violated: u(t, x0) = {} > u0(x0) = {u0_at_x0}",
                feedback.solver_value
            ));
        }
        if feedback.solver_value > feedback.mean + tol {
            self.outcome.fail(format!(
                "feedback-control bound violated: u(t, x0) = {} > estimate {} + {tol}",
                feedback.solver_value, feedback.mean
            ));
        }
        self.writer.write_json("feedback.json", &feedback)?;

        // 1D facet walk against the barycentric hitting probabilities
        if self.grid.dim == 1 {
            match facet_walk_1d(&self.u0, &env, self.cfg.mc.facet_x0, &cfg_paths) {
                Ok(walk) => {
                    let hit_gap = (walk.hit_a_fraction - walk.lambda_a).abs();
                    if hit_gap > 3.0 * walk.hit_a_se {
                        self.outcome.fail(format!(
                            "facet walk hit probability {} vs barycentric weight {}: gap {hit_gap} > {}",
                            walk.hit_a_fraction,
                            walk.lambda_a,
                            3.0 * walk.hit_a_se
                        ));
                    }
                    let env_at = env.interp_value([self.cfg.mc.facet_x0, 0.0], crate::field::Extrapolation::Error)?;
                    let walk_tol = 3.0 * walk.se + self.cfg.mc.dt_mc.sqrt() * scale;
                    if (walk.mean - env_at).abs() > walk_tol {
                        self.outcome.fail(format!(
                            "facet walk mean {} vs envelope {env_at}: gap exceeds {walk_tol}",
                            walk.mean
                        ));
                    }
                    self.writer.write_json("facet_walk.json", &walk)?;
                }
                Err(Error::Precondition(msg)) => {
                    // x0 on a convex stretch: nothing to walk, record why
                    self.writer
                        .write_json("facet_walk.json", &serde_json::json!({ "skipped": msg }))?;
                }
                Err(e) => return Err(e),
            }
        }

        // first-exit tail against the geometric bound
        let cfg_exit = self.cfg.mc_config(self.cfg.mc.exit_paths)?;
        let exit = exit_time_tail(self.cfg.mc.exit_r, &self.cfg.mc.exit_ts, &cfg_exit)?;
        for (k, &t) in exit.ts.iter().enumerate() {
            if exit.empirical_tail[k] > exit.bound[k] + 3.0 * exit.standard_errors[k] {
                self.outcome.fail(format!(
                    "exit tail at t = {t}: empirical {} above bound {} + 3 SE",
                    exit.empirical_tail[k], exit.bound[k]
                ));
            }
        }
        #[derive(Serialize)]
        struct ExitReport {
            q: f64,
            #[serde(flatten)]
            tail: crate::stochastic::ExitTimeReport,
        }
        self.writer
            .write_json("exit_time.json", &ExitReport { q: q_of_r(self.cfg.mc.exit_r), tail: exit })?;
        Ok(())
    }
}

/// Exit code for an error per the CLI contract: 2 for configuration and
/// validation problems, 3 for numerical aborts.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Precondition(_)
        | Error::GridMismatch(_)
        | Error::BruteForceGuard { .. }
        | Error::OutOfBox { .. }
        | Error::Io(_)
        | Error::Json(_) => 2,
        Error::Numerical(_)
        | Error::CflViolation { .. }
        | Error::StencilOutOfRange { .. }
        | Error::ConvergedTooFast { .. } => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.n = 101;
        cfg.t_end = 3.0;
        cfg.snapshots = 61;
        cfg.mc.paths = 500;
        cfg.mc.exit_paths = 1000;
        cfg.mc.dt_mc = 5e-3;
        cfg.flow.t_end = 8.0;
        cfg
    }

    #[test]
    fn solve_command_writes_audit_and_manifest() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg();
        let outcome = run(Command::Solve, &cfg, dir.path()).unwrap();
        assert!(outcome.invariant_failures.is_empty(), "{:?}", outcome.invariant_failures);
        assert!(dir.path().join("manifest.json").exists());
        assert!(dir.path().join("audit.json").exists());
        assert!(dir.path().join("snapshot_0000.csv").exists());
    }

    #[test]
    fn rates_command_fits_a_positive_rate() {
        let dir = tempdir().unwrap();
        let cfg = small_cfg();
        let outcome = run(Command::Rates, &cfg, dir.path()).unwrap();
        assert!(outcome.invariant_failures.is_empty(), "{:?}", outcome.invariant_failures);
        let text = std::fs::read_to_string(dir.path().join("rates.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["sup"]["lambda"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let dir = tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.mc.paths = 200;
        cfg.mc.exit_paths = 200;
        let run_once = |sub: &str| {
            let out = dir.path().join(sub);
            run(Command::Rates, &cfg, &out).unwrap();
            std::fs::read(out.join("manifest.json")).unwrap()
        };
        assert_eq!(run_once("a"), run_once("b"));
    }

    #[test]
    fn invalid_cfl_is_a_config_error() {
        let mut cfg = small_cfg();
        cfg.safety = 2.0;
        let dir = tempdir().unwrap();
        let err = run(Command::Solve, &cfg, dir.path()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(err.to_string().contains("safety"));
    }
}
