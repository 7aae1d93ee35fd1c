//! Run configuration: JSON file + flag overrides, validated against every
//! cross-module precondition before any computation starts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DirectionPreset, DirectionSet, Grid};
use crate::flow::OdeMethod;
use crate::problems::{custom_poly1d, problem_library, Problem, PROBLEM_NAMES};
use crate::solver::cfl_dt;
use crate::stochastic::MCConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    /// Starting points; 1D points may be given as single-entry arrays.
    pub x0: Vec<Vec<f64>>,
    pub dt_ode: f64,
    pub method: String,
    pub t_end: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { x0: Vec::new(), dt_ode: 0.01, method: "rk4".into(), t_end: 20.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub paths: usize,
    pub dt_mc: f64,
    /// Control horizon for the feedback estimate.
    pub t: f64,
    /// Start of the feedback diffusion (1D entry for 1D problems).
    pub x0: Vec<f64>,
    /// Start of the 1D facet walk.
    pub facet_x0: f64,
    /// Half-width of the exit-time interval.
    pub exit_r: f64,
    pub exit_paths: usize,
    pub exit_ts: Vec<usize>,
    /// Safety horizon after which walks are censored.
    pub horizon: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            paths: 20_000,
            dt_mc: 1e-3,
            t: 2.0,
            x0: vec![0.0],
            facet_x0: 0.5,
            exit_r: 0.5,
            exit_paths: 100_000,
            exit_ts: vec![2, 3, 4, 5, 6, 7, 8],
            horizon: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in problem name, or "custom" with `custom_coeffs`.
    pub problem: String,
    /// 1D polynomial coefficients (constant first) for `problem = "custom"`.
    pub custom_coeffs: Option<Vec<f64>>,
    /// Box override for custom problems, [lower, upper].
    pub custom_box: Option<[f64; 2]>,
    /// Nodes per axis.
    pub n: usize,
    /// Direction preset: axes | stencil8 | stencil16. Empty = per-dimension
    /// default (axes in 1D, stencil8 in 2D).
    pub dirs: String,
    /// CFL safety factor in (0, 1].
    pub safety: f64,
    /// Solver horizon.
    pub t_end: f64,
    /// Uniformly spaced snapshots on [0, t_end], including both ends.
    pub snapshots: usize,
    /// Slope-grid size for the 2D biconjugate, as a multiple of n.
    pub slope_count_factor: usize,
    pub seed: u64,
    pub flow: FlowSettings,
    pub mc: McSettings,
    /// Output directory; CONVEXFLOW_OUT and --out override.
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "double_well_1d".into(),
            custom_coeffs: None,
            custom_box: None,
            n: 201,
            dirs: String::new(),
            safety: 0.9,
            t_end: 6.0,
            snapshots: 121,
            slope_count_factor: 4,
            seed: 1,
            flow: FlowSettings::default(),
            mc: McSettings::default(),
            out: "out".into(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn problem(&self) -> Result<Problem> {
        if self.problem == "custom" {
            let coeffs = self.custom_coeffs.clone().ok_or_else(|| {
                Error::Config("problem = \"custom\" requires custom_coeffs".into())
            })?;
            let [lo, hi] = self.custom_box.unwrap_or([-2.0, 2.0]);
            custom_poly1d(coeffs, lo, hi)
        } else {
            problem_library(&self.problem)
        }
    }

    pub fn direction_set(&self, dim: usize) -> Result<DirectionSet> {
        if self.dirs.is_empty() {
            return Ok(DirectionSet::default_for_dim(dim));
        }
        let preset: DirectionPreset = self.dirs.parse()?;
        if dim == 1 && preset != DirectionPreset::Axes {
            return Err(Error::Config(format!(
                "direction preset {} is 2D-only; use axes in 1D",
                self.dirs
            )));
        }
        Ok(DirectionSet::from_preset(preset, dim))
    }

    pub fn ode_method(&self) -> Result<OdeMethod> {
        self.flow.method.parse()
    }

    pub fn mc_config(&self, paths: usize) -> Result<MCConfig> {
        MCConfig::new(paths, self.mc.dt_mc, self.seed, self.mc.horizon)
    }

    /// Starting points as fixed-size arrays, defaulting to a spread of five
    /// points across the box when none are configured.
    pub fn flow_starts(&self, grid: &Grid) -> Result<Vec<[f64; 2]>> {
        if self.flow.x0.is_empty() {
            let (lo, hi) = (grid.lower[0], grid.upper[0]);
            let margin = 0.1 * (hi - lo);
            return Ok((0..5)
                .map(|k| {
                    let s = k as f64 / 4.0;
                    let x = lo + margin + s * (hi - lo - 2.0 * margin);
                    let y = if grid.dim == 2 {
                        let (lo1, hi1) = (grid.lower[1], grid.upper[1]);
                        hi1 - margin - s * (hi1 - lo1 - 2.0 * margin)
                    } else {
                        0.0
                    };
                    [x, y]
                })
                .collect());
        }
        let mut out = Vec::with_capacity(self.flow.x0.len());
        for p in &self.flow.x0 {
            if p.len() != grid.dim {
                return Err(Error::Config(format!(
                    "flow start {p:?} has {} coordinates, problem is {}D",
                    p.len(),
                    grid.dim
                )));
            }
            let x = [p[0], if grid.dim == 2 { p[1] } else { 0.0 }];
            if !grid.contains(x) {
                return Err(Error::Config(format!("flow start {p:?} lies outside the box")));
            }
            out.push(x);
        }
        Ok(out)
    }

    /// Validate every cross-module precondition. Returns the grid so the
    /// caller does not rebuild it.
    pub fn validate(&self) -> Result<Grid> {
        let problem = self.problem()?;
        if self.problem != "custom" && !PROBLEM_NAMES.contains(&self.problem.as_str()) {
            // problem_library already rejects unknown names; defensive only
            return Err(Error::Config(format!("unknown problem {}", self.problem)));
        }
        let grid = problem.default_grid(self.n)?;
        problem.validate_box(&grid)?;
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!("safety must be in (0, 1], got {}", self.safety)));
        }
        if self.t_end <= 0.0 {
            return Err(Error::Config("t_end must be positive".into()));
        }
        if self.snapshots < 2 {
            return Err(Error::Config("need at least 2 snapshots".into()));
        }
        if self.slope_count_factor == 0 {
            return Err(Error::Config("slope_count_factor must be positive".into()));
        }
        let dirs = self.direction_set(grid.dim)?;
        // surfaces the CFL bound (and h/direction problems) up front
        let dt = cfl_dt(&grid, &dirs, self.safety)?;
        if dt >= self.t_end {
            return Err(Error::Config(format!(
                "t_end = {} is below one CFL step {dt}; nothing to solve",
                self.t_end
            )));
        }
        self.ode_method()?;
        if self.flow.dt_ode <= 0.0 || self.flow.t_end <= 0.0 {
            return Err(Error::Config("flow dt_ode and t_end must be positive".into()));
        }
        self.flow_starts(&grid)?;
        self.mc_config(self.mc.paths)?;
        self.mc_config(self.mc.exit_paths)?;
        if self.mc.x0.len() != grid.dim {
            return Err(Error::Config(format!(
                "mc.x0 has {} coordinates, problem is {}D",
                self.mc.x0.len(),
                grid.dim
            )));
        }
        if !(self.mc.t > 0.0 && self.mc.t <= self.t_end) {
            return Err(Error::Config("mc.t must lie in (0, t_end]".into()));
        }
        if self.mc.exit_r <= 0.0 {
            return Err(Error::Config("mc.exit_r must be positive".into()));
        }
        if self.mc.exit_ts.iter().any(|&t| t == 0) {
            return Err(Error::Config("mc.exit_ts entries must be >= 1".into()));
        }
        Ok(grid)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        (0..self.snapshots)
            .map(|k| self.t_end * k as f64 / (self.snapshots - 1) as f64)
            .collect()
    }

    pub fn mc_x0(&self) -> [f64; 2] {
        let mut x = [0.0; 2];
        for (a, &v) in self.mc.x0.iter().take(2).enumerate() {
            x[a] = v;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        let cfg = RunConfig::default();
        let grid = cfg.validate().unwrap();
        assert_eq!(grid.n[0], 201);
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let mut cfg = RunConfig::default();
        cfg.problem = "radial_double_well_2d".into();
        cfg.n = 81;
        cfg.dirs = "stencil16".into();
        cfg.mc.x0 = vec![0.1, -0.2];
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn bad_settings_are_rejected_with_config_errors() {
        let reject = |f: &dyn Fn(&mut RunConfig)| {
            let mut cfg = RunConfig::default();
            f(&mut cfg);
            match cfg.validate() {
                Err(Error::Config(_)) => {}
                other => panic!("expected Config error, got {other:?}"),
            }
        };
        reject(&|c| c.safety = 0.0);
        reject(&|c| c.safety = 1.5);
        reject(&|c| c.t_end = -1.0);
        reject(&|c| c.snapshots = 1);
        reject(&|c| c.dirs = "stencil8".into()); // 2D-only preset on a 1D problem
        reject(&|c| c.mc.x0 = vec![0.0, 0.0]);
        reject(&|c| c.flow.x0 = vec![vec![7.0]]);
        reject(&|c| c.problem = "custom".into());
    }

    #[test]
    fn unknown_problem_lists_available_names() {
        let mut cfg = RunConfig::default();
        cfg.problem = "nope".into();
        let err = cfg.validate().unwrap_err().to_string();
        for name in PROBLEM_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn unknown_json_key_is_an_error() {
        let res: std::result::Result<RunConfig, _> =
            serde_json::from_str("{\"probelm\": \"double_well_1d\"}");
        assert!(res.is_err());
    }

    #[test]
    fn default_flow_starts_span_the_box() {
        let cfg = RunConfig::default();
        let grid = cfg.validate().unwrap();
        let starts = cfg.flow_starts(&grid).unwrap();
        assert_eq!(starts.len(), 5);
        assert!(starts.iter().all(|p| grid.contains(*p)));
        assert!(starts[0][0] < 0.0 && starts[4][0] > 0.0);
    }
}
