//! Explicit monotone wide-stencil scheme for the convexifying evolution
//! equation: forward Euler in time, frozen Dirichlet data on the boundary
//! band, CFL-restricted so the update is nondecreasing in every neighboring
//! value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DirectionSet, Grid, ScalarField};
use crate::problems::Problem;
use crate::tolerances::STEADY_TOL_REL;

/// Time-indexed solver output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshots {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
    pub dt_used: f64,
    pub dirs: DirectionSet,
    pub steady_state_reached: bool,
}

impl Snapshots {
    pub fn grid(&self) -> &Grid {
        &self.fields[0].grid
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the snapshot whose time is closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        let mut best = 0;
        let mut gap = f64::INFINITY;
        for (k, &tk) in self.times.iter().enumerate() {
            let g = (tk - t).abs();
            if g < gap {
                gap = g;
                best = k;
            }
        }
        best
    }
}

/// Largest monotone time step scaled by `safety`: `safety * delta_min^2 / 2`
/// with `delta_min = h * min |p|` over the direction set.
pub fn cfl_dt(grid: &Grid, dirs: &DirectionSet, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::Config(format!("safety must be in (0, 1], got {safety}")));
    }
    let delta_min = grid.h * dirs.min_norm();
    Ok(safety * delta_min * delta_min / 2.0)
}

/// Flat-index stencil for fast interior updates: per offset, the flat delta
/// and 1/(h |p|)^2.
fn flat_stencil(grid: &Grid, dirs: &DirectionSet) -> Vec<(isize, f64)> {
    dirs.offsets
        .iter()
        .map(|o| {
            let d = o.p[0] * grid.n[1] as i64 + o.p[1];
            let delta = grid.h * o.norm;
            (d as isize, 1.0 / (delta * delta))
        })
        .collect()
}

/// One explicit Euler step: interior nodes get `u + dt * min(0, lambda_min)`,
/// band nodes are untouched. Refuses any dt above the monotone bound.
pub fn step(u: &ScalarField, dt: f64, dirs: &DirectionSet) -> Result<ScalarField> {
    let bound = cfl_dt(&u.grid, dirs, 1.0)?;
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    let stencil = flat_stencil(&u.grid, dirs);
    let values = step_values(&u.grid, &u.values, dt, dirs.band, &stencil);
    Ok(ScalarField { grid: u.grid.clone(), values })
}

fn step_values(
    grid: &Grid,
    v: &[f64],
    dt: f64,
    band: usize,
    stencil: &[(isize, f64)],
) -> Vec<f64> {
    let n1 = grid.n[1];
    let interior = |k: usize| {
        let node = [k / n1, k % n1];
        grid.is_interior(node, band)
    };
    let update = |k: usize| -> f64 {
        if !interior(k) {
            return v[k];
        }
        let mut lam = f64::INFINITY;
        for &(d, inv) in stencil {
            let fwd = v[(k as isize + d) as usize];
            let bwd = v[(k as isize - d) as usize];
            let s = (fwd - 2.0 * v[k] + bwd) * inv;
            if s < lam {
                lam = s;
            }
        }
        v[k] + dt * lam.min(0.0)
    };
    if v.len() >= 1 << 14 {
        (0..v.len()).into_par_iter().map(update).collect()
    } else {
        (0..v.len()).map(update).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub safety: f64,
    pub steady_tol_rel: f64,
}

impl SolveParams {
    pub fn new(t_end: f64, snapshot_times: Vec<f64>) -> Self {
        SolveParams { t_end, snapshot_times, safety: 0.9, steady_tol_rel: STEADY_TOL_REL }
    }

    /// Uniformly spaced snapshots, always including t = 0 and t = T.
    pub fn with_uniform_snapshots(t_end: f64, count: usize) -> Self {
        let count = count.max(2);
        let times =
            (0..count).map(|k| t_end * k as f64 / (count - 1) as f64).collect();
        Self::new(t_end, times)
    }
}

/// Evolve the sampled datum up to `t_end`, recording the nearest-step field
/// at every requested snapshot time (the actual step time is stored).
pub fn solve(
    problem: &Problem,
    grid: &Grid,
    dirs: &DirectionSet,
    params: &SolveParams,
) -> Result<Snapshots> {
    problem.validate_box(grid)?;
    if params.t_end <= 0.0 {
        return Err(Error::Config("t_end must be positive".into()));
    }
    if params
        .snapshot_times
        .iter()
        .any(|&t| !(0.0..=params.t_end + 1e-12).contains(&t))
        || params.snapshot_times.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Config("snapshot times must be sorted within [0, T]".into()));
    }

    let dt = cfl_dt(grid, dirs, params.safety)?;
    let n_steps = (params.t_end / dt).ceil() as usize;
    // Snap each requested time to the nearest completed step; drop duplicates
    // so recorded times stay strictly increasing.
    let mut target_steps: Vec<usize> = params
        .snapshot_times
        .iter()
        .map(|&t| ((t / dt).round() as usize).min(n_steps))
        .collect();
    target_steps.dedup();

    let u0 = problem.sample_u0(grid);
    let scale = u0.scale();
    let steady_tol = params.steady_tol_rel * scale.max(f64::MIN_POSITIVE);
    let stencil = flat_stencil(grid, dirs);

    let mut times = Vec::with_capacity(target_steps.len());
    let mut fields = Vec::with_capacity(target_steps.len());
    let mut current = u0.values;
    let mut steady = false;
    let mut next_target = 0usize;

    for n in 0..=n_steps {
        if next_target < target_steps.len() && target_steps[next_target] == n {
            times.push(n as f64 * dt);
            fields.push(ScalarField { grid: grid.clone(), values: current.clone() });
            next_target += 1;
            if next_target == target_steps.len() {
                break;
            }
        }
        if n == n_steps {
            break;
        }
        if steady {
            // Field no longer moves beyond steady_tol; skip ahead.
            continue;
        }
        let new = step_values(grid, &current, dt, dirs.band, &stencil);
        let mut max_change: f64 = 0.0;
        let mut finite = true;
        for (a, b) in new.iter().zip(&current) {
            if !a.is_finite() {
                finite = false;
                break;
            }
            max_change = max_change.max((a - b).abs());
        }
        if !finite {
            return Err(Error::Numerical(format!(
                "non-finite value at step {n} (t = {}); dumping is pointless, check CFL/config",
                n as f64 * dt
            )));
        }
        if max_change / dt < steady_tol {
            steady = true;
        }
        current = new;
    }

    Ok(Snapshots { times, fields, dt_used: dt, dirs: dirs.clone(), steady_state_reached: steady })
}

/// Max |directional second difference| of a field over interior nodes and
/// directions; the discrete counterpart of sup |D^2 u0|.
pub fn m_disc(u: &ScalarField, dirs: &DirectionSet) -> f64 {
    let mut m: f64 = 0.0;
    for node in u.grid.interior_nodes(dirs.band) {
        for o in &dirs.offsets {
            m = m.max(u.second_difference(node, o).unwrap().abs());
        }
    }
    m
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeLipschitzReport {
    pub m_disc: f64,
    /// Worst over snapshot pairs of max |u(t+dt) - u(t)| / (M_disc dt).
    pub worst_ratio: f64,
}

/// Verify the time-Lipschitz estimate |u(t,x) - u(s,x)| <= M_disc |t - s|
/// across consecutive snapshots.
pub fn time_lipschitz_check(snapshots: &Snapshots, m_disc: f64) -> TimeLipschitzReport {
    let mut worst: f64 = 0.0;
    for k in 1..snapshots.fields.len() {
        let dt = snapshots.times[k] - snapshots.times[k - 1];
        if dt <= 0.0 {
            continue;
        }
        let max_change = snapshots.fields[k]
            .values
            .iter()
            .zip(&snapshots.fields[k - 1].values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(max_change / (m_disc * dt));
    }
    TimeLipschitzReport { m_disc, worst_ratio: worst }
}
