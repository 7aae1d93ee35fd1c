//! Monte Carlo checks of the stochastic-control side of the theory: the
//! value representation under the feedback control, the 1D facet walk whose
//! endpoint-hitting probabilities are barycentric weights, and the Brownian
//! exit-time tail bound.
//!
//! Every simulation draws from a per-path counter-based RNG stream derived
//! from (seed, path index), so results are bit-identical regardless of
//! thread count or scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Extrapolation, ScalarField};
use crate::solver::Snapshots;
use crate::tolerances::{EIG_TOL_REL, QUADRATURE_TOL};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCConfig {
    pub n_paths: usize,
    pub dt_mc: f64,
    pub seed: u64,
    pub horizon: f64,
}

impl MCConfig {
    pub fn new(n_paths: usize, dt_mc: f64, seed: u64, horizon: f64) -> Result<Self> {
        if n_paths < 100 {
            return Err(Error::Config(format!("n_paths must be >= 100, got {n_paths}")));
        }
        if !(dt_mc > 0.0 && dt_mc <= horizon) {
            return Err(Error::Config(format!(
                "need 0 < dt_mc <= horizon, got dt_mc = {dt_mc}, horizon = {horizon}"
            )));
        }
        Ok(MCConfig { n_paths, dt_mc, seed, horizon })
    }

    fn path_rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64 + 1);
        rng
    }
}

fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // force the first few levels: the Richardson estimate is unreliable on
    // wide panels of the Gaussian bell
    if depth == 0 || (depth <= 44 && delta.abs() <= 15.0 * tol) {
        left + right + delta / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Gaussian mass of [-2r, 2r]: q(r) = (1/sqrt(2 pi)) \int_{-2r}^{2r}
/// e^{-s^2/2} ds, by adaptive Simpson quadrature to 1e-12.
pub fn q_of_r(r: f64) -> f64 {
    assert!(r > 0.0, "q_of_r needs r > 0");
    let density = |s: f64| (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let (a, b) = (0.0, 2.0 * r);
    let (fa, fb) = (density(a), density(b));
    let m = 0.5 * (a + b);
    let fm = density(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    2.0 * adaptive_simpson(&density, a, b, fa, fm, fb, whole, QUADRATURE_TOL / 2.0, 50)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitTimeReport {
    pub r: f64,
    pub ts: Vec<usize>,
    /// Empirical P(tau >= t) per entry of ts.
    pub empirical_tail: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// q(r)^{t-1} per entry of ts.
    pub bound: Vec<f64>,
}

/// Empirical tail of the first exit time of standard Brownian motion from
/// [-r, r], started at 0, versus the geometric bound q(r)^{t-1}.
pub fn exit_time_tail(r: f64, ts: &[usize], cfg: &MCConfig) -> Result<ExitTimeReport> {
    if r <= 0.0 {
        return Err(Error::Config("exit_time_tail needs r > 0".into()));
    }
    let n_steps = (cfg.horizon / cfg.dt_mc).ceil() as usize;
    let sqrt_dt = cfg.dt_mc.sqrt();
    let exit_times: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = cfg.path_rng(path);
            let mut x = 0.0f64;
            for step in 1..=n_steps {
                let z: f64 = rng.sample(StandardNormal);
                x += sqrt_dt * z;
                if x.abs() > r {
                    return step as f64 * cfg.dt_mc;
                }
            }
            f64::INFINITY // censored at the horizon
        })
        .collect();

    let n = cfg.n_paths as f64;
    let q = q_of_r(r);
    let mut empirical = Vec::new();
    let mut ses = Vec::new();
    let mut bound = Vec::new();
    for &t in ts {
        let p = exit_times.iter().filter(|&&tau| tau >= t as f64).count() as f64 / n;
        empirical.push(p);
        ses.push((p * (1.0 - p) / n).sqrt());
        bound.push(q.powi(t as i32 - 1));
    }
    Ok(ExitTimeReport { r, ts: ts.to_vec(), empirical_tail: empirical, standard_errors: ses, bound })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FacetWalkReport {
    /// MC mean and standard error of u0 at the stopped walk.
    pub mean: f64,
    pub se: f64,
    /// The non-convexity interval [a, b] around x0.
    pub a: f64,
    pub b: f64,
    /// Fraction of paths that exited through a; its binomial SE; the
    /// barycentric weight (b - x0)/(b - a) it should match.
    pub hit_a_fraction: f64,
    pub hit_a_se: f64,
    pub lambda_a: f64,
    /// Empirical mean of the stopped position (martingale check: ~x0).
    pub mean_stop: f64,
    pub se_stop: f64,
    /// Paths still inside at the horizon.
    pub censored: usize,
}

/// Locate the maximal interval of nodes around x0 where u0 exceeds the
/// envelope, returning the bracketing touching coordinates.
fn facet_interval(
    u0: &ScalarField,
    env: &ScalarField,
    x0: f64,
) -> Result<(f64, f64)> {
    let grid = &u0.grid;
    let scale = u0.scale();
    let tol = 1e-9 * scale;
    let k0 = grid.nearest_node([x0, 0.0])[0];
    if u0.values[k0] - env.values[k0] <= tol {
        return Err(Error::Precondition(format!(
            "x0 = {x0} is not strictly inside an interval where the envelope detaches from u0"
        )));
    }
    let mut lo = k0;
    while lo > 0 && u0.values[lo] - env.values[lo] > tol {
        lo -= 1;
    }
    let mut hi = k0;
    while hi + 1 < grid.n[0] && u0.values[hi] - env.values[hi] > tol {
        hi += 1;
    }
    Ok((grid.coord([lo, 0])[0], grid.coord([hi, 0])[0]))
}

/// 1D facet walk: the controlled martingale dY = sqrt(2) dW run until it
/// leaves the interval where the envelope is a strict affine minorant of u0.
/// The endpoint-hitting probabilities are the barycentric weights of x0, so
/// E[u0(Y_stop)] estimates the envelope value at x0.
pub fn facet_walk_1d(
    u0: &ScalarField,
    env: &ScalarField,
    x0: f64,
    cfg: &MCConfig,
) -> Result<FacetWalkReport> {
    if u0.grid.dim != 1 {
        return Err(Error::Precondition("facet_walk_1d requires a 1D field".into()));
    }
    let (a, b) = facet_interval(u0, env, x0)?;
    let n_steps = (cfg.horizon / cfg.dt_mc).ceil() as usize;
    let step_scale = (2.0 * cfg.dt_mc).sqrt();

    struct PathOut {
        u0_val: f64,
        stop: f64,
        hit_a: bool,
        censored: bool,
    }
    let outs: Vec<PathOut> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = cfg.path_rng(path);
            let mut y = x0;
            for _ in 0..n_steps {
                let z: f64 = rng.sample(StandardNormal);
                y += step_scale * z;
                if y <= a || y >= b {
                    let u = u0.interp_value([y.clamp(u0.grid.lower[0], u0.grid.upper[0]), 0.0], Extrapolation::Clamp).unwrap();
                    return PathOut { u0_val: u, stop: y, hit_a: y <= a, censored: false };
                }
            }
            let u = u0.interp_value([y, 0.0], Extrapolation::Clamp).unwrap();
            PathOut { u0_val: u, stop: y, hit_a: false, censored: true }
        })
        .collect();

    let u_samples: Vec<f64> = outs.iter().map(|o| o.u0_val).collect();
    let stop_samples: Vec<f64> = outs.iter().map(|o| o.stop).collect();
    let (mean, se) = mean_se(&u_samples);
    let (mean_stop, se_stop) = mean_se(&stop_samples);
    let n = cfg.n_paths as f64;
    let hit_a = outs.iter().filter(|o| o.hit_a).count() as f64 / n;
    Ok(FacetWalkReport {
        mean,
        se,
        a,
        b,
        hit_a_fraction: hit_a,
        hit_a_se: (hit_a * (1.0 - hit_a) / n).sqrt(),
        lambda_a: (b - x0) / (b - a),
        mean_stop,
        se_stop,
        censored: outs.iter().filter(|o| o.censored).count(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub mean: f64,
    pub se: f64,
    /// Paths clamped at the box boundary (field is convex and stationary
    /// there, so they stop moving).
    pub absorbed: usize,
    /// Solver value u(t, x0) for comparison.
    pub solver_value: f64,
}

/// Step of the feedback diffusion: at state y with remaining time `remaining`,
/// move along the discrete minimal-curvature direction when the smallest
/// directional second difference is below -eig_tol, else stand still.
/// The rank-one projector applied to a d-dim Brownian increment is realized
/// as a scalar Gaussian step along the unit direction.
fn feedback_step(
    snapshots: &Snapshots,
    remaining: f64,
    y: &mut [f64; 2],
    eig_tol: f64,
    step_scale: f64,
    z: f64,
    absorbed: &mut bool,
) {
    let field = &snapshots.fields[snapshots.nearest_index(remaining)];
    let grid = &field.grid;
    let node = grid.nearest_node(*y);
    if !grid.is_interior(node, snapshots.dirs.band) {
        // boundary band: u0 = u0** there, control is 0
        return;
    }
    let (lam, dir) = field.lambda_min_direction(node, &snapshots.dirs).unwrap();
    if lam >= -eig_tol {
        return;
    }
    let unit = dir.unit();
    let mut next = [y[0] + step_scale * z * unit[0], y[1] + step_scale * z * unit[1]];
    if !grid.contains(next) {
        for a in 0..grid.dim {
            next[a] = next[a].clamp(grid.lower[a], grid.upper[a]);
        }
        *absorbed = true;
    }
    *y = next;
}

/// Estimate E[u0(Y_t)] under the feedback control started at x0, controls for
/// horizon t using the field at time-to-go t - s.
pub fn feedback_value_estimate(
    snapshots: &Snapshots,
    x0: [f64; 2],
    t: f64,
    cfg: &MCConfig,
) -> Result<FeedbackReport> {
    // snapshot times are snapped to solver steps, so allow one step of slack
    if t > snapshots.last_time() + snapshots.dt_used {
        return Err(Error::Precondition(format!(
            "horizon t = {t} exceeds the last snapshot time {}",
            snapshots.last_time()
        )));
    }
    let u0 = &snapshots.fields[0];
    if !u0.grid.contains(x0) {
        return Err(Error::OutOfBox { point: x0 });
    }
    let scale = u0.scale();
    let eig_tol = EIG_TOL_REL * scale;
    let n_steps = (t / cfg.dt_mc).round().max(1.0) as usize;
    let step_scale = (2.0 * cfg.dt_mc).sqrt();

    let outs: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = cfg.path_rng(path);
            let mut y = x0;
            let mut absorbed = false;
            for k in 0..n_steps {
                let s = k as f64 * cfg.dt_mc;
                let z: f64 = rng.sample(StandardNormal);
                feedback_step(snapshots, t - s, &mut y, eig_tol, step_scale, z, &mut absorbed);
            }
            (u0.interp_value(y, Extrapolation::Clamp).unwrap(), absorbed)
        })
        .collect();

    let samples: Vec<f64> = outs.iter().map(|o| o.0).collect();
    let (mean, se) = mean_se(&samples);
    let solver_value = snapshots.fields[snapshots.nearest_index(t)]
        .interp_value(x0, Extrapolation::Clamp)
        .unwrap();
    Ok(FeedbackReport {
        mean,
        se,
        absorbed: outs.iter().filter(|o| o.1).count(),
        solver_value,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicProgrammingReport {
    /// u(t, y) from the solver.
    pub lhs: f64,
    /// MC mean and SE of u(s, Y_{t-s}) under the feedback control.
    pub mean: f64,
    pub se: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub within: bool,
}

/// Diagnostic for the formal dynamic-programming identity
/// u(t, y) = E[u(s, Y) | Y_0 = y] with the feedback diffusion run for t - s.
pub fn dynamic_programming_check(
    snapshots: &Snapshots,
    y0: [f64; 2],
    t: f64,
    s: f64,
    cfg: &MCConfig,
    c_disc: f64,
) -> Result<DynamicProgrammingReport> {
    if !(0.0 <= s && s <= t && t <= snapshots.last_time() + snapshots.dt_used) {
        return Err(Error::Precondition(format!("need 0 <= s <= t <= last snapshot, got s = {s}, t = {t}")));
    }
    let u0 = &snapshots.fields[0];
    let scale = u0.scale();
    let eig_tol = EIG_TOL_REL * scale;
    let duration = t - s;
    let n_steps = (duration / cfg.dt_mc).round() as usize;
    let step_scale = (2.0 * cfg.dt_mc).sqrt();
    let field_s = &snapshots.fields[snapshots.nearest_index(s)];

    let samples: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = cfg.path_rng(path);
            let mut y = y0;
            let mut absorbed = false;
            for k in 0..n_steps {
                let elapsed = k as f64 * cfg.dt_mc;
                let z: f64 = rng.sample(StandardNormal);
                feedback_step(snapshots, t - elapsed, &mut y, eig_tol, step_scale, z, &mut absorbed);
            }
            field_s.interp_value(y, Extrapolation::Clamp).unwrap()
        })
        .collect();

    let (mean, se) = mean_se(&samples);
    let lhs = snapshots.fields[snapshots.nearest_index(t)]
        .interp_value(y0, Extrapolation::Clamp)
        .unwrap();
    let gap = (mean - lhs).abs();
    let tolerance = 3.0 * se + c_disc * (snapshots.grid().h + cfg.dt_mc.sqrt()) * scale;
    Ok(DynamicProgrammingReport { lhs, mean, se, gap, tolerance, within: gap <= tolerance })
}
