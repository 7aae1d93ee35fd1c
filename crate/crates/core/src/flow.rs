//! Non-autonomous gradient flow dx/dt = -grad u(t, x(t)) integrated against
//! solver snapshots, with convergence bookkeeping toward the argmin set of
//! the convex envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Extrapolation, ScalarField};
use crate::solver::Snapshots;
use crate::tolerances::{ARGMIN_TOL_REL, GRAD_TOL_REL, STATIONARY_PATIENCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeMethod {
    Euler,
    Rk4,
}

impl std::str::FromStr for OdeMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(OdeMethod::Euler),
            "rk4" => Ok(OdeMethod::Rk4),
            other => Err(Error::Config(format!("unknown ODE method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    TEnd,
    Stationary,
    LeftBox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub values_u0: Vec<f64>,
    pub values_env: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub terminated_reason: TerminationReason,
}

impl Trajectory {
    pub fn final_point(&self) -> [f64; 2] {
        *self.points.last().unwrap()
    }

    pub fn final_env_value(&self) -> f64 {
        *self.values_env.last().unwrap()
    }
}

/// grad u(t, x): multilinear spatial interpolation of nodal central
/// differences, linear interpolation between bracketing snapshots in time.
/// Beyond the last snapshot the field is frozen (the solver has essentially
/// reached the envelope there and the residual decays exponentially).
pub fn eval_gradient_field(snapshots: &Snapshots, t: f64, x: [f64; 2]) -> Result<[f64; 2]> {
    let times = &snapshots.times;
    let last = times.len() - 1;
    if t <= times[0] {
        return snapshots.fields[0].interp_gradient(x, Extrapolation::Error);
    }
    if t >= times[last] {
        return snapshots.fields[last].interp_gradient(x, Extrapolation::Error);
    }
    let k = match times.binary_search_by(|tk| tk.partial_cmp(&t).unwrap()) {
        Ok(k) => return snapshots.fields[k].interp_gradient(x, Extrapolation::Error),
        Err(k) => k,
    };
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    let g0 = snapshots.fields[k - 1].interp_gradient(x, Extrapolation::Error)?;
    let g1 = snapshots.fields[k].interp_gradient(x, Extrapolation::Error)?;
    Ok([g0[0] + w * (g1[0] - g0[0]), g0[1] + w * (g1[1] - g0[1])])
}

#[derive(Debug, Clone)]
pub struct FlowParams {
    pub t_end: f64,
    pub dt_ode: f64,
    pub method: OdeMethod,
    pub grad_tol: Option<f64>,
    pub stationary_patience: usize,
}

impl FlowParams {
    pub fn new(t_end: f64, dt_ode: f64, method: OdeMethod) -> Self {
        FlowParams { t_end, dt_ode, method, grad_tol: None, stationary_patience: STATIONARY_PATIENCE }
    }
}

fn norm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Fixed-step integration of the flow against the snapshot field.
///
/// `envelope` supplies the values_env column of the trajectory; the u0
/// column is interpolated from the t = 0 snapshot.
pub fn integrate(
    snapshots: &Snapshots,
    envelope: &ScalarField,
    x0: [f64; 2],
    params: &FlowParams,
) -> Result<Trajectory> {
    let u0 = &snapshots.fields[0];
    if !u0.grid.contains(x0) {
        return Err(Error::OutOfBox { point: x0 });
    }
    if params.dt_ode <= 0.0 {
        return Err(Error::Config("dt_ode must be positive".into()));
    }
    let scale = u0.scale();
    let diam = {
        let g = &u0.grid;
        let mut d2 = (g.upper[0] - g.lower[0]).powi(2);
        if g.dim == 2 {
            d2 += (g.upper[1] - g.lower[1]).powi(2);
        }
        d2.sqrt()
    };
    let grad_tol = params.grad_tol.unwrap_or(GRAD_TOL_REL * scale / diam);

    let mut traj = Trajectory {
        times: Vec::new(),
        points: Vec::new(),
        values_u0: Vec::new(),
        values_env: Vec::new(),
        grad_norms: Vec::new(),
        terminated_reason: TerminationReason::TEnd,
    };
    let record = |t: f64, x: [f64; 2], g: f64, traj: &mut Trajectory| {
        traj.times.push(t);
        traj.points.push(x);
        traj.values_u0.push(u0.interp_value(x, Extrapolation::Clamp).unwrap());
        traj.values_env.push(envelope.interp_value(x, Extrapolation::Clamp).unwrap());
        traj.grad_norms.push(g);
    };

    let dt = params.dt_ode;
    let n_steps = (params.t_end / dt).ceil() as usize;
    let mut x = x0;
    let mut t = 0.0;
    let mut quiet_streak = 0usize;

    let g0 = eval_gradient_field(snapshots, t, x)?;
    record(t, x, norm(g0), &mut traj);

    for _ in 0..n_steps {
        let step = match params.method {
            OdeMethod::Euler => {
                let g = eval_gradient_field(snapshots, t, x)?;
                [-dt * g[0], -dt * g[1]]
            }
            OdeMethod::Rk4 => {
                let f = |tt: f64, xx: [f64; 2]| -> Result<[f64; 2]> {
                    let g = eval_gradient_field(snapshots, tt, xx)?;
                    Ok([-g[0], -g[1]])
                };
                let k1 = f(t, x)?;
                let x2 = [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]];
                let k2 = match f(t + 0.5 * dt, x2) {
                    Ok(k) => k,
                    Err(Error::OutOfBox { .. }) => {
                        traj.terminated_reason = TerminationReason::LeftBox;
                        return Ok(traj);
                    }
                    Err(e) => return Err(e),
                };
                let x3 = [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]];
                let k3 = match f(t + 0.5 * dt, x3) {
                    Ok(k) => k,
                    Err(Error::OutOfBox { .. }) => {
                        traj.terminated_reason = TerminationReason::LeftBox;
                        return Ok(traj);
                    }
                    Err(e) => return Err(e),
                };
                let x4 = [x[0] + dt * k3[0], x[1] + dt * k3[1]];
                let k4 = match f(t + dt, x4) {
                    Ok(k) => k,
                    Err(Error::OutOfBox { .. }) => {
                        traj.terminated_reason = TerminationReason::LeftBox;
                        return Ok(traj);
                    }
                    Err(e) => return Err(e),
                };
                [
                    dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                    dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
                ]
            }
        };
        let next = [x[0] + step[0], x[1] + step[1]];
        t += dt;
        if !u0.grid.contains(next) {
            record(t, next, f64::NAN, &mut traj);
            traj.terminated_reason = TerminationReason::LeftBox;
            return Ok(traj);
        }
        x = next;
        let g = eval_gradient_field(snapshots, t, x)?;
        let gn = norm(g);
        record(t, x, gn, &mut traj);
        if gn < grad_tol {
            quiet_streak += 1;
            if quiet_streak >= params.stationary_patience {
                traj.terminated_reason = TerminationReason::Stationary;
                return Ok(traj);
            }
        } else {
            quiet_streak = 0;
        }
    }
    Ok(traj)
}

/// Nodes of the discrete envelope within `ARGMIN_TOL_REL * scale` of its
/// minimum, as coordinates.
pub fn argmin_set(envelope: &ScalarField) -> Vec<[f64; 2]> {
    let min = envelope.min();
    let tol = ARGMIN_TOL_REL * envelope.scale();
    envelope
        .grid
        .nodes()
        .filter(|&nd| envelope.value(nd) <= min + tol)
        .map(|nd| envelope.grid.coord(nd))
        .collect()
}

/// Distance from a point to the discrete argmin set.
pub fn dist_to_argmin(envelope: &ScalarField, x: [f64; 2]) -> f64 {
    argmin_set(envelope)
        .iter()
        .map(|y| norm([x[0] - y[0], x[1] - y[1]]))
        .fold(f64::INFINITY, f64::min)
}

/// Trapezoid estimate of the time integral of the sup-norm gradient error
/// over the snapshot range; finite by the exponential decay of the field.
pub fn gradient_error_integrability_report(
    snapshots: &Snapshots,
    envelope: &ScalarField,
) -> Result<f64> {
    if snapshots.fields.len() < 3 {
        return Err(Error::Precondition("need at least 3 snapshots".into()));
    }
    let band = snapshots.dirs.band.max(1);
    let grid = snapshots.grid();
    let sup_grad_err = |f: &ScalarField| -> f64 {
        grid.interior_nodes(band)
            .map(|nd| {
                let gu = f.gradient_central(nd).unwrap();
                let ge = envelope.gradient_central(nd).unwrap();
                norm([gu[0] - ge[0], gu[1] - ge[1]])
            })
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = snapshots.fields.iter().map(sup_grad_err).collect();
    let mut integral = 0.0;
    for k in 1..errs.len() {
        let dt = snapshots.times[k] - snapshots.times[k - 1];
        integral += 0.5 * (errs[k] + errs[k - 1]) * dt;
    }
    Ok(integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DirectionSet;
    use crate::problems::problem_library;
    use crate::solver::{solve, SolveParams};

    fn convex_2d_snapshots() -> Snapshots {
        let p = problem_library("convex_quadratic_2d").unwrap();
        let grid = p.default_grid(41).unwrap();
        let dirs = DirectionSet::default_for_dim(2);
        solve(&p, &grid, &dirs, &SolveParams::with_uniform_snapshots(1.0, 5)).unwrap()
    }

    #[test]
    fn gradient_of_stationary_convex_field() {
        let snaps = convex_2d_snapshots();
        // u = |x|^2, grad = 2x, stationary in t.
        for &t in &[0.0, 0.4, 2.5] {
            let g = eval_gradient_field(&snaps, t, [0.5, -0.25]).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-2, "g = {g:?}");
            assert!((g[1] + 0.5).abs() < 1e-2);
        }
    }

    #[test]
    fn gradient_at_snapshot_time_is_pure_spatial_interpolation() {
        let snaps = convex_2d_snapshots();
        let t = snaps.times[2];
        let x = [0.3, 0.7];
        let g = eval_gradient_field(&snaps, t, x).unwrap();
        let direct = snaps.fields[2].interp_gradient(x, Extrapolation::Error).unwrap();
        assert_eq!(g, direct);
    }

    #[test]
    fn quadratic_flow_contracts_to_origin() {
        let snaps = convex_2d_snapshots();
        let p = problem_library("convex_quadratic_2d").unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        let params = FlowParams::new(5.0, 1e-3, OdeMethod::Rk4);
        let traj = integrate(&snaps, &env, [1.0, 0.0], &params).unwrap();
        let xf = traj.final_point();
        assert!(norm(xf) <= 1e-3, "final point {xf:?}");
        // energy nonincreasing along the discrete trajectory
        for w in traj.values_u0.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn double_well_flow_lands_in_envelope_argmin() {
        let p = problem_library("double_well_1d").unwrap();
        let grid = p.default_grid(201).unwrap();
        let dirs = DirectionSet::default_for_dim(1);
        let snaps = solve(&p, &grid, &dirs, &SolveParams::with_uniform_snapshots(6.0, 61)).unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        let params = FlowParams::new(12.0, 1e-3, OdeMethod::Rk4);
        let traj = integrate(&snaps, &env, [1.8, 0.0], &params).unwrap();
        let xf = traj.final_point()[0];
        assert!((-1.01..=1.01).contains(&xf), "final x = {xf}");
        assert!(traj.final_env_value() - env.min() <= 1e-3 * snaps.fields[0].scale());
    }

    #[test]
    fn euler_and_rk4_agree_under_step_halving() {
        let p = problem_library("double_well_1d").unwrap();
        let grid = p.default_grid(201).unwrap();
        let dirs = DirectionSet::default_for_dim(1);
        let snaps = solve(&p, &grid, &dirs, &SolveParams::with_uniform_snapshots(4.0, 41)).unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        let t_end = 3.0;
        let run = |dt: f64, m: OdeMethod| {
            let mut params = FlowParams::new(t_end, dt, m);
            params.stationary_patience = usize::MAX;
            integrate(&snaps, &env, [1.6, 0.0], &params).unwrap().final_point()[0]
        };
        let gaps: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&dt| (run(dt, OdeMethod::Euler) - run(dt, OdeMethod::Rk4)).abs())
            .collect();
        assert!(gaps[2] < gaps[0], "gaps {gaps:?} should shrink with dt");
        assert!(gaps[2] < 1e-4);
    }

    #[test]
    fn integrability_report_zero_for_convex_and_finite_for_double_well() {
        let snaps = convex_2d_snapshots();
        let p = problem_library("convex_quadratic_2d").unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        let integral = gradient_error_integrability_report(&snaps, &env).unwrap();
        assert!(integral < 1e-8, "integral {integral}");

        let p = problem_library("double_well_1d").unwrap();
        let grid = p.default_grid(201).unwrap();
        let dirs = DirectionSet::default_for_dim(1);
        let snaps = solve(&p, &grid, &dirs, &SolveParams::with_uniform_snapshots(6.0, 61)).unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        let integral = gradient_error_integrability_report(&snaps, &env).unwrap();
        assert!(integral.is_finite() && integral > 0.0);
    }

    #[test]
    fn leaving_the_box_is_reported() {
        let snaps = convex_2d_snapshots();
        let p = problem_library("convex_quadratic_2d").unwrap();
        let env = p.reference_envelope(&snaps.fields[0]).unwrap().envelope;
        // Huge dt_ode overshoots the box on the first step.
        let params = FlowParams::new(5.0, 10.0, OdeMethod::Euler);
        let traj = integrate(&snaps, &env, [1.5, 1.5], &params).unwrap();
        assert_eq!(traj.terminated_reason, TerminationReason::LeftBox);
    }
}
