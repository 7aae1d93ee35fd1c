//! Post-processing over solver snapshots: error series against a reference
//! envelope, exponential-rate fitting, a semiconvexity-based gradient bound
//! check, and the structural-invariant audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::solver::{time_lipschitz_check, Snapshots};
use crate::tolerances::{AUDIT_MONOTONE_REL, C_DIR, RATE_FIT_MIN_POINTS, TIME_LIPSCHITZ_SLACK};

/// An error-vs-time series with bookkeeping about clamped entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    /// Nodes whose signed error was negative and got clamped to zero,
    /// summed over all snapshots.
    pub clamped_nodes: usize,
    /// Most negative signed error seen before clamping (0 if none).
    pub min_signed: f64,
}

fn check_same_grid(snapshots: &Snapshots, envelope: &ScalarField) -> Result<()> {
    if snapshots.grid() != &envelope.grid {
        return Err(Error::GridMismatch(
            "snapshots and envelope live on different grids".into(),
        ));
    }
    Ok(())
}

/// Sup-norm distance from each snapshot down to the envelope.
///
/// The error is one-sided: the scheme keeps `u >= envelope` up to the
/// directional-resolution bias, so negative nodal differences are clamped to
/// zero and counted instead of polluting the series.
pub fn sup_error_series(snapshots: &Snapshots, envelope: &ScalarField) -> Result<ErrorSeries> {
    check_same_grid(snapshots, envelope)?;
    let mut errors = Vec::with_capacity(snapshots.fields.len());
    let mut clamped = 0usize;
    let mut min_signed: f64 = 0.0;
    for field in &snapshots.fields {
        let mut e: f64 = 0.0;
        for (u, env) in field.values.iter().zip(&envelope.values) {
            let d = u - env;
            if d < 0.0 {
                clamped += 1;
                min_signed = min_signed.min(d);
            } else {
                e = e.max(d);
            }
        }
        errors.push(e);
    }
    Ok(ErrorSeries { times: snapshots.times.clone(), errors, clamped_nodes: clamped, min_signed })
}

/// Sup over interior nodes of |grad u(t) - grad envelope| (central
/// differences, Euclidean norm).
pub fn grad_error_series(snapshots: &Snapshots, envelope: &ScalarField) -> Result<ErrorSeries> {
    check_same_grid(snapshots, envelope)?;
    let grid = snapshots.grid().clone();
    let mut errors = Vec::with_capacity(snapshots.fields.len());
    for field in &snapshots.fields {
        let mut e: f64 = 0.0;
        for node in grid.interior_nodes(1) {
            let gu = field.gradient_central(node)?;
            let ge = envelope.gradient_central(node)?;
            let mut sq = 0.0;
            for a in 0..grid.dim {
                sq += (gu[a] - ge[a]).powi(2);
            }
            e = e.max(sq.sqrt());
        }
        errors.push(e);
    }
    Ok(ErrorSeries { times: snapshots.times.clone(), errors, clamped_nodes: 0, min_signed: 0.0 })
}

/// Error floor below which a series point counts as converged and is
/// excluded from the rate regression.
pub fn error_floor(scale: f64, h: f64) -> f64 {
    (1e-12 * scale).max(C_DIR * h / 10.0)
}

/// Result of a log-linear fit `e(t) ~ C exp(-lambda t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub c: f64,
    pub lambda: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// The (t, e) pairs that entered the regression.
    pub series: Vec<(f64, f64)>,
    /// Window points at or below the floor, excluded from the fit.
    pub excluded: usize,
    pub floor: f64,
}

/// Least squares on `(t, log e(t))` over the last `tail_fraction` of the
/// series time range, skipping points at or below `floor`.
pub fn fit_rate(series: &ErrorSeries, tail_fraction: f64, floor: f64) -> Result<RateFit> {
    if !(0.0 < tail_fraction && tail_fraction <= 1.0) {
        return Err(Error::Config(format!("tail_fraction must be in (0, 1], got {tail_fraction}")));
    }
    if series.times.len() != series.errors.len() || series.times.is_empty() {
        return Err(Error::Config("empty or inconsistent error series".into()));
    }
    let t_min = series.times[0];
    let t_max = *series.times.last().unwrap();
    let t_lo = t_max - tail_fraction * (t_max - t_min);

    let mut pts = Vec::new();
    let mut excluded = 0usize;
    for (&t, &e) in series.times.iter().zip(&series.errors) {
        if t < t_lo {
            continue;
        }
        if e <= floor {
            excluded += 1;
        } else {
            pts.push((t, e));
        }
    }
    if pts.len() < RATE_FIT_MIN_POINTS {
        return Err(Error::ConvergedTooFast { usable: pts.len(), need: RATE_FIT_MIN_POINTS });
    }

    let n = pts.len() as f64;
    let (mut st, mut sy) = (0.0, 0.0);
    for &(t, e) in &pts {
        st += t;
        sy += e.ln();
    }
    let (tbar, ybar) = (st / n, sy / n);
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, e) in &pts {
        let (dt, dy) = (t - tbar, e.ln() - ybar);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(Error::Numerical("rate fit needs at least two distinct times".into()));
    }
    let slope = sty / stt;
    let intercept = ybar - slope * tbar;
    let r_squared = if syy == 0.0 { 1.0 } else { (sty * sty) / (stt * syy) };
    Ok(RateFit {
        c: intercept.exp(),
        lambda: -slope,
        r_squared,
        window: (pts[0].0, pts.last().unwrap().0),
        series: pts,
        excluded,
        floor,
    })
}

/// One snapshot's evaluation of the semiconvexity gradient estimate
/// `sup_{B_r} |grad v| <= 2 (M sup_{B_{r+r'}} v)^{1/2}`,
/// `r' = (2/(M r)) sup_{B_{2r}} v + r/2`, for `v = u(t) - envelope >= 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBoundSample {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub r_prime: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBoundReport {
    pub r_requested: f64,
    pub r_used: f64,
    /// Set when `r` had to shrink so the balls fit inside the box.
    pub shrunk: bool,
    pub samples: Vec<GradientBoundSample>,
    pub worst_ratio: f64,
    pub tolerance: f64,
}

/// Slack for the gradient bound check: the envelope carries an O(C_dir h)
/// bias whose square root enters the right-hand side.
pub fn gradient_bound_tolerance(h: f64) -> f64 {
    (C_DIR * h).sqrt()
}

/// Evaluate the gradient estimate on grid balls centered at the box center
/// for every snapshot. `r` shrinks (with a flag) until all three balls fit.
pub fn gradient_bound_check(
    snapshots: &Snapshots,
    envelope: &ScalarField,
    m_disc: f64,
    r: f64,
) -> Result<GradientBoundReport> {
    check_same_grid(snapshots, envelope)?;
    if !(r > 0.0) || !(m_disc > 0.0) {
        return Err(Error::Config("gradient_bound check needs r > 0 and m_disc > 0".into()));
    }
    let grid = snapshots.grid().clone();
    let mut center = [0.0; 2];
    let mut avail = f64::INFINITY;
    for a in 0..grid.dim {
        center[a] = 0.5 * (grid.lower[a] + grid.upper[a]);
        // leave one cell so central gradients stay inside
        avail = avail.min(0.5 * (grid.upper[a] - grid.lower[a]) - grid.h);
    }
    if avail <= grid.h {
        return Err(Error::Config("box too small for the gradient bound check".into()));
    }

    let dist = |x: [f64; 2]| -> f64 {
        let mut sq = 0.0;
        for a in 0..grid.dim {
            sq += (x[a] - center[a]).powi(2);
        }
        sq.sqrt()
    };
    let sup_on_ball = |v: &[f64], radius: f64| -> f64 {
        let mut m: f64 = 0.0;
        for node in grid.nodes() {
            if dist(grid.coord(node)) <= radius {
                m = m.max(v[grid.flat(node)].max(0.0));
            }
        }
        m
    };

    // Shrink r until B_{2r} and B_{r+r'} fit for every snapshot. r' grows as
    // r shrinks, so cap the iteration count and fail loudly if it stalls.
    let mut r_used = r.min(avail / 2.0);
    let mut shrunk = r_used < r;
    let v_all: Vec<Vec<f64>> = snapshots
        .fields
        .iter()
        .map(|f| f.values.iter().zip(&envelope.values).map(|(u, e)| u - e).collect())
        .collect();
    let mut ok = false;
    for _ in 0..60 {
        let worst_reach = v_all
            .iter()
            .map(|v| {
                let sup_2r = sup_on_ball(v, 2.0 * r_used);
                let r_prime = 2.0 / (m_disc * r_used) * sup_2r + r_used / 2.0;
                r_used + r_prime
            })
            .fold(0.0, f64::max);
        if worst_reach <= avail && 2.0 * r_used <= avail {
            ok = true;
            break;
        }
        r_used *= 0.8;
        shrunk = true;
        if r_used < grid.h {
            break;
        }
    }
    if !ok {
        return Err(Error::Numerical(
            "gradient bound check: no radius fits the box; enlarge the box or the bound".into(),
        ));
    }

    let mut samples = Vec::with_capacity(snapshots.fields.len());
    let mut worst: f64 = 0.0;
    for (k, v) in v_all.iter().enumerate() {
        let sup_2r = sup_on_ball(v, 2.0 * r_used);
        let r_prime = 2.0 / (m_disc * r_used) * sup_2r + r_used / 2.0;
        let rhs = 2.0 * (m_disc * sup_on_ball(v, r_used + r_prime)).sqrt();

        let mut lhs: f64 = 0.0;
        for node in grid.interior_nodes(1) {
            if dist(grid.coord(node)) > r_used {
                continue;
            }
            let gu = snapshots.fields[k].gradient_central(node)?;
            let ge = envelope.gradient_central(node)?;
            let mut sq = 0.0;
            for a in 0..grid.dim {
                sq += (gu[a] - ge[a]).powi(2);
            }
            lhs = lhs.max(sq.sqrt());
        }
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(ratio);
        samples.push(GradientBoundSample { t: snapshots.times[k], lhs, rhs, ratio, r_prime });
    }
    Ok(GradientBoundReport {
        r_requested: r,
        r_used,
        shrunk,
        samples,
        worst_ratio: worst,
        tolerance: gradient_bound_tolerance(grid.h),
    })
}

/// One named invariant with its measured margin.
///
/// `margin` is oriented so that `margin <= threshold` means pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    pub all_pass: bool,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Run the full structural audit: sandwich bounds, time-monotonicity,
/// semiconcavity decay, extreme-eigenvalue monotonicity, and the
/// time-Lipschitz estimate.
///
/// `u0` must be the sampled initial datum on the same grid; `m_disc` its
/// discrete Hessian bound under the snapshot direction set.
pub fn structural_audit(
    snapshots: &Snapshots,
    envelope: &ScalarField,
    u0: &ScalarField,
    m_disc: f64,
) -> Result<AuditReport> {
    check_same_grid(snapshots, envelope)?;
    check_same_grid(snapshots, u0)?;
    let grid = snapshots.grid().clone();
    let dirs = snapshots.dirs.clone();
    let scale = u0.scale();
    let mut checks = Vec::new();
    let mut push = |name: &str, margin: f64, threshold: f64| {
        checks.push(AuditCheck {
            name: name.into(),
            pass: margin <= threshold,
            margin,
            threshold,
        });
    };

    // Sandwich, upper side: the update adds a nonpositive increment, so
    // u(t) <= u0 holds exactly in floating point.
    let mut upper: f64 = f64::NEG_INFINITY;
    for field in &snapshots.fields {
        for (u, v0) in field.values.iter().zip(&u0.values) {
            upper = upper.max(u - v0);
        }
    }
    push("sandwich_upper", upper, 0.0);

    // Sandwich, lower side: u(t) >= envelope up to the directional
    // resolution of the stencil.
    let mut below: f64 = 0.0;
    for field in &snapshots.fields {
        for (u, e) in field.values.iter().zip(&envelope.values) {
            below = below.max(e - u);
        }
    }
    push("sandwich_lower", below, C_DIR * grid.h * scale);

    // Pointwise nonincreasing in time, exactly.
    let mut increase: f64 = f64::NEG_INFINITY;
    for k in 1..snapshots.fields.len() {
        for (a, b) in snapshots.fields[k].values.iter().zip(&snapshots.fields[k - 1].values) {
            increase = increase.max(a - b);
        }
    }
    if snapshots.fields.len() < 2 {
        increase = 0.0;
    }
    push("time_monotone", increase, 0.0);

    // Semiconcavity is inherited from u0 and only improves: the largest
    // directional second difference must not grow in time.
    let eig_extremes: Result<Vec<(f64, f64)>> = snapshots
        .fields
        .iter()
        .map(|field| {
            let mut lam_max = f64::NEG_INFINITY;
            let mut lam_min = f64::INFINITY;
            for node in grid.interior_nodes(dirs.band) {
                lam_max = lam_max.max(field.lambda_max(node, &dirs)?);
                lam_min = lam_min.min(field.lambda_min(node, &dirs)?);
            }
            Ok((lam_min, lam_max))
        })
        .collect();
    let eig_extremes = eig_extremes?;
    let eig_tol = AUDIT_MONOTONE_REL * scale;
    let mut sc_growth: f64 = 0.0;
    let mut lam_min_drop: f64 = 0.0;
    for k in 1..eig_extremes.len() {
        sc_growth = sc_growth.max(eig_extremes[k].1 - eig_extremes[k - 1].1);
        lam_min_drop = lam_min_drop.max(eig_extremes[k - 1].0 - eig_extremes[k].0);
    }
    push("semiconcavity_max_nonincreasing", sc_growth, eig_tol);
    push("lambda_min_nondecreasing", lam_min_drop, eig_tol);

    // |u(t) - u(s)| <= M_disc |t - s| across consecutive snapshots.
    let lip = time_lipschitz_check(snapshots, m_disc);
    push("time_lipschitz", lip.worst_ratio, 1.0 + TIME_LIPSCHITZ_SLACK);

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(AuditReport { checks, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DirectionSet, Grid};
    use crate::problems::problem_library;
    use crate::solver::{m_disc, solve, SolveParams};

    fn synthetic_series(c: f64, lambda: f64, times: &[f64]) -> ErrorSeries {
        ErrorSeries {
            times: times.to_vec(),
            errors: times.iter().map(|&t| c * (-lambda * t).exp()).collect(),
            clamped_nodes: 0,
            min_signed: 0.0,
        }
    }

    #[test]
    fn exact_exponential_recovered_to_machine_precision() {
        let times: Vec<f64> = (0..41).map(|k| 0.25 * k as f64).collect();
        let series = synthetic_series(3.0, 0.7, &times);
        let fit = fit_rate(&series, 0.5, 1e-300).unwrap();
        assert!((fit.c - 3.0).abs() / 3.0 < 1e-10, "C = {}", fit.c);
        assert!((fit.lambda - 0.7).abs() / 0.7 < 1e-10, "lambda = {}", fit.lambda);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.excluded, 0);
    }

    #[test]
    fn one_percent_noise_moves_lambda_less_than_ten_percent() {
        let times: Vec<f64> = (0..41).map(|k| 0.25 * k as f64).collect();
        let mut series = synthetic_series(2.0, 1.3, &times);
        for (k, e) in series.errors.iter_mut().enumerate() {
            // deterministic alternating 1% perturbation
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *e *= 1.0 + 0.01 * sign;
        }
        let fit = fit_rate(&series, 0.5, 1e-300).unwrap();
        assert!((fit.lambda - 1.3).abs() / 1.3 < 0.1, "lambda = {}", fit.lambda);
    }

    #[test]
    fn floor_excludes_converged_points_and_errors_when_too_few_remain() {
        let times: Vec<f64> = (0..21).map(|k| 0.5 * k as f64).collect();
        let mut series = synthetic_series(1.0, 1.0, &times);
        // kill the tail entirely
        for e in series.errors.iter_mut().skip(4) {
            *e = 0.0;
        }
        match fit_rate(&series, 0.5, 1e-9) {
            Err(Error::ConvergedTooFast { usable, need }) => {
                assert_eq!(usable, 0);
                assert_eq!(need, RATE_FIT_MIN_POINTS);
            }
            other => panic!("expected ConvergedTooFast, got {other:?}"),
        }
    }

    fn double_well_run(n: usize, t_end: f64, count: usize) -> (Snapshots, ScalarField, ScalarField) {
        let problem = problem_library("double_well_1d").unwrap();
        let grid = problem.default_grid(n).unwrap();
        let u0 = problem.sample_u0(&grid);
        let dirs = DirectionSet::default_for_dim(1);
        let params = SolveParams::with_uniform_snapshots(t_end, count);
        let snaps = solve(&problem, &grid, &dirs, &params).unwrap();
        let env = problem.reference_envelope(&u0).unwrap().envelope;
        (snaps, env, u0)
    }

    #[test]
    fn double_well_sup_series_starts_at_one_and_never_increases() {
        let (snaps, env, _) = double_well_run(101, 1.0, 11);
        let series = sup_error_series(&snaps, &env).unwrap();
        assert!((series.errors[0] - 1.0).abs() < 1e-12, "e(0) = {}", series.errors[0]);
        for k in 1..series.errors.len() {
            assert!(series.errors[k] <= series.errors[k - 1]);
        }
        // hull envelope sits below the scheme's steady state, nothing clamps
        assert_eq!(series.clamped_nodes, 0);
    }

    #[test]
    fn convex_datum_gives_identically_zero_series() {
        let problem = problem_library("convex_quadratic_1d").unwrap();
        let grid = problem.default_grid(41).unwrap();
        let u0 = problem.sample_u0(&grid);
        let dirs = DirectionSet::default_for_dim(1);
        let snaps =
            solve(&problem, &grid, &dirs, &SolveParams::with_uniform_snapshots(0.5, 6)).unwrap();
        let env = problem.reference_envelope(&u0).unwrap().envelope;
        let sup = sup_error_series(&snaps, &env).unwrap();
        let grad = grad_error_series(&snaps, &env).unwrap();
        for (&a, &b) in sup.errors.iter().zip(&grad.errors) {
            assert!(a < 1e-12 && b < 1e-12);
        }
    }

    #[test]
    fn gradient_bound_trivial_for_zero_v() {
        let (snaps, _, u0) = double_well_run(61, 0.2, 3);
        // envelope = u0 makes v = u(t) - u0 <= 0, clamped to 0 on the balls
        let report = gradient_bound_check(&snaps, &u0, 44.0, 0.5).unwrap();
        // both sides vanish at t = 0
        assert_eq!(report.samples[0].lhs, 0.0);
    }

    #[test]
    fn gradient_bound_on_explicit_bump() {
        // v = eps * (1 - |x|^2 / r^2)_+ on a fine grid, against envelope 0
        let grid = Grid::new_1d(-2.0, 2.0, 401).unwrap();
        let eps = 0.05;
        let r = 0.5;
        let bump = ScalarField::sample(grid.clone(), |x| {
            (eps * (1.0 - x[0] * x[0] / (r * r))).max(0.0)
        });
        let zero = ScalarField::sample(grid, |_| 0.0);
        let snaps = Snapshots {
            times: vec![0.0],
            fields: vec![bump],
            dt_used: 1.0,
            dirs: DirectionSet::default_for_dim(1),
            steady_state_reached: false,
        };
        // |v''| <= 2 eps / r^2 inside the bump
        let m = 2.0 * eps / (r * r);
        let report = gradient_bound_check(&snaps, &zero, m, r).unwrap();
        assert!(report.worst_ratio <= 1.0, "ratio = {}", report.worst_ratio);
    }

    #[test]
    fn double_well_snapshots_pass_the_gradient_bound_check() {
        let (snaps, env, u0) = double_well_run(201, 2.0, 5);
        let m = m_disc(&u0, &snaps.dirs);
        let report = gradient_bound_check(&snaps, &env, m, 0.5).unwrap();
        assert!(
            report.worst_ratio <= 1.0 + report.tolerance,
            "ratio = {}, tol = {}",
            report.worst_ratio,
            report.tolerance
        );
    }

    #[test]
    fn structural_audit_passes_on_double_well() {
        let (snaps, env, u0) = double_well_run(201, 2.0, 9);
        let m = m_disc(&u0, &snaps.dirs);
        let report = structural_audit(&snaps, &env, &u0, m).unwrap();
        for c in &report.checks {
            assert!(c.pass, "{} failed: margin {} > {}", c.name, c.margin, c.threshold);
        }
        assert!(report.all_pass);
    }

    #[test]
    fn structural_audit_catches_a_tampered_snapshot() {
        let (mut snaps, env, u0) = double_well_run(101, 1.0, 5);
        let m = m_disc(&u0, &snaps.dirs);
        // push one late value above u0: breaks the sandwich and monotonicity
        let mid = snaps.fields[0].values.len() / 2;
        snaps.fields[4].values[mid] += 2.0;
        let report = structural_audit(&snaps, &env, &u0, m).unwrap();
        assert!(!report.all_pass);
        assert!(!report.check("sandwich_upper").unwrap().pass);
        assert!(!report.check("time_monotone").unwrap().pass);
    }
}
