//! Centralized slack constants and default tolerances.
//!
//! Everything here is relative to the field's value spread
//! (`scale = max u0 - min u0`) unless noted otherwise.

/// Spatial-discretization slack constant. Multiplied by `h * scale` it bounds
/// the admissible undershoot of the solver below the discrete envelope, and
/// `C_DIR * h / 10` is the error floor below which rate-fit points are
/// discarded. The monotone comparison argument makes the undershoot pure
/// rounding, so this can sit well under the measured double-well margins.
pub const C_DIR: f64 = 0.01;

/// Monte Carlo discretization slack: multiplies `(h + sqrt(dt_mc)) * scale`
/// in the tolerance of every estimate that compares a discretized controlled
/// diffusion against the grid solver value (Broadie-Glasserman style
/// overshoot plus field interpolation error).
pub const C_DISC: f64 = 1.0;

/// Dead-band around zero for the discrete smallest eigenvalue when selecting
/// the feedback control direction, relative to scale. Avoids control
/// chattering driven by interpolation noise.
pub const EIG_TOL_REL: f64 = 1e-8;

/// Steady-state detection: the solve stops early once
/// `max |u^{n+1} - u^n| / dt < STEADY_TOL_REL * scale`.
pub const STEADY_TOL_REL: f64 = 1e-8;

/// Gradient-flow stationarity threshold, relative to `scale / box_diameter`.
pub const GRAD_TOL_REL: f64 = 1e-6;

/// Consecutive near-stationary steps before the flow integration stops.
pub const STATIONARY_PATIENCE: usize = 50;

/// Nodes within this fraction of scale above the envelope minimum belong to
/// the discrete argmin set.
pub const ARGMIN_TOL_REL: f64 = 1e-9;

/// Relative tolerance for the structural-audit monotonicity checks
/// (semiconcavity maximum, eigenvalue extremes).
pub const AUDIT_MONOTONE_REL: f64 = 1e-8;

/// Allowed excess in the time-Lipschitz ratio.
pub const TIME_LIPSCHITZ_SLACK: f64 = 1e-6;

/// Minimum number of usable points for a rate fit.
pub const RATE_FIT_MIN_POINTS: usize = 5;

/// Default tail fraction of the time window used by the rate fit; the early
/// transient is not exponential and would bias the rate downward.
pub const TAIL_FRACTION: f64 = 0.5;

/// Absolute tolerance of the adaptive-Simpson quadrature behind `q_of_r`.
pub const QUADRATURE_TOL: f64 = 1e-12;
