//! Built-in problem library: initial data with their curvature bound M, the
//! radius R0 outside which the datum already equals its convex envelope, a
//! default box, and the analytic envelope where one is known.

use serde::{Deserialize, Serialize};

use crate::envelope::{biconjugate, lower_hull_envelope_1d, EnvelopeResult};
use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};

/// Initial datum shapes. Restricted to polynomials (1D) and polynomials in
/// |x|^2 (2D radial) so the C^{1,1} and coercivity hypotheses are checkable
/// by inspecting the leading coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    /// u0(x) = sum_k coeffs[k] * x^k.
    Poly1d { coeffs: Vec<f64> },
    /// u0(x) = sum_k coeffs[k] * (|x|^2)^k.
    PolyRadial2d { coeffs: Vec<f64> },
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect()
}

impl InitialDatum {
    pub fn dim(&self) -> usize {
        match self {
            InitialDatum::Poly1d { .. } => 1,
            InitialDatum::PolyRadial2d { .. } => 2,
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            InitialDatum::Poly1d { coeffs } => poly_eval(coeffs, x[0]),
            InitialDatum::PolyRadial2d { coeffs } => {
                poly_eval(coeffs, x[0] * x[0] + x[1] * x[1])
            }
        }
    }

    /// sup |D^2 u0| over the box, by dense sampling of the analytic second
    /// derivative (exact up to sampling for polynomial data).
    pub fn hessian_sup(&self, lower: [f64; 2], upper: [f64; 2]) -> f64 {
        const SAMPLES: usize = 20001;
        match self {
            InitialDatum::Poly1d { coeffs } => {
                let dd = poly_derivative(&poly_derivative(coeffs));
                (0..SAMPLES)
                    .map(|k| {
                        let x = lower[0] + (upper[0] - lower[0]) * k as f64 / (SAMPLES - 1) as f64;
                        poly_eval(&dd, x).abs()
                    })
                    .fold(0.0, f64::max)
            }
            InitialDatum::PolyRadial2d { coeffs } => {
                // With g(s), s = |x|^2: Hessian = 2 g'(s) I + 4 g''(s) x x^T,
                // eigenvalues 2 g'(s) and 2 g'(s) + 4 s g''(s).
                let d1 = poly_derivative(coeffs);
                let d2 = poly_derivative(&d1);
                let rmax2 = lower[0].powi(2).max(upper[0].powi(2))
                    + lower[1].powi(2).max(upper[1].powi(2));
                (0..SAMPLES)
                    .map(|k| {
                        let s = rmax2 * k as f64 / (SAMPLES - 1) as f64;
                        let tangential = 2.0 * poly_eval(&d1, s);
                        let radial = tangential + 4.0 * s * poly_eval(&d2, s);
                        tangential.abs().max(radial.abs())
                    })
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Analytic envelope, for the problems where it is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticEnvelope {
    /// 0 on [-1, 1], (x^2 - 1)^2 outside.
    DoubleWell1d,
    /// 0 on the unit disk, (|x|^2 - 1)^2 outside.
    RadialDoubleWell2d,
    /// The datum itself (already convex).
    Identity,
}

impl AnalyticEnvelope {
    pub fn eval(&self, datum: &InitialDatum, x: [f64; 2]) -> f64 {
        match self {
            AnalyticEnvelope::Identity => datum.eval(x),
            AnalyticEnvelope::DoubleWell1d => {
                if x[0].abs() <= 1.0 {
                    0.0
                } else {
                    datum.eval(x)
                }
            }
            AnalyticEnvelope::RadialDoubleWell2d => {
                if x[0] * x[0] + x[1] * x[1] <= 1.0 {
                    0.0
                } else {
                    datum.eval(x)
                }
            }
        }
    }
}

/// An initial-value problem for the convexifying evolution equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    pub datum: InitialDatum,
    /// Analytic sup of |D^2 u0| over the default box.
    pub hessian_bound_m: f64,
    /// u0 = u0** outside the ball of this radius.
    pub r0: f64,
    pub box_lower: [f64; 2],
    pub box_upper: [f64; 2],
    pub analytic_envelope: Option<AnalyticEnvelope>,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.datum.dim()
    }

    pub fn u0(&self, x: [f64; 2]) -> f64 {
        self.datum.eval(x)
    }

    /// Default grid with n nodes per axis on the problem's box.
    pub fn default_grid(&self, n: usize) -> Result<Grid> {
        match self.dim() {
            1 => Grid::new_1d(self.box_lower[0], self.box_upper[0], n),
            _ => Grid::new_2d(self.box_lower, self.box_upper, [n, n]),
        }
    }

    pub fn sample_u0(&self, grid: &Grid) -> ScalarField {
        ScalarField::sample(grid.clone(), |x| self.datum.eval(x))
    }

    /// The box must strictly contain the ball B_{R0}.
    pub fn validate_box(&self, grid: &Grid) -> Result<()> {
        for a in 0..grid.dim {
            if grid.lower[a] >= -self.r0 || grid.upper[a] <= self.r0 {
                return Err(Error::Config(format!(
                    "grid box [{}, {}] on axis {a} does not strictly contain B_R0 (R0 = {})",
                    grid.lower[a], grid.upper[a], self.r0
                )));
            }
        }
        Ok(())
    }

    /// The reference discrete envelope: exact lower hull in 1D, biconjugate
    /// with 4n slopes in 2D.
    pub fn reference_envelope(&self, u0: &ScalarField) -> Result<EnvelopeResult> {
        match u0.grid.dim {
            1 => lower_hull_envelope_1d(u0),
            _ => biconjugate(u0, 4 * u0.grid.n[0].max(u0.grid.n[1])),
        }
    }
}

pub const PROBLEM_NAMES: [&str; 5] = [
    "double_well_1d",
    "asymmetric_quartic_1d",
    "radial_double_well_2d",
    "convex_quadratic_1d",
    "convex_quadratic_2d",
];

/// Look up a built-in problem by name.
pub fn problem_library(name: &str) -> Result<Problem> {
    // All data are coercive C^{1,1} polynomials with positive leading
    // coefficient, so the standing hypotheses hold by inspection.
    match name {
        "double_well_1d" => Ok(Problem {
            name: name.into(),
            // (x^2 - 1)^2 = 1 - 2 x^2 + x^4
            datum: InitialDatum::Poly1d { coeffs: vec![1.0, 0.0, -2.0, 0.0, 1.0] },
            // max |12 x^2 - 4| on [-2, 2]
            hessian_bound_m: 44.0,
            r0: 1.0,
            box_lower: [-2.0, 0.0],
            box_upper: [2.0, 0.0],
            analytic_envelope: Some(AnalyticEnvelope::DoubleWell1d),
        }),
        "asymmetric_quartic_1d" => Ok(Problem {
            name: name.into(),
            // x^4 - 2 x^2 + 0.3 x
            datum: InitialDatum::Poly1d { coeffs: vec![0.0, 0.3, -2.0, 0.0, 1.0] },
            hessian_bound_m: 44.0,
            r0: 1.5,
            box_lower: [-2.0, 0.0],
            box_upper: [2.0, 0.0],
            analytic_envelope: None,
        }),
        "radial_double_well_2d" => Ok(Problem {
            name: name.into(),
            // (|x|^2 - 1)^2 as a polynomial in s = |x|^2
            datum: InitialDatum::PolyRadial2d { coeffs: vec![1.0, -2.0, 1.0] },
            // radial eigenvalue 12 r^2 - 4 at the box corner r^2 = 8
            hessian_bound_m: 92.0,
            r0: 1.0,
            box_lower: [-2.0, -2.0],
            box_upper: [2.0, 2.0],
            analytic_envelope: Some(AnalyticEnvelope::RadialDoubleWell2d),
        }),
        "convex_quadratic_1d" => Ok(Problem {
            name: name.into(),
            datum: InitialDatum::Poly1d { coeffs: vec![0.0, 0.0, 1.0] },
            hessian_bound_m: 2.0,
            r0: 0.5,
            box_lower: [-2.0, 0.0],
            box_upper: [2.0, 0.0],
            analytic_envelope: Some(AnalyticEnvelope::Identity),
        }),
        "convex_quadratic_2d" => Ok(Problem {
            name: name.into(),
            datum: InitialDatum::PolyRadial2d { coeffs: vec![0.0, 1.0] },
            hessian_bound_m: 2.0,
            r0: 0.5,
            box_lower: [-2.0, -2.0],
            box_upper: [2.0, 2.0],
            analytic_envelope: Some(AnalyticEnvelope::Identity),
        }),
        other => Err(Error::Config(format!(
            "unknown problem '{other}'; available: {}",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

/// Build a custom problem from 1D polynomial coefficients. The leading
/// coefficient must be positive and of even degree >= 2 (coercivity), and M
/// and R0 are estimated from the sampled data.
pub fn custom_poly1d(coeffs: Vec<f64>, box_lower: f64, box_upper: f64) -> Result<Problem> {
    let degree = coeffs.len().saturating_sub(1);
    let leading = coeffs.last().copied().unwrap_or(0.0);
    if degree < 2 || degree % 2 != 0 || leading <= 0.0 {
        return Err(Error::Config(
            "custom polynomial must have even degree >= 2 with positive leading coefficient"
                .into(),
        ));
    }
    let datum = InitialDatum::Poly1d { coeffs };
    let lower = [box_lower, 0.0];
    let upper = [box_upper, 0.0];
    let m = datum.hessian_sup(lower, upper);
    // R0: outermost point where the sampled envelope still differs from u0.
    let grid = Grid::new_1d(box_lower, box_upper, 2001)?;
    let u0 = ScalarField::sample(grid.clone(), |x| datum.eval(x));
    let env = lower_hull_envelope_1d(&u0)?;
    let scale = u0.scale();
    let mut r0: f64 = 0.0;
    for i in 0..grid.n[0] {
        if u0.values[i] - env.envelope.values[i] > 1e-9 * scale {
            r0 = r0.max(grid.coord([i, 0])[0].abs());
        }
    }
    if r0 == 0.0 {
        r0 = 0.25 * (box_upper - box_lower) / 2.0;
    }
    Ok(Problem {
        name: "custom_poly1d".into(),
        datum,
        hessian_bound_m: m,
        r0,
        box_lower: lower,
        box_upper: upper,
        analytic_envelope: None,
    })
}
