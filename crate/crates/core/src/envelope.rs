//! Discrete convex envelopes of sampled fields.
//!
//! Three routes: an exact lower convex hull in 1D (monotone chain), a
//! factored discrete Legendre biconjugation in any dimension, and a
//! brute-force Caratheodory minimization used as a cross-validation oracle
//! on small grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Node-count guard for the brute-force oracle (cost O(N^{d+2})).
pub const BRUTE_FORCE_GUARD: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMethod {
    Hull1d,
    Biconjugate,
    Caratheodory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub envelope: ScalarField,
    pub method: EnvelopeMethod,
    /// max over nodes of input - envelope (>= 0).
    pub max_gap_to_input: f64,
}

impl EnvelopeResult {
    fn new(input: &ScalarField, envelope: ScalarField, method: EnvelopeMethod) -> Self {
        let max_gap = input
            .values
            .iter()
            .zip(&envelope.values)
            .map(|(u, e)| u - e)
            .fold(f64::NEG_INFINITY, f64::max);
        EnvelopeResult { envelope, method, max_gap_to_input: max_gap }
    }
}

/// Indices of the lower convex hull vertices of the sorted point set
/// `(xs[i], vals[i])`, by a single monotone-chain pass. Ties broken toward
/// the smaller index: a point on the chord of its neighbors is dropped.
fn lower_hull_indices(xs: &[f64], vals: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // b above or on the chord a--i: drop it.
            let cross = (xs[b] - xs[a]) * (vals[i] - vals[a]) - (xs[i] - xs[a]) * (vals[b] - vals[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Exact discrete convex envelope of a 1D field: the lower convex hull of
/// `{(x_i, u_i)}` evaluated back at every node.
pub fn lower_hull_envelope_1d(u: &ScalarField) -> Result<EnvelopeResult> {
    if u.grid.dim != 1 {
        return Err(Error::Precondition("lower_hull_envelope_1d requires a 1D field".into()));
    }
    let n = u.grid.n[0];
    let xs: Vec<f64> = (0..n).map(|i| u.grid.coord([i, 0])[0]).collect();
    let hull = lower_hull_indices(&xs, &u.values);

    let mut env = vec![0.0; n];
    let mut seg = 0usize;
    for i in 0..n {
        while seg + 1 < hull.len() && hull[seg + 1] <= i {
            seg += 1;
        }
        if hull[seg] == i || seg + 1 == hull.len() {
            env[i] = u.values[hull[seg]];
        } else {
            let (a, b) = (hull[seg], hull[seg + 1]);
            let t = (xs[i] - xs[a]) / (xs[b] - xs[a]);
            env[i] = u.values[a] + t * (u.values[b] - u.values[a]);
        }
    }
    let envelope = ScalarField::from_values(u.grid.clone(), env)?;
    Ok(EnvelopeResult::new(u, envelope, EnvelopeMethod::Hull1d))
}

/// Discrete Legendre conjugate of the point set `(xs[i], vals[i])` evaluated
/// at each slope: `s -> max_i (s x_i - vals_i)`.
///
/// O(n + m): the conjugate only sees the lower hull of the points, and along
/// hull vertices the argmax is nondecreasing in s.
pub fn legendre_conjugate_1d(xs: &[f64], vals: &[f64], slopes: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != vals.len() || xs.is_empty() {
        return Err(Error::Precondition("conjugate needs matching nonempty xs/vals".into()));
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("xs must be strictly increasing".into()));
    }
    if slopes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Precondition("slopes must be strictly increasing".into()));
    }
    let hull = lower_hull_indices(xs, vals);
    let mut j = 0usize;
    let mut out = Vec::with_capacity(slopes.len());
    for &s in slopes {
        // concave in the hull index, so advance while strictly improving
        // (ties stay at the smaller index).
        while j + 1 < hull.len() {
            let cur = s * xs[hull[j]] - vals[hull[j]];
            let next = s * xs[hull[j + 1]] - vals[hull[j + 1]];
            if next > cur {
                j += 1;
            } else {
                break;
            }
        }
        out.push(s * xs[hull[j]] - vals[hull[j]]);
    }
    Ok(out)
}

/// Slope grid for one conjugation axis: a uniform grid spanning (a hair
/// beyond) the extreme adjacent difference quotients of the data, augmented
/// with the difference quotients themselves. Chord slopes are convex
/// combinations of adjacent ones, so the span covers every supporting slope
/// of the node set; including the quotients puts the flat stretch of
/// `s -> s x_i - f*(s)` on the grid, which makes the reconstruction exact at
/// hull-touching nodes.
fn slope_grid(dqs: &[f64], count: usize) -> Vec<f64> {
    let lo = dqs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = dqs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    let (lo, hi) = (lo - pad, hi + pad);
    let count = count.max(2);
    let mut slopes: Vec<f64> =
        (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect();
    slopes.extend_from_slice(dqs);
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let gap = 1e-14 * (1.0 + hi.abs().max(lo.abs()));
    slopes.dedup_by(|a, b| *a - *b <= gap);
    slopes
}

/// Supporting slopes of the data along one axis: for every grid line, the
/// edge slopes of the lower convex hull of that line, plus the extreme
/// adjacent difference quotients (which bound every chord slope).
fn axis_support_slopes(u: &ScalarField, axis: usize) -> Vec<f64> {
    let n = u.grid.n[axis];
    let other = 1 - axis;
    let mut slopes = Vec::new();
    let xs: Vec<f64> = (0..n)
        .map(|i| {
            let mut node = [0usize; 2];
            node[axis] = i;
            u.grid.coord(node)[axis]
        })
        .collect();
    for j in 0..u.grid.n[other] {
        let line: Vec<f64> = (0..n)
            .map(|i| {
                let mut node = [0usize; 2];
                node[axis] = i;
                node[other] = j;
                u.value(node)
            })
            .collect();
        let hull = lower_hull_indices(&xs, &line);
        for w in hull.windows(2) {
            slopes.push((line[w[1]] - line[w[0]]) / (xs[w[1]] - xs[w[0]]));
        }
        // adjacent difference quotients only matter at the extremes
        for w in line.windows(2) {
            slopes.push((w[1] - w[0]) / u.grid.h);
        }
    }
    slopes
}

/// Discrete convex envelope via the double Legendre transform, factored
/// axis-by-axis in 2D.
pub fn biconjugate(u: &ScalarField, slope_count: usize) -> Result<EnvelopeResult> {
    if slope_count < u.grid.n[0].max(u.grid.n[1]) {
        eprintln!(
            "warning: slope_count {} below grid size; biconjugate envelope may be loose",
            slope_count
        );
    }
    let envelope = match u.grid.dim {
        1 => biconjugate_1d(u, slope_count)?,
        2 => biconjugate_2d(u, slope_count)?,
        _ => unreachable!(),
    };
    let envelope = ScalarField::from_values(u.grid.clone(), envelope)?;
    Ok(EnvelopeResult::new(u, envelope, EnvelopeMethod::Biconjugate))
}

fn biconjugate_1d(u: &ScalarField, slope_count: usize) -> Result<Vec<f64>> {
    let n = u.grid.n[0];
    let xs: Vec<f64> = (0..n).map(|i| u.grid.coord([i, 0])[0]).collect();
    let slopes = slope_grid(&axis_support_slopes(u, 0), slope_count);
    let conj = legendre_conjugate_1d(&xs, &u.values, &slopes)?;
    // u**(x) = max_s (s x - u*(s)): one more conjugate, slopes = node coords.
    legendre_conjugate_1d(&slopes, &conj, &xs)
}

fn biconjugate_2d(u: &ScalarField, slope_count: usize) -> Result<Vec<f64>> {
    let [n0, n1] = u.grid.n;
    let xs: Vec<f64> = (0..n0).map(|i| u.grid.coord([i, 0])[0]).collect();
    let ys: Vec<f64> = (0..n1).map(|j| u.grid.coord([0, j])[1]).collect();
    let s1 = slope_grid(&axis_support_slopes(u, 0), slope_count);
    let s2 = slope_grid(&axis_support_slopes(u, 1), slope_count);
    let (m1, m2) = (s1.len(), s2.len());

    // g(x1, s2) = max_{x2} (s2 x2 - f(x1, x2)), one 1D conjugate per row.
    let mut g = vec![0.0; n0 * m2];
    for i in 0..n0 {
        let row: Vec<f64> = (0..n1).map(|j| u.value([i, j])).collect();
        let c = legendre_conjugate_1d(&ys, &row, &s2)?;
        g[i * m2..(i + 1) * m2].copy_from_slice(&c);
    }
    // f*(s1, s2) = max_{x1} (s1 x1 + g(x1, s2)).
    let mut conj = vec![0.0; m1 * m2];
    for k2 in 0..m2 {
        let col: Vec<f64> = (0..n0).map(|i| -g[i * m2 + k2]).collect();
        let c = legendre_conjugate_1d(&xs, &col, &s1)?;
        for (k1, v) in c.into_iter().enumerate() {
            conj[k1 * m2 + k2] = v;
        }
    }
    // Back: f**(x) = max_{s1} (x1 s1 + max_{s2} (x2 s2 - f*(s1, s2))).
    let mut inner = vec![0.0; m1 * n1];
    for k1 in 0..m1 {
        let row: Vec<f64> = (0..m2).map(|k2| conj[k1 * m2 + k2]).collect();
        let c = legendre_conjugate_1d(&s2, &row, &ys)?;
        inner[k1 * n1..(k1 + 1) * n1].copy_from_slice(&c);
    }
    let mut env = vec![0.0; n0 * n1];
    for j in 0..n1 {
        let col: Vec<f64> = (0..m1).map(|k1| -inner[k1 * n1 + j]).collect();
        let c = legendre_conjugate_1d(&s1, &col, &xs)?;
        for (i, v) in c.into_iter().enumerate() {
            env[i * n1 + j] = v;
        }
    }
    Ok(env)
}

/// Brute-force Caratheodory envelope: at every node, minimize the convex
/// interpolation of u over all (d+1)-tuples of nodes whose hull contains it.
/// Test oracle only; refuses grids above [`BRUTE_FORCE_GUARD`] nodes.
pub fn caratheodory_bruteforce(u: &ScalarField) -> Result<EnvelopeResult> {
    let nodes = u.grid.len();
    if nodes > BRUTE_FORCE_GUARD {
        return Err(Error::BruteForceGuard { nodes, guard: BRUTE_FORCE_GUARD });
    }
    let envelope = match u.grid.dim {
        1 => caratheodory_1d(u),
        2 => caratheodory_2d(u),
        _ => unreachable!(),
    };
    let envelope = ScalarField::from_values(u.grid.clone(), envelope)?;
    Ok(EnvelopeResult::new(u, envelope, EnvelopeMethod::Caratheodory))
}

fn caratheodory_1d(u: &ScalarField) -> Vec<f64> {
    let n = u.grid.n[0];
    let xs: Vec<f64> = (0..n).map(|i| u.grid.coord([i, 0])[0]).collect();
    let mut env = u.values.clone();
    for k in 0..n {
        for i in 0..=k {
            for j in k..n {
                if i == j {
                    continue;
                }
                let t = (xs[k] - xs[i]) / (xs[j] - xs[i]);
                let v = u.values[i] + t * (u.values[j] - u.values[i]);
                if v < env[k] {
                    env[k] = v;
                }
            }
        }
    }
    env
}

fn caratheodory_2d(u: &ScalarField) -> Vec<f64> {
    let pts: Vec<[f64; 2]> = u.grid.nodes().map(|nd| u.grid.coord(nd)).collect();
    let vals = &u.values;
    let m = pts.len();
    let mut env = vals.clone();

    // Pairs: nodes on the segment between two others.
    for a in 0..m {
        for b in (a + 1)..m {
            let d = [pts[b][0] - pts[a][0], pts[b][1] - pts[a][1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            for k in 0..m {
                let r = [pts[k][0] - pts[a][0], pts[k][1] - pts[a][1]];
                let cross = d[0] * r[1] - d[1] * r[0];
                if cross.abs() > 1e-10 * len2 {
                    continue;
                }
                let t = (r[0] * d[0] + r[1] * d[1]) / len2;
                if !(0.0..=1.0).contains(&t) {
                    continue;
                }
                let v = vals[a] + t * (vals[b] - vals[a]);
                if v < env[k] {
                    env[k] = v;
                }
            }
        }
    }
    // Triples with nondegenerate hull: barycentric interpolation.
    for a in 0..m {
        for b in (a + 1)..m {
            for c in (b + 1)..m {
                let det = (pts[b][0] - pts[a][0]) * (pts[c][1] - pts[a][1])
                    - (pts[c][0] - pts[a][0]) * (pts[b][1] - pts[a][1]);
                if det.abs() < 1e-12 {
                    continue;
                }
                for k in 0..m {
                    let rx = pts[k][0] - pts[a][0];
                    let ry = pts[k][1] - pts[a][1];
                    let lb = (rx * (pts[c][1] - pts[a][1]) - ry * (pts[c][0] - pts[a][0])) / det;
                    let lc = (ry * (pts[b][0] - pts[a][0]) - rx * (pts[b][1] - pts[a][1])) / det;
                    let la = 1.0 - lb - lc;
                    if la < -1e-12 || lb < -1e-12 || lc < -1e-12 {
                        continue;
                    }
                    let v = la * vals[a] + lb * vals[b] + lc * vals[c];
                    if v < env[k] {
                        env[k] = v;
                    }
                }
            }
        }
    }
    env
}
