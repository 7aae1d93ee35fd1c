//! Uniform box grids, scalar fields, wide-stencil directional second
//! differences and the discrete extreme Hessian eigenvalues built from them.
//!
//! Everything here is dimension 1 or 2. Nodes are addressed as `[usize; 2]`
//! (the second index is always 0 in 1D) and points as `[f64; 2]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform grid on a box, equal spacing on every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub n: [usize; 2],
    pub h: f64,
}

impl Grid {
    pub fn new_1d(lower: f64, upper: f64, n: usize) -> Result<Self> {
        if n < 5 {
            return Err(Error::Config(format!("need n >= 5 nodes per axis, got {n}")));
        }
        if upper <= lower {
            return Err(Error::Config("upper bound must exceed lower bound".into()));
        }
        let h = (upper - lower) / (n - 1) as f64;
        Ok(Grid { dim: 1, lower: [lower, 0.0], upper: [upper, 0.0], n: [n, 1], h })
    }

    pub fn new_2d(lower: [f64; 2], upper: [f64; 2], n: [usize; 2]) -> Result<Self> {
        for a in 0..2 {
            if n[a] < 5 {
                return Err(Error::Config(format!("need n >= 5 nodes per axis, got {}", n[a])));
            }
            if upper[a] <= lower[a] {
                return Err(Error::Config("upper bound must exceed lower bound".into()));
            }
        }
        let h0 = (upper[0] - lower[0]) / (n[0] - 1) as f64;
        let h1 = (upper[1] - lower[1]) / (n[1] - 1) as f64;
        if (h0 - h1).abs() > 1e-12 * h0.abs() {
            return Err(Error::Config(format!(
                "axes must have equal spacing (square cells): h0 = {h0}, h1 = {h1}"
            )));
        }
        Ok(Grid { dim: 2, lower, upper, n, h: h0 })
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major flat index of a node.
    pub fn flat(&self, node: [usize; 2]) -> usize {
        node[0] * self.n[1] + node[1]
    }

    pub fn node_of_flat(&self, k: usize) -> [usize; 2] {
        [k / self.n[1], k % self.n[1]]
    }

    pub fn coord(&self, node: [usize; 2]) -> [f64; 2] {
        [
            self.lower[0] + node[0] as f64 * self.h,
            if self.dim == 2 { self.lower[1] + node[1] as f64 * self.h } else { 0.0 },
        ]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let eps = 1e-12 * self.h;
        let mut ok = x[0] >= self.lower[0] - eps && x[0] <= self.upper[0] + eps;
        if self.dim == 2 {
            ok = ok && x[1] >= self.lower[1] - eps && x[1] <= self.upper[1] + eps;
        }
        ok
    }

    /// Iterate all nodes in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        let n1 = self.n[1];
        (0..self.len()).map(move |k| [k / n1, k % n1])
    }

    /// True if `node` is at distance >= `band` (in index space) from every
    /// boundary of the active axes.
    pub fn is_interior(&self, node: [usize; 2], band: usize) -> bool {
        let mut ok = node[0] >= band && node[0] + band < self.n[0];
        if self.dim == 2 {
            ok = ok && node[1] >= band && node[1] + band < self.n[1];
        }
        ok
    }

    /// Iterate interior nodes (band width `band`) in row-major order.
    pub fn interior_nodes(&self, band: usize) -> impl Iterator<Item = [usize; 2]> + '_ {
        let band2 = if self.dim == 2 { band } else { 0 };
        let (n0, n1) = (self.n[0], self.n[1]);
        (band..n0.saturating_sub(band)).flat_map(move |i| {
            (band2..n1.saturating_sub(band2)).map(move |j| [i, j])
        })
    }

    /// Nearest node to a point inside the box.
    pub fn nearest_node(&self, x: [f64; 2]) -> [usize; 2] {
        let clamp = |t: f64, n: usize| -> usize {
            let i = t.round();
            if i < 0.0 {
                0
            } else if i as usize >= n {
                n - 1
            } else {
                i as usize
            }
        };
        let i = clamp((x[0] - self.lower[0]) / self.h, self.n[0]);
        let j = if self.dim == 2 { clamp((x[1] - self.lower[1]) / self.h, self.n[1]) } else { 0 };
        [i, j]
    }
}

/// One lattice direction of the wide stencil, with its Euclidean length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub p: [i64; 2],
    pub norm: f64,
}

impl Offset {
    fn new(p: [i64; 2]) -> Self {
        let norm = ((p[0] * p[0] + p[1] * p[1]) as f64).sqrt();
        Offset { p, norm }
    }

    /// Unit vector along the offset.
    pub fn unit(&self) -> [f64; 2] {
        [self.p[0] as f64 / self.norm, self.p[1] as f64 / self.norm]
    }
}

/// Named direction-set presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPreset {
    Axes,
    Stencil8,
    Stencil16,
}

impl std::str::FromStr for DirectionPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axes" => Ok(DirectionPreset::Axes),
            "stencil8" => Ok(DirectionPreset::Stencil8),
            "stencil16" => Ok(DirectionPreset::Stencil16),
            other => Err(Error::Config(format!(
                "unknown direction set '{other}' (expected axes, stencil8 or stencil16)"
            ))),
        }
    }
}

/// Integer stencil offsets, one representative per antipodal pair, coprime
/// components, always containing the axis directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    pub dim: usize,
    pub offsets: Vec<Offset>,
    /// Boundary band width: max over offsets of max |p_i|.
    pub band: usize,
}

impl DirectionSet {
    pub fn from_preset(preset: DirectionPreset, dim: usize) -> Self {
        let raw: Vec<[i64; 2]> = match (dim, preset) {
            (1, _) => vec![[1, 0]],
            (2, DirectionPreset::Axes) => vec![[1, 0], [0, 1]],
            (2, DirectionPreset::Stencil8) => vec![[1, 0], [0, 1], [1, 1], [1, -1]],
            (2, DirectionPreset::Stencil16) => vec![
                [1, 0],
                [0, 1],
                [1, 1],
                [1, -1],
                [2, 1],
                [2, -1],
                [1, 2],
                [1, -2],
            ],
            _ => unreachable!("dim must be 1 or 2"),
        };
        Self::from_offsets(dim, &raw)
    }

    pub fn from_offsets(dim: usize, raw: &[[i64; 2]]) -> Self {
        let offsets: Vec<Offset> = raw.iter().map(|&p| Offset::new(p)).collect();
        let band = offsets
            .iter()
            .map(|o| o.p[0].unsigned_abs().max(o.p[1].unsigned_abs()) as usize)
            .max()
            .unwrap_or(1);
        DirectionSet { dim, offsets, band }
    }

    /// Default preset for a dimension: AXES in 1D, STENCIL8 in 2D.
    pub fn default_for_dim(dim: usize) -> Self {
        let preset = if dim == 1 { DirectionPreset::Axes } else { DirectionPreset::Stencil8 };
        Self::from_preset(preset, dim)
    }

    /// Smallest |p| over the set (in lattice units).
    pub fn min_norm(&self) -> f64 {
        self.offsets.iter().map(|o| o.norm).fold(f64::INFINITY, f64::min)
    }
}

/// What to do when an interpolation point falls outside the box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    Error,
    Clamp,
}

/// Scalar values on a grid, row-major, immutable in spirit after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite field value".into()));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn sample<F: Fn([f64; 2]) -> f64>(grid: Grid, f: F) -> Self {
        let values = grid.nodes().map(|node| f(grid.coord(node))).collect();
        ScalarField { grid, values }
    }

    pub fn value(&self, node: [usize; 2]) -> f64 {
        self.values[self.grid.flat(node)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Value spread max - min, the natural scale for relative tolerances.
    pub fn scale(&self) -> f64 {
        self.max() - self.min()
    }

    fn shifted(&self, node: [usize; 2], p: [i64; 2], sign: i64) -> Result<[usize; 2]> {
        let i = node[0] as i64 + sign * p[0];
        let j = node[1] as i64 + sign * p[1];
        let ok = i >= 0
            && (i as usize) < self.grid.n[0]
            && j >= 0
            && (j as usize) < self.grid.n[1];
        if !ok {
            return Err(Error::StencilOutOfRange { node, offset: p });
        }
        Ok([i as usize, j as usize])
    }

    /// Centered second difference along the lattice direction `p`:
    /// `(u(x + h p) - 2 u(x) + u(x - h p)) / (h |p|)^2`.
    ///
    /// Consistent with the second derivative along the unit vector p/|p| to
    /// O(h^2), and exact for quadratics.
    pub fn second_difference(&self, node: [usize; 2], offset: &Offset) -> Result<f64> {
        let fwd = self.shifted(node, offset.p, 1)?;
        let bwd = self.shifted(node, offset.p, -1)?;
        let delta = self.grid.h * offset.norm;
        Ok((self.value(fwd) - 2.0 * self.value(node) + self.value(bwd)) / (delta * delta))
    }

    /// Discrete smallest Hessian eigenvalue: the minimum directional second
    /// difference over the direction set.
    pub fn lambda_min(&self, node: [usize; 2], dirs: &DirectionSet) -> Result<f64> {
        let mut best = f64::INFINITY;
        for o in &dirs.offsets {
            best = best.min(self.second_difference(node, o)?);
        }
        Ok(best)
    }

    /// Discrete largest Hessian eigenvalue (maximum directional second
    /// difference over the direction set).
    pub fn lambda_max(&self, node: [usize; 2], dirs: &DirectionSet) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for o in &dirs.offsets {
            best = best.max(self.second_difference(node, o)?);
        }
        Ok(best)
    }

    /// The lattice direction attaining `lambda_min`, ties broken toward the
    /// lexicographically smallest offset.
    pub fn lambda_min_direction(
        &self,
        node: [usize; 2],
        dirs: &DirectionSet,
    ) -> Result<(f64, Offset)> {
        let mut best = f64::INFINITY;
        let mut arg = dirs.offsets[0];
        for o in &dirs.offsets {
            let d = self.second_difference(node, o)?;
            if d < best || (d == best && o.p < arg.p) {
                best = d;
                arg = *o;
            }
        }
        Ok((best, arg))
    }

    /// Centered first differences, interior nodes only.
    pub fn gradient_central(&self, node: [usize; 2]) -> Result<[f64; 2]> {
        if !self.grid.is_interior(node, 1) {
            return Err(Error::StencilOutOfRange { node, offset: [1, 1] });
        }
        let mut g = [0.0; 2];
        g[0] = (self.value([node[0] + 1, node[1]]) - self.value([node[0] - 1, node[1]]))
            / (2.0 * self.grid.h);
        if self.grid.dim == 2 {
            g[1] = (self.value([node[0], node[1] + 1]) - self.value([node[0], node[1] - 1]))
                / (2.0 * self.grid.h);
        }
        Ok(g)
    }

    /// Nodal derivative along `axis`: centered in the interior, one-sided at
    /// the two boundary layers (used only to feed interpolation).
    fn nodal_derivative(&self, node: [usize; 2], axis: usize) -> f64 {
        let n = self.grid.n[axis];
        let i = node[axis];
        let at = |k: usize| {
            let mut m = node;
            m[axis] = k;
            self.value(m)
        };
        let h = self.grid.h;
        if i == 0 {
            (at(1) - at(0)) / h
        } else if i + 1 == n {
            (at(n - 1) - at(n - 2)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        }
    }

    fn locate(&self, x: [f64; 2], extrap: Extrapolation) -> Result<([usize; 2], [f64; 2])> {
        if !self.grid.contains(x) && extrap == Extrapolation::Error {
            return Err(Error::OutOfBox { point: x });
        }
        let mut cell = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..self.grid.dim {
            let t = ((x[a] - self.grid.lower[a]) / self.grid.h)
                .clamp(0.0, (self.grid.n[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.grid.n[a] - 2);
            cell[a] = i;
            frac[a] = t - i as f64;
        }
        Ok((cell, frac))
    }

    /// Multilinear interpolation of nodal values.
    pub fn interp_value(&self, x: [f64; 2], extrap: Extrapolation) -> Result<f64> {
        let (c, f) = self.locate(x, extrap)?;
        if self.grid.dim == 1 {
            let v0 = self.value([c[0], 0]);
            let v1 = self.value([c[0] + 1, 0]);
            Ok(v0 + f[0] * (v1 - v0))
        } else {
            let v00 = self.value([c[0], c[1]]);
            let v10 = self.value([c[0] + 1, c[1]]);
            let v01 = self.value([c[0], c[1] + 1]);
            let v11 = self.value([c[0] + 1, c[1] + 1]);
            Ok(v00 * (1.0 - f[0]) * (1.0 - f[1])
                + v10 * f[0] * (1.0 - f[1])
                + v01 * (1.0 - f[0]) * f[1]
                + v11 * f[0] * f[1])
        }
    }

    /// Gradient at an arbitrary point: multilinear interpolation of the nodal
    /// central differences, componentwise.
    pub fn interp_gradient(&self, x: [f64; 2], extrap: Extrapolation) -> Result<[f64; 2]> {
        let (c, f) = self.locate(x, extrap)?;
        let mut g = [0.0; 2];
        for a in 0..self.grid.dim {
            if self.grid.dim == 1 {
                let d0 = self.nodal_derivative([c[0], 0], a);
                let d1 = self.nodal_derivative([c[0] + 1, 0], a);
                g[a] = d0 + f[0] * (d1 - d0);
            } else {
                let d00 = self.nodal_derivative([c[0], c[1]], a);
                let d10 = self.nodal_derivative([c[0] + 1, c[1]], a);
                let d01 = self.nodal_derivative([c[0], c[1] + 1], a);
                let d11 = self.nodal_derivative([c[0] + 1, c[1] + 1], a);
                g[a] = d00 * (1.0 - f[0]) * (1.0 - f[1])
                    + d10 * f[0] * (1.0 - f[1])
                    + d01 * (1.0 - f[0]) * f[1]
                    + d11 * f[0] * f[1];
            }
        }
        Ok(g)
    }
}
