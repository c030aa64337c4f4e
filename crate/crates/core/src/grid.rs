//! Tensor-product meshes on the half-cube [-1,1]^{n-1} x [0,1] and
//! finite-difference calculus on nodal scalar fields.
//!
//! Tangential axes are uniform on [-1,1]. The normal axis is graded toward
//! t = 0 by t_j = (j/M)^gamma with gamma >= 1, so that power-law boundary
//! behavior t^s is resolved with several mesh levels per decade of t.
//! Derivatives use second-order stencils: nonuniform 3-point central in the
//! interior, one-sided at boundary nodes (4-point for second derivatives).
//! Mixed second derivatives are composed first differences, symmetrized by
//! construction.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GridError {
    #[error("space dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("need at least 4 cells per axis, got {got} on the {axis} axis")]
    TooFewCells { axis: &'static str, got: usize },
    #[error("grading exponent must be >= 1 (got {0}); the mesh would coarsen toward t = 0")]
    BadGamma(f64),
    #[error("point coordinate {value} on axis {axis} lies outside the closed domain")]
    PointOutsideDomain { axis: usize, value: f64 },
    #[error("field has {got} values but the grid has {expected} nodes")]
    ValueCountMismatch { expected: usize, got: usize },
    #[error("non-finite value at node {index}")]
    NonFiniteValue { index: usize },
    #[error("field CSV line {line}: {message}")]
    BadCsv { line: usize, message: String },
    #[error("fields live on grids with different layouts")]
    LayoutMismatch,
}

/// Tensor-product grid. Axis order is (x1[, x2], t); the normal axis is
/// always last and node enumeration runs fastest along it, so flat order is
/// lexicographic by (tangential indices, normal index).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    gamma: f64,
    n_tangential: usize,
    m_normal: usize,
    axes: Vec<Vec<f64>>,
}

/// Serialized form: `{dim, gamma, N, M}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub gamma: f64,
    #[serde(rename = "N")]
    pub n_tangential: usize,
    #[serde(rename = "M")]
    pub m_normal: usize,
}

/// Build a grid with `n_tangential + 1` uniform nodes per tangential axis and
/// `m_normal + 1` graded nodes t_j = (j/M)^gamma on the normal axis.
pub fn make_grid(
    dim: usize,
    n_tangential: usize,
    m_normal: usize,
    gamma: f64,
) -> Result<Grid, GridError> {
    if dim != 2 && dim != 3 {
        return Err(GridError::BadDimension(dim));
    }
    if n_tangential < 4 {
        return Err(GridError::TooFewCells {
            axis: "tangential",
            got: n_tangential,
        });
    }
    if m_normal < 4 {
        return Err(GridError::TooFewCells {
            axis: "normal",
            got: m_normal,
        });
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(GridError::BadGamma(gamma));
    }
    let tangential: Vec<f64> = (0..=n_tangential)
        .map(|i| -1.0 + 2.0 * i as f64 / n_tangential as f64)
        .collect();
    let normal: Vec<f64> = (0..=m_normal)
        .map(|j| (j as f64 / m_normal as f64).powf(gamma))
        .collect();
    let mut axes = vec![tangential; dim - 1];
    axes.push(normal);
    Ok(Grid {
        dim,
        gamma,
        n_tangential,
        m_normal,
        axes,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Cells per tangential axis (N).
    pub fn n_tangential(&self) -> usize {
        self.n_tangential
    }

    /// Cells on the normal axis (M).
    pub fn m_normal(&self) -> usize {
        self.m_normal
    }

    pub fn axis_coords(&self, axis: usize) -> &[f64] {
        &self.axes[axis]
    }

    pub fn normal_coords(&self) -> &[f64] {
        &self.axes[self.dim - 1]
    }

    /// Smallest positive normal coordinate, t_1.
    pub fn t_min_positive(&self) -> f64 {
        self.axes[self.dim - 1][1]
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    /// Stride of each axis in the flat enumeration; the normal axis has
    /// stride 1.
    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.len()).product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dim);
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.axes[axis].len());
            flat = flat * self.axes[axis].len() + i;
        }
        flat
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for axis in (0..self.dim).rev() {
            let len = self.axes[axis].len();
            idx[axis] = flat % len;
            flat /= len;
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.axes[axis][i])
            .collect()
    }

    /// Normal index of a flat node (position along the t axis).
    pub fn normal_index(&self, flat: usize) -> usize {
        flat % self.axes[self.dim - 1].len()
    }

    /// True if the node lies on a lateral face (x_alpha = +-1) or the top
    /// face (t = 1). The bottom face t = 0 is reported separately because the
    /// solver treats it algebraically, not as Dirichlet data.
    pub fn on_lateral_or_top(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        for axis in 0..self.dim - 1 {
            if idx[axis] == 0 || idx[axis] + 1 == self.axes[axis].len() {
                return true;
            }
        }
        idx[self.dim - 1] + 1 == self.axes[self.dim - 1].len()
    }

    pub fn on_bottom(&self, flat: usize) -> bool {
        self.normal_index(flat) == 0
    }

    /// Layout equality: same axes to the bit. Fields from structurally equal
    /// grids are interoperable even if the grids are distinct allocations.
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.axes == other.axes
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            gamma: self.gamma,
            n_tangential: self.n_tangential,
            m_normal: self.m_normal,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.spec()).expect("grid spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Grid, GridError> {
        let spec: GridSpec = serde_json::from_str(text).map_err(|e| GridError::BadCsv {
            line: 0,
            message: format!("grid JSON: {e}"),
        })?;
        make_grid(spec.dim, spec.n_tangential, spec.m_normal, spec.gamma)
    }

    /// Flat indices of the normal line above the tangential multi-index.
    pub fn normal_line(&self, tang: &[usize]) -> Vec<usize> {
        debug_assert_eq!(tang.len(), self.dim - 1);
        let mut idx: Vec<usize> = tang.to_vec();
        idx.push(0);
        let base = self.flat_index(&idx);
        (0..self.axes[self.dim - 1].len()).map(|j| base + j).collect()
    }

    /// Tangential multi-index of the lattice point nearest to x' (Euclidean,
    /// resolved per axis since the lattice is a product).
    pub fn nearest_tangential_index(&self, x_tangential: &[f64]) -> Result<Vec<usize>, GridError> {
        if x_tangential.len() != self.dim - 1 {
            return Err(GridError::LayoutMismatch);
        }
        let mut out = Vec::with_capacity(self.dim - 1);
        for (axis, &x) in x_tangential.iter().enumerate() {
            let coords = &self.axes[axis];
            if x < coords[0] - 1e-12 || x > coords[coords.len() - 1] + 1e-12 {
                return Err(GridError::PointOutsideDomain { axis, value: x });
            }
            let i = coords
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    (*a - x).abs().partial_cmp(&(*b - x).abs()).expect("finite")
                })
                .map(|(i, _)| i)
                .expect("non-empty axis");
            out.push(i);
        }
        Ok(out)
    }
}

/// One real value per grid node, enumerated in flat order.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<ScalarField, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::ValueCountMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue { index });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<ScalarField, GridError> {
        let values: Vec<f64> = (0..grid.node_count()).map(|i| f(&grid.point(i))).collect();
        ScalarField::from_values(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> ScalarField {
        let n = grid.node_count();
        ScalarField {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm distance to another field on the same layout.
    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64, GridError> {
        if !self.grid.same_layout(&other.grid) {
            return Err(GridError::LayoutMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// CSV with one row per node: coordinates then value, in flat order
    /// (lexicographic by tangential indices, then normal index).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.grid.dim == 3 {
            out.push_str("x1,x2,t,value\n");
        } else {
            out.push_str("x1,t,value\n");
        }
        for (i, v) in self.values.iter().enumerate() {
            let p = self.grid.point(i);
            for c in &p {
                let _ = write!(out, "{c:.17e},");
            }
            let _ = writeln!(out, "{v:.17e}");
        }
        out
    }

    /// Parse a field written by [`ScalarField::to_csv`] back onto `grid`.
    /// Coordinates in the file are cross-checked against the grid.
    pub fn from_csv(grid: Arc<Grid>, text: &str) -> Result<ScalarField, GridError> {
        let mut values = Vec::with_capacity(grid.node_count());
        let mut node = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != grid.dim + 1 {
                return Err(GridError::BadCsv {
                    line: lineno + 1,
                    message: format!("expected {} columns, got {}", grid.dim + 1, cols.len()),
                });
            }
            if node >= grid.node_count() {
                return Err(GridError::BadCsv {
                    line: lineno + 1,
                    message: "more rows than grid nodes".into(),
                });
            }
            let parse = |s: &str| -> Result<f64, GridError> {
                s.trim().parse().map_err(|_| GridError::BadCsv {
                    line: lineno + 1,
                    message: format!("bad number `{s}`"),
                })
            };
            let point = grid.point(node);
            for (axis, &want) in point.iter().enumerate() {
                let got = parse(cols[axis])?;
                if (got - want).abs() > 1e-9 * (1.0 + want.abs()) {
                    return Err(GridError::BadCsv {
                        line: lineno + 1,
                        message: format!(
                            "coordinate {got} on axis {axis} does not match grid node {want}"
                        ),
                    });
                }
            }
            values.push(parse(cols[grid.dim])?);
            node += 1;
        }
        ScalarField::from_values(grid, values)
    }
}

// ---------------------------------------------------------------------------
// Finite-difference weights (Fornberg recurrence)
// ---------------------------------------------------------------------------

/// Weights of the order-`m` derivative at `x0` for the stencil nodes `xs`.
/// Exact for polynomials of degree < xs.len().
pub fn fd_weights(xs: &[f64], x0: f64, m: usize) -> Vec<f64> {
    let n = xs.len();
    assert!(m < n, "need more nodes than the derivative order");
    let mut c = vec![vec![0.0; m + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// Per-position 1D stencil along one axis: node offsets (relative to the
/// evaluation index) and weights.
#[derive(Debug, Clone)]
pub struct AxisStencil {
    pub offsets: Vec<isize>,
    pub weights: Vec<f64>,
}

/// Stencils for the order-`m` derivative at every position of `coords`.
/// Interior positions use 3-point centered stencils; endpoints use one-sided
/// stencils of 3 points for m = 1 and 4 points for m = 2 (both second order).
pub fn axis_stencils(coords: &[f64], m: usize) -> Vec<AxisStencil> {
    let len = coords.len();
    let width = if m == 2 { 4 } else { 3 };
    assert!(len >= width, "axis too short for order-{m} stencils");
    (0..len)
        .map(|i| {
            let (start, count) = if i == 0 {
                (0usize, width)
            } else if i + 1 == len {
                (len - width, width)
            } else {
                (i - 1, 3)
            };
            let xs = &coords[start..start + count];
            let weights = fd_weights(xs, coords[i], m);
            let offsets = (0..count).map(|k| (start + k) as isize - i as isize).collect();
            AxisStencil { offsets, weights }
        })
        .collect()
}

fn apply_axis_derivative(grid: &Grid, values: &[f64], axis: usize, m: usize) -> Vec<f64> {
    let coords = grid.axis_coords(axis);
    let stencils = axis_stencils(coords, m);
    let stride = grid.stride(axis) as isize;
    let len = coords.len();
    let mut out = vec![0.0; values.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let pos = flat / grid.stride(axis) % len;
        let st = &stencils[pos];
        let mut acc = 0.0;
        for (off, w) in st.offsets.iter().zip(&st.weights) {
            let neighbor = (flat as isize + off * stride) as usize;
            acc += w * values[neighbor];
        }
        *slot = acc;
    }
    out
}

/// All first derivatives of a nodal field, one component per axis.
pub fn fd_gradient(field: &ScalarField) -> Vec<ScalarField> {
    let grid = field.grid();
    (0..grid.dim())
        .map(|axis| ScalarField {
            grid: grid.clone(),
            values: apply_axis_derivative(grid, field.values(), axis, 1),
        })
        .collect()
}

/// Full symmetric Hessian: `result[i][j]` is the (i,j) second derivative.
/// Diagonal entries are direct 3-point (interior) second-derivative stencils;
/// off-diagonal entries compose the two first-derivative passes and are
/// stored symmetrically.
pub fn fd_hessian(field: &ScalarField) -> Vec<Vec<ScalarField>> {
    let grid = field.grid();
    let dim = grid.dim();
    let mut result: Vec<Vec<Option<ScalarField>>> = vec![(0..dim).map(|_| None).collect(); dim];
    for i in 0..dim {
        result[i][i] = Some(ScalarField {
            grid: grid.clone(),
            values: apply_axis_derivative(grid, field.values(), i, 2),
        });
        for j in i + 1..dim {
            let dj = apply_axis_derivative(grid, field.values(), j, 1);
            let dij = apply_axis_derivative(grid, &dj, i, 1);
            let f = ScalarField {
                grid: grid.clone(),
                values: dij,
            };
            result[i][j] = Some(f.clone());
            result[j][i] = Some(f);
        }
    }
    result
        .into_iter()
        .map(|row| row.into_iter().map(|f| f.expect("filled")).collect())
        .collect()
}

/// Multilinear interpolation at a point of the closed domain.
pub fn interpolate(field: &ScalarField, point: &[f64]) -> Result<f64, GridError> {
    let grid = field.grid();
    if point.len() != grid.dim() {
        return Err(GridError::LayoutMismatch);
    }
    // Per axis: containing cell index and barycentric weight of its right end.
    let mut cell = Vec::with_capacity(grid.dim());
    for (axis, &x) in point.iter().enumerate() {
        let coords = grid.axis_coords(axis);
        let lo = coords[0];
        let hi = coords[coords.len() - 1];
        if x < lo - 1e-12 || x > hi + 1e-12 {
            return Err(GridError::PointOutsideDomain { axis, value: x });
        }
        let x = x.clamp(lo, hi);
        // Rightmost cell whose left end is <= x; the last node maps into the
        // final cell with weight 1.
        let mut i = coords.partition_point(|&c| c <= x);
        i = i.clamp(1, coords.len() - 1);
        let (a, b) = (coords[i - 1], coords[i]);
        cell.push((i - 1, (x - a) / (b - a)));
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << grid.dim()) {
        let mut weight = 1.0;
        let mut idx = Vec::with_capacity(grid.dim());
        for (axis, &(i0, w)) in cell.iter().enumerate() {
            if corner >> axis & 1 == 1 {
                weight *= w;
                idx.push(i0 + 1);
            } else {
                weight *= 1.0 - w;
                idx.push(i0);
            }
        }
        if weight != 0.0 {
            acc += weight * field.get(grid.flat_index(&idx));
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, nt: usize, m: usize, gamma: f64) -> Arc<Grid> {
        Arc::new(make_grid(n, nt, m, gamma).unwrap())
    }

    #[test]
    fn make_grid_examples() {
        let g = make_grid(2, 4, 4, 1.0).unwrap();
        assert_eq!(g.normal_coords(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(2, 4, 4, 2.0).unwrap();
        assert_eq!(g.normal_coords(), &[0.0, 0.0625, 0.25, 0.5625, 1.0]);
        assert!(make_grid(2, 4, 0, 1.0).is_err());
        assert!(make_grid(4, 4, 4, 1.0).is_err());
        assert!(make_grid(2, 4, 4, 0.5).is_err());
        assert_eq!(g.node_count(), 25);
        let g3 = make_grid(3, 4, 8, 2.0).unwrap();
        assert_eq!(g3.node_count(), 5 * 5 * 9);
    }

    #[test]
    fn grid_invariants() {
        for gamma in [1.0, 1.5, 2.0, 3.0] {
            let g = make_grid(2, 6, 10, gamma).unwrap();
            let t = g.normal_coords();
            assert_eq!(t[0], 0.0);
            assert_eq!(t[t.len() - 1], 1.0);
            assert!(t.windows(2).all(|w| w[1] > w[0]));
            for axis in 0..g.dim() - 1 {
                let x = g.axis_coords(axis);
                assert_eq!(x[0], -1.0);
                assert_eq!(x[x.len() - 1], 1.0);
                assert!(x.windows(2).all(|w| w[1] > w[0]));
            }
        }
        // gamma = 1 gives a uniform normal mesh.
        let g = make_grid(2, 4, 64, 1.0).unwrap();
        let t = g.normal_coords();
        let h = 1.0 / 64.0;
        for w in t.windows(2) {
            assert!((w[1] - w[0] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_order_is_lexicographic_tangential_then_normal() {
        let g = grid(3, 4, 4, 1.0);
        // Walk flat order and check the multi-index increases lexicographically
        // with the normal index fastest.
        let mut prev: Option<Vec<usize>> = None;
        for flat in 0..g.node_count() {
            let idx = g.multi_index(flat);
            assert_eq!(g.flat_index(&idx), flat);
            if let Some(p) = prev {
                assert!(idx > p, "order violated: {p:?} then {idx:?}");
            }
            prev = Some(idx);
        }
        // Node 1 differs from node 0 only in the normal index.
        assert_eq!(g.multi_index(1), vec![0, 0, 1]);
    }

    #[test]
    fn fornberg_weights_match_uniform_stencils() {
        let w = fd_weights(&[-1.0, 0.0, 1.0], 0.0, 1);
        assert!((w[0] + 0.5).abs() < 1e-14 && w[1].abs() < 1e-14 && (w[2] - 0.5).abs() < 1e-14);
        let w = fd_weights(&[-1.0, 0.0, 1.0], 0.0, 2);
        assert!((w[0] - 1.0).abs() < 1e-14 && (w[1] + 2.0).abs() < 1e-14 && (w[2] - 1.0).abs() < 1e-14);
        // One-sided first derivative at the left end of a uniform mesh:
        // -3/2, 2, -1/2.
        let w = fd_weights(&[0.0, 1.0, 2.0], 0.0, 1);
        assert!((w[0] + 1.5).abs() < 1e-14 && (w[1] - 2.0).abs() < 1e-14 && (w[2] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn gradient_examples() {
        let g = grid(2, 8, 8, 1.0);
        let c7 = ScalarField::from_fn(g.clone(), |_| 7.0).unwrap();
        for comp in fd_gradient(&c7) {
            assert!(comp.sup_norm() < 1e-12);
        }
        let lin = ScalarField::from_fn(g.clone(), |p| p[1]).unwrap();
        let grad = fd_gradient(&lin);
        for &v in grad[1].values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // t^2 on a graded mesh: the nonuniform 3-point stencil is exact on
        // quadratics.
        let g2 = grid(2, 4, 16, 2.0);
        let sq = ScalarField::from_fn(g2.clone(), |p| p[1] * p[1]).unwrap();
        let grad = fd_gradient(&sq);
        for (i, &v) in grad[1].values().iter().enumerate() {
            let t = g2.point(i)[1];
            assert!((v - 2.0 * t).abs() < 1e-10, "node {i}: {v} vs {}", 2.0 * t);
        }
    }

    #[test]
    fn hessian_examples() {
        let g = grid(2, 8, 8, 1.0);
        let bilinear = ScalarField::from_fn(g.clone(), |p| p[0] * p[1]).unwrap();
        let h = fd_hessian(&bilinear);
        for &v in h[0][1].values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
        let c = ScalarField::from_fn(g.clone(), |_| 3.0).unwrap();
        let h = fd_hessian(&c);
        for row in &h {
            for entry in row {
                assert!(entry.sup_norm() < 1e-10);
            }
        }
        let g2 = grid(2, 4, 16, 2.0);
        let sq = ScalarField::from_fn(g2.clone(), |p| p[1] * p[1]).unwrap();
        let h = fd_hessian(&sq);
        for &v in h[1][1].values() {
            assert!((v - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratics_are_reproduced_exactly() {
        // Total degree <= 2 with every cross term, on a graded mesh.
        let g = grid(3, 5, 7, 1.7);
        let f = |p: &[f64]| {
            1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + 0.25 * p[0] * p[0] - 0.75 * p[1] * p[1]
                + 2.0 * p[2] * p[2]
                + 1.5 * p[0] * p[1]
                - 0.5 * p[0] * p[2]
                + 3.0 * p[1] * p[2]
        };
        let field = ScalarField::from_fn(g.clone(), f).unwrap();
        let grad = fd_gradient(&field);
        let hess = fd_hessian(&field);
        let want_hess = [
            [0.5, 1.5, -0.5],
            [1.5, -1.5, 3.0],
            [-0.5, 3.0, 4.0],
        ];
        for flat in 0..g.node_count() {
            let p = g.point(flat);
            let want_grad = [
                2.0 + 0.5 * p[0] + 1.5 * p[1] - 0.5 * p[2],
                -1.0 - 1.5 * p[1] + 1.5 * p[0] + 3.0 * p[2],
                0.5 + 4.0 * p[2] - 0.5 * p[0] + 3.0 * p[1],
            ];
            for axis in 0..3 {
                assert!(
                    (grad[axis].get(flat) - want_grad[axis]).abs() < 1e-9,
                    "gradient axis {axis} at node {flat}"
                );
                for other in 0..3 {
                    assert!(
                        (hess[axis][other].get(flat) - want_hess[axis][other]).abs() < 1e-9,
                        "hessian ({axis},{other}) at node {flat}"
                    );
                }
            }
        }
    }

    #[test]
    fn refinement_is_second_order() {
        // Smooth non-polynomial field; max interior stencil error must drop
        // by ~4 when M doubles.
        for gamma in [1.0, 2.0] {
            let mut errs = Vec::new();
            for m in [32usize, 64] {
                let g = grid(2, 8, m, gamma);
                let f = ScalarField::from_fn(g.clone(), |p| (p[1] + 0.3).sin() * (p[0]).exp())
                    .unwrap();
                let hess = fd_hessian(&f);
                let mut worst = 0.0f64;
                for flat in 0..g.node_count() {
                    let idx = g.multi_index(flat);
                    let interior = (1..g.dim()).all(|a| {
                        idx[a] > 0 && idx[a] + 1 < g.axis_coords(a).len()
                    }) && idx[0] > 0
                        && idx[0] + 1 < g.axis_coords(0).len();
                    if !interior {
                        continue;
                    }
                    let p = g.point(flat);
                    let exact = -(p[1] + 0.3).sin() * p[0].exp();
                    worst = worst.max((hess[1][1].get(flat) - exact).abs());
                }
                errs.push(worst);
            }
            let ratio = errs[0] / errs[1];
            assert!(
                (3.5..=4.5).contains(&ratio),
                "gamma {gamma}: refinement ratio {ratio}"
            );
        }
    }

    #[test]
    fn interpolation() {
        let g = grid(2, 4, 4, 1.0);
        let f = ScalarField::from_fn(g.clone(), |p| p[0]).unwrap();
        // Cell center: mean of the two x1 corners (-1 and -0.5).
        let v = interpolate(&f, &[-0.75, 0.125]).unwrap();
        assert!((v + 0.75).abs() < 1e-14);
        // Nodal point: exact nodal value.
        let v = interpolate(&f, &[0.5, 0.25]).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        // Linear reproduction on the normal axis.
        let ft = ScalarField::from_fn(g.clone(), |p| p[1]).unwrap();
        let v = interpolate(&ft, &[0.3, 0.3]).unwrap();
        assert!((v - 0.3).abs() < 1e-14);
        // Domain boundary is inclusive; beyond it is an error.
        assert!(interpolate(&f, &[1.0, 1.0]).is_ok());
        assert!(interpolate(&f, &[1.1, 0.5]).is_err());
        assert!(interpolate(&f, &[0.0, -0.1]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(2, 4, 4, 2.0);
        let f = ScalarField::from_fn(g.clone(), |p| p[0] + 10.0 * p[1]).unwrap();
        let csv = f.to_csv();
        assert!(csv.starts_with("x1,t,value\n"));
        assert_eq!(csv.lines().count(), 1 + g.node_count());
        let back = ScalarField::from_csv(g.clone(), &csv).unwrap();
        assert_eq!(back.values(), f.values());
        // Mismatched coordinates are rejected.
        let other = grid(2, 4, 4, 1.0);
        assert!(ScalarField::from_csv(other, &csv).is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let g = make_grid(3, 6, 12, 2.5).unwrap();
        let json = g.to_json();
        let back = Grid::from_json(&json).unwrap();
        assert!(g.same_layout(&back));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["dim"], 3);
        assert_eq!(v["N"], 6);
        assert_eq!(v["M"], 12);
        assert!((v["gamma"].as_f64().unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn field_validation() {
        let g = grid(2, 4, 4, 1.0);
        assert!(ScalarField::from_values(g.clone(), vec![0.0; 3]).is_err());
        let mut vals = vec![0.0; g.node_count()];
        vals[7] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(g.clone(), vals),
            Err(GridError::NonFiniteValue { index: 7 })
        ));
    }
}
