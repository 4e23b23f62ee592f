//! Periodic uniform grids on the unit torus and the finite-difference
//! operators used by every solver in the crate.
//!
//! Nodes are stored with axis 0 varying fastest. All index arithmetic
//! wraps modulo `n`. The forward difference and the backward-difference
//! divergence form an adjoint pair under the discrete inner product
//! `<f, g> = h^d * sum(f * g)`, and the Laplacian is their composition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if n < MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "n = {n} is too coarse (need at least {MIN_POINTS} points per axis)"
            )));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} is unsupported (only 1 or 2)"
            )));
        }
        Ok(Grid {
            dim,
            n,
            h: 1.0 / n as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Total number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d` of a single node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    /// Index of the node along `axis` of node `idx`.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.n
    }

    /// Neighbor of `idx` shifted by `offset` along `axis`, with periodic wrap.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let i = self.axis_index(idx, axis) as isize;
        let j = (i + offset).rem_euclid(self.n as isize) as usize;
        idx - i as usize * stride + j * stride
    }

    /// Coordinates of node `idx`; unused trailing components are zero.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let mut x = [0.0; 2];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.axis_index(idx, axis) as f64 * self.h;
        }
        x
    }
}

/// Real values sampled on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "field value at node {i} is not finite"
            )));
        }
        Ok(Field { grid, values })
    }

    /// Construction without the finiteness scan, for internal kernels that
    /// check frames separately.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn integrate(&self) -> f64 {
        integrate(self)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Field, beta: f64) -> Result<Field> {
        same_grid(&self.grid, &other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(Field {
            grid: self.grid,
            values,
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.combine(1.0, other, -1.0)
    }

    pub fn add_constant(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    /// Discrete inner product `h^d * sum(f * g)`.
    pub fn inner(&self, other: &Field) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.grid.cell_volume() * dot(&self.values, &other.values))
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        norm(self, kind)
    }

    pub fn distance_sup(&self, other: &Field) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// One array per axis, each sampled on every node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn from_components(grid: Grid, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.len() != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "vector field has {} components on a {}-dimensional grid",
                components.len(),
                grid.dim()
            )));
        }
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::InvalidArgument(
                    "vector field component has the wrong length".into(),
                ));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(
                    "vector field component is not finite".into(),
                ));
            }
        }
        Ok(VectorField { grid, components })
    }

    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            components: vec![vec![0.0; grid.len()]; grid.dim()],
        }
    }

    pub fn constant(grid: Grid, c: &[f64]) -> Self {
        VectorField {
            grid,
            components: (0..grid.dim()).map(|a| vec![c[a]; grid.len()]).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Value of the vector at node `idx`.
    pub fn at(&self, idx: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for (a, c) in self.components.iter().enumerate() {
            v[a] = c[idx];
        }
        v
    }

    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        let s: f64 = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| dot(a, b))
            .sum();
        Ok(self.grid.cell_volume() * s)
    }

    /// Largest Euclidean length over all nodes.
    pub fn sup_magnitude(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| c[i] * c[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).map(f64::sqrt).unwrap_or(0.0)
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField> {
        same_grid(&self.grid, &other.grid)?;
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Ok(VectorField {
            grid: self.grid,
            components,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Sup,
    L1,
    L2,
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn build_grid(n: usize, dim: usize) -> Result<Grid> {
    Grid::new(n, dim)
}

/// Forward and backward one-sided differences along every axis.
pub fn gradient_pair(f: &Field) -> (VectorField, VectorField) {
    let g = f.grid;
    let inv_h = 1.0 / g.h;
    let u = &f.values;
    let mut fwd = Vec::with_capacity(g.dim);
    let mut bwd = Vec::with_capacity(g.dim);
    for axis in 0..g.dim {
        let mut fa = vec![0.0; g.len()];
        let mut ba = vec![0.0; g.len()];
        for i in 0..g.len() {
            let ip = g.neighbor(i, axis, 1);
            let im = g.neighbor(i, axis, -1);
            fa[i] = (u[ip] - u[i]) * inv_h;
            ba[i] = (u[i] - u[im]) * inv_h;
        }
        fwd.push(fa);
        bwd.push(ba);
    }
    (
        VectorField {
            grid: g,
            components: fwd,
        },
        VectorField {
            grid: g,
            components: bwd,
        },
    )
}

/// Forward-difference gradient, the first half of [`gradient_pair`].
pub fn gradient(f: &Field) -> VectorField {
    gradient_pair(f).0
}

/// Periodic 3-point (1D) or 5-point (2D) Laplacian.
pub fn laplacian(f: &Field) -> Field {
    let g = f.grid;
    let inv_h2 = 1.0 / (g.h * g.h);
    let u = &f.values;
    let mut out = vec![0.0; g.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for axis in 0..g.dim {
            s += u[g.neighbor(i, axis, 1)] - 2.0 * u[i] + u[g.neighbor(i, axis, -1)];
        }
        *o = s * inv_h2;
    }
    Field::from_raw(g, out)
}

/// Backward-difference divergence: the negative adjoint of [`gradient`].
pub fn divergence(v: &VectorField) -> Field {
    let g = v.grid;
    let inv_h = 1.0 / g.h;
    let mut out = vec![0.0; g.len()];
    for (axis, c) in v.components.iter().enumerate() {
        for (i, o) in out.iter_mut().enumerate() {
            *o += (c[i] - c[g.neighbor(i, axis, -1)]) * inv_h;
        }
    }
    Field::from_raw(g, out)
}

pub fn integrate(f: &Field) -> f64 {
    f.grid.cell_volume() * f.values.iter().sum::<f64>()
}

pub fn norm(f: &Field, kind: NormKind) -> f64 {
    let vol = f.grid.cell_volume();
    match kind {
        NormKind::Sup => f.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        NormKind::L1 => vol * f.values.iter().map(|v| v.abs()).sum::<f64>(),
        NormKind::L2 => (vol * f.values.iter().map(|v| v * v).sum::<f64>()).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_sizes() {
        let g = Grid::new(8, 1).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.spacing(), 0.125);
        assert_eq!(Grid::new(16, 2).unwrap().len(), 256);
        assert!(Grid::new(3, 1).is_err());
        assert!(Grid::new(8, 3).is_err());
    }

    #[test]
    fn neighbors_wrap() {
        let g = Grid::new(4, 2).unwrap();
        // node (3, 0) -> index 3
        assert_eq!(g.neighbor(3, 0, 1), 0);
        assert_eq!(g.neighbor(0, 0, -1), 3);
        assert_eq!(g.neighbor(0, 1, -1), 12);
        assert_eq!(g.coords(13), [0.25, 0.75]);
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let g = Grid::new(16, 2).unwrap();
        let f = Field::constant(g, 3.5);
        let (fw, bw) = gradient_pair(&f);
        assert_eq!(fw.sup_magnitude(), 0.0);
        assert_eq!(bw.sup_magnitude(), 0.0);
        assert_eq!(laplacian(&f).norm(NormKind::Sup), 0.0);
        let v = VectorField::constant(g, &[1.0, -2.0]);
        assert_eq!(divergence(&v).norm(NormKind::Sup), 0.0);
    }

    #[test]
    fn ramp_gradient_is_one_away_from_wrap() {
        let g = Grid::new(16, 1).unwrap();
        let f = Field::from_fn(g, |x| x[0]);
        let (fw, _) = gradient_pair(&f);
        for i in 0..15 {
            assert!((fw.component(0)[i] - 1.0).abs() < 1e-12);
        }
        // x_15 = 15/16 jumps back to 0
        assert!((fw.component(0)[15] - (-15.0)).abs() < 1e-12);
    }

    #[test]
    fn sine_derivative_first_order() {
        let g = Grid::new(256, 1).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        let (fw, _) = gradient_pair(&f);
        let err = (fw.component(0)[0] - 2.0 * PI).abs();
        // forward difference error ~ h * f''/2 + ..., f''(0) = 0 so third-order term dominates
        assert!(err < 2.0 * PI * g.spacing(), "err {err}");
    }

    #[test]
    fn cosine_is_laplacian_eigenfunction() {
        let g = Grid::new(256, 1).unwrap();
        let f = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        let lap = laplacian(&f);
        let exact = f.scale(-4.0 * PI * PI);
        let err = lap.distance_sup(&exact).unwrap();
        // truncation error 4 pi^2 * (pi h)^2 / 3
        let bound = 4.0 * PI * PI * (PI * g.spacing()).powi(2) / 3.0 * 1.01;
        assert!(err < bound, "err {err} bound {bound}");
    }

    #[test]
    fn quadrature_and_norms() {
        let g = Grid::new(128, 1).unwrap();
        assert!((Field::constant(g, 1.0).integrate() - 1.0).abs() < 1e-15);
        let s = Field::from_fn(g, |x| (2.0 * PI * x[0]).sin());
        assert!(s.integrate().abs() < 1e-14);
        let c = Field::from_fn(g, |x| (2.0 * PI * x[0]).cos());
        assert!((c.norm(NormKind::L2) - 0.5f64.sqrt()).abs() < 1e-14);
        assert_eq!(Field::constant(g, -2.0).norm(NormKind::Sup), 2.0);
        for k in [NormKind::Sup, NormKind::L1, NormKind::L2] {
            assert_eq!(Field::zeros(g).norm(k), 0.0);
        }
        let m0 = Field::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
        let hand: f64 = m0.values().iter().map(|v| v / 128.0).sum();
        assert!((m0.integrate() - hand).abs() < 1e-15);
    }

    #[test]
    fn laplacian_is_div_of_grad() {
        let g = Grid::new(12, 2).unwrap();
        let f = Field::from_fn(g, |x| (x[0] * 7.0).sin() * (x[1] * 3.0 + 1.0).cos());
        let composed = divergence(&gradient(&f));
        assert!(composed.distance_sup(&laplacian(&f)).unwrap() < 1e-9);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = Field::zeros(Grid::new(8, 1).unwrap());
        let b = Field::zeros(Grid::new(16, 1).unwrap());
        assert!(matches!(a.inner(&b), Err(Error::GridMismatch)));
    }

    fn arb_field(n: usize, d: usize) -> impl Strategy<Value = Field> {
        let g = Grid::new(n, d).unwrap();
        prop::collection::vec(-10.0f64..10.0, g.len())
            .prop_map(move |v| Field::from_values(g, v).unwrap())
    }

    fn arb_vector(n: usize, d: usize) -> impl Strategy<Value = VectorField> {
        let g = Grid::new(n, d).unwrap();
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, g.len()), d)
            .prop_map(move |c| VectorField::from_components(g, c).unwrap())
    }

    proptest! {
        #[test]
        fn divergence_is_negative_adjoint_1d(v in arb_vector(32, 1), f in arb_field(32, 1)) {
            let lhs = divergence(&v).inner(&f).unwrap();
            let rhs = v.inner(&gradient(&f)).unwrap();
            let scale = v.l2_norm() * f.norm(NormKind::L2);
            prop_assert!((lhs + rhs).abs() <= 1e-12 * scale);
            prop_assert!(divergence(&v).integrate().abs() <= 1e-13 * v.l2_norm().max(1.0));
        }

        #[test]
        fn divergence_is_negative_adjoint_2d(v in arb_vector(8, 2), f in arb_field(8, 2)) {
            let lhs = divergence(&v).inner(&f).unwrap();
            let rhs = v.inner(&gradient(&f)).unwrap();
            let scale = v.l2_norm() * f.norm(NormKind::L2);
            prop_assert!((lhs + rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn laplacian_telescopes(f in arb_field(64, 1)) {
            let scale = f.norm(NormKind::Sup) / (f.grid().spacing() * f.grid().spacing());
            prop_assert!(laplacian(&f).integrate().abs() <= 1e-13 * scale.max(1.0));
        }

        #[test]
        fn operators_are_linear(f in arb_field(16, 2), g in arb_field(16, 2), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let combo = f.combine(a, &g, b).unwrap();
            let lhs = laplacian(&combo);
            let rhs = laplacian(&f).combine(a, &laplacian(&g), b).unwrap();
            let scale = lhs.norm(NormKind::Sup).max(1.0);
            prop_assert!(lhs.distance_sup(&rhs).unwrap() <= 1e-12 * scale);
        }
    }
}
