//! Sparse periodic stencil operators and the linear solvers behind the
//! implicit time steps.
//!
//! In 1D every operator is cyclic tridiagonal and is solved directly with
//! a Sherman-Morrison corrected Thomas sweep. In 2D the 5-point operators
//! are generally nonsymmetric (upwind transport) and go through BiCGSTAB.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const KRYLOV_TOL: f64 = 1e-12;
const KRYLOV_MAX_ITERS: usize = 5000;

/// Linear operator with a `2d + 1` point periodic stencil.
///
/// Slot 0 of every node is the diagonal; slot `1 + 2a` couples to the
/// neighbor at `-1` along axis `a`, slot `2 + 2a` to the one at `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilOp {
    grid: Grid,
    width: usize,
    coef: Vec<f64>,
}

impl StencilOp {
    pub fn zeros(grid: Grid) -> Self {
        let width = 2 * grid.dim() + 1;
        StencilOp {
            grid,
            width,
            coef: vec![0.0; width * grid.len()],
        }
    }

    pub fn identity(grid: Grid, scale: f64) -> Self {
        let mut op = Self::zeros(grid);
        for i in 0..grid.len() {
            op.coef[i * op.width] = scale;
        }
        op
    }

    /// `-kappa * Laplacian`.
    pub fn neg_laplacian(grid: Grid, kappa: f64) -> Self {
        let mut op = Self::zeros(grid);
        let c = kappa / (grid.spacing() * grid.spacing());
        for i in 0..grid.len() {
            let row = &mut op.coef[i * op.width..(i + 1) * op.width];
            row[0] = 2.0 * c * grid.dim() as f64;
            for s in row.iter_mut().skip(1) {
                *s = -c;
            }
        }
        op
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn diag_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coef[i * self.width]
    }

    /// Coefficient coupling node `i` to its neighbor `offset = ±1` along `axis`.
    #[inline]
    pub fn off_mut(&mut self, i: usize, axis: usize, offset: isize) -> &mut f64 {
        let slot = if offset < 0 {
            1 + 2 * axis
        } else {
            2 + 2 * axis
        };
        &mut self.coef[i * self.width + slot]
    }

    pub fn off(&self, i: usize, axis: usize, offset: isize) -> f64 {
        let slot = if offset < 0 {
            1 + 2 * axis
        } else {
            2 + 2 * axis
        };
        self.coef[i * self.width + slot]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.coef[i * self.width]
    }

    pub fn add_scaled(&mut self, other: &StencilOp, scale: f64) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.coef.iter_mut().zip(&other.coef) {
            *a += scale * b;
        }
    }

    pub fn add_diagonal(&mut self, d: &[f64]) {
        for (i, v) in d.iter().enumerate() {
            self.coef[i * self.width] += v;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut y = vec![0.0; g.len()];
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.coef[i * self.width..(i + 1) * self.width];
            let mut s = row[0] * x[i];
            for axis in 0..g.dim() {
                s += row[1 + 2 * axis] * x[g.neighbor(i, axis, -1)];
                s += row[2 + 2 * axis] * x[g.neighbor(i, axis, 1)];
            }
            *yi = s;
        }
        y
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut y = vec![0.0; g.len()];
        for i in 0..g.len() {
            let row = &self.coef[i * self.width..(i + 1) * self.width];
            y[i] += row[0] * x[i];
            for axis in 0..g.dim() {
                y[g.neighbor(i, axis, -1)] += row[1 + 2 * axis] * x[i];
                y[g.neighbor(i, axis, 1)] += row[2 + 2 * axis] * x[i];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let g = &self.grid;
        let n = g.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] += self.diag(i);
            for axis in 0..g.dim() {
                m[(i, g.neighbor(i, axis, -1))] += self.off(i, axis, -1);
                m[(i, g.neighbor(i, axis, 1))] += self.off(i, axis, 1);
            }
        }
        m
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if self.grid.dim() == 1 {
            let n = self.grid.len();
            let mut lower = vec![0.0; n];
            let mut main = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 0..n {
                lower[i] = self.off(i, 0, -1);
                main[i] = self.diag(i);
                upper[i] = self.off(i, 0, 1);
            }
            solve_cyclic_tridiagonal(&lower, &main, &upper, rhs)
        } else {
            bicgstab(self, rhs, KRYLOV_TOL)
        }
    }
}

/// Thomas algorithm for a non-periodic tridiagonal system.
///
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(
    lower: &[f64],
    main: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = main.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = main[0];
    if beta == 0.0 {
        return Err(Error::LinearSolve("zero pivot in tridiagonal sweep".into()));
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = main[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::LinearSolve("zero pivot in tridiagonal sweep".into()));
        }
        c[i] = if i + 1 < n { upper[i] / beta } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Cyclic tridiagonal solve: row `i` reads
/// `lower[i] x[i-1] + main[i] x[i] + upper[i] x[i+1] = rhs[i]` with wrap.
pub fn solve_cyclic_tridiagonal(
    lower: &[f64],
    main: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = main.len();
    if n < 3 {
        return Err(Error::LinearSolve("cyclic system needs n >= 3".into()));
    }
    let alpha = upper[n - 1]; // couples row n-1 to x[0]
    let beta = lower[0]; // couples row 0 to x[n-1]
    let gamma = -main[0];
    let mut bb = main.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &bb, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &bb, upper, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    let out: Vec<f64> = x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve(
            "cyclic tridiagonal solve produced non-finite values".into(),
        ));
    }
    Ok(out)
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn bicgstab(op: &StencilOp, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = rhs.len();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = op.diag(i);
            if d != 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&inv_diag).map(|(a, b)| a * b).collect() };
    let dot = crate::grid::dot;
    let rhs_norm = dot(rhs, rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = precond(rhs);
    let ax = op.apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..KRYLOV_MAX_ITERS {
        if dot(&r, &r).sqrt() <= tol * rhs_norm {
            return Ok(x);
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (rho = 0)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = precond(&p);
        v = op.apply(&y);
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if dot(&s, &s).sqrt() <= tol * rhs_norm {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        let z = precond(&s);
        let t = op.apply(&z);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if omega == 0.0 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (omega = 0)".into()));
        }
    }
    Err(Error::LinearSolve("BiCGSTAB did not converge".into()))
}

/// Dense LU solve, used for the coupled Newton and saddle-point systems.
pub fn dense_solve(a: DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let lu = a.lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular("LU factorization found a zero pivot".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "dense solve produced non-finite values".into(),
        ));
    }
    Ok(x.iter().copied().collect())
}

/// Crude 1-norm condition estimate `||A||_1 * ||A^-1||_1`, used only for
/// diagnostics on small saddle systems.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let norm1 = |m: &DMatrix<f64>| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match a.clone().try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}
