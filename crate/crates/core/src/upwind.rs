//! Monotone upwind numerical Hamiltonian and its exact linearization.
//!
//! With `q+` and `q-` the forward and backward differences along each axis,
//! the scheme evaluates `g(s) + V(x)` at
//! `s = sum_axis min(q+, 0)^2 + max(q-, 0)^2`, which is nonincreasing in
//! `q+` and nondecreasing in `q-`. Its Jacobian is the transport operator
//! `L(u)` of the HJB equation; the Fokker-Planck transport is assembled in
//! flux form and equals `L(u)^T`.

use nalgebra::DMatrix;

use crate::grid::{Grid, VectorField};
use crate::linalg::StencilOp;
use crate::model::HamiltonianSpec;

#[derive(Debug, Clone)]
pub struct UpwindHamiltonian {
    spec: HamiltonianSpec,
    grid: Grid,
    potential: Vec<f64>,
}

/// Upwinded one-sided slopes at a node.
#[derive(Debug, Clone, Copy)]
struct Local {
    /// `min(q+, 0)` per axis
    fwd: [f64; 2],
    /// `max(q-, 0)` per axis
    bwd: [f64; 2],
    fwd_active: [bool; 2],
    bwd_active: [bool; 2],
    s: f64,
}

impl UpwindHamiltonian {
    pub fn new(spec: &HamiltonianSpec, grid: Grid) -> Self {
        let potential = spec.sample_potential(&grid).into_values();
        UpwindHamiltonian {
            spec: spec.clone(),
            grid,
            potential,
        }
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    fn local(&self, u: &[f64], i: usize) -> Local {
        let g = &self.grid;
        let inv_h = 1.0 / g.spacing();
        let mut loc = Local {
            fwd: [0.0; 2],
            bwd: [0.0; 2],
            fwd_active: [false; 2],
            bwd_active: [false; 2],
            s: 0.0,
        };
        for axis in 0..g.dim() {
            let qp = (u[g.neighbor(i, axis, 1)] - u[i]) * inv_h;
            let qm = (u[i] - u[g.neighbor(i, axis, -1)]) * inv_h;
            if qp < 0.0 {
                loc.fwd[axis] = qp;
                loc.fwd_active[axis] = true;
            }
            if qm > 0.0 {
                loc.bwd[axis] = qm;
                loc.bwd_active[axis] = true;
            }
            loc.s += loc.fwd[axis] * loc.fwd[axis] + loc.bwd[axis] * loc.bwd[axis];
        }
        loc
    }

    /// Nodal values of the numerical Hamiltonian.
    pub fn value(&self, u: &[f64]) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let loc = self.local(u, i);
                self.spec.radial_profile(loc.s).0 + self.potential[i]
            })
            .collect()
    }

    /// Partial derivatives with respect to `(q+, q-)` per axis.
    fn slopes(&self, u: &[f64]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let n = self.grid.len();
        let mut pf = vec![[0.0; 2]; n];
        let mut pb = vec![[0.0; 2]; n];
        for i in 0..n {
            let loc = self.local(u, i);
            let g1 = self.spec.radial_profile(loc.s).1;
            for axis in 0..self.grid.dim() {
                pf[i][axis] = 2.0 * g1 * loc.fwd[axis];
                pb[i][axis] = 2.0 * g1 * loc.bwd[axis];
            }
        }
        (pf, pb)
    }

    /// Discrete `H_p(x, Du)`: the sum of both one-sided slopes per axis.
    pub fn drift(&self, u: &[f64]) -> VectorField {
        let (pf, pb) = self.slopes(u);
        let comps = (0..self.grid.dim())
            .map(|a| pf.iter().zip(&pb).map(|(f, b)| f[a] + b[a]).collect())
            .collect();
        VectorField::from_components(self.grid, comps).expect("drift is finite for finite u")
    }

    /// Jacobian `L(u)` of [`value`](Self::value); the HJB transport operator.
    pub fn linearize(&self, u: &[f64]) -> StencilOp {
        let (pf, pb) = self.slopes(u);
        hjb_transport(&self.grid, &pf, &pb)
    }

    /// Fokker-Planck transport `L(u)^T`, assembled from upwind fluxes.
    pub fn fp_operator(&self, u: &[f64]) -> StencilOp {
        let (pf, pb) = self.slopes(u);
        fp_transport(&self.grid, &pf, &pb)
    }

    /// Adds `scale * d/du [L(u)^T m]` into `mat` at the given offsets.
    ///
    /// The derivative is `sum_i m_i D_i^T Hess_i D_i` where `D_i` maps `u`
    /// to the one-sided differences at node `i`.
    pub fn add_transport_jacobian(
        &self,
        u: &[f64],
        m: &[f64],
        mat: &mut DMatrix<f64>,
        row0: usize,
        col0: usize,
        scale: f64,
    ) {
        let g = &self.grid;
        let d = g.dim();
        let inv_h = 1.0 / g.spacing();
        for (i, &mi) in m.iter().enumerate() {
            if mi == 0.0 {
                continue;
            }
            let loc = self.local(u, i);
            let (_, g1, g2) = self.spec.radial_profile(loc.s);
            // components ordered (fwd_0, bwd_0, fwd_1, bwd_1)
            let nc = 2 * d;
            let mut c = [0.0; 4];
            let mut chi = [0.0; 4];
            let mut rows: [[(usize, f64); 2]; 4] = [[(0, 0.0); 2]; 4];
            for axis in 0..d {
                c[2 * axis] = loc.fwd[axis];
                c[2 * axis + 1] = loc.bwd[axis];
                chi[2 * axis] = if loc.fwd_active[axis] { 1.0 } else { 0.0 };
                chi[2 * axis + 1] = if loc.bwd_active[axis] { 1.0 } else { 0.0 };
                rows[2 * axis] = [(g.neighbor(i, axis, 1), inv_h), (i, -inv_h)];
                rows[2 * axis + 1] = [(i, inv_h), (g.neighbor(i, axis, -1), -inv_h)];
            }
            for a in 0..nc {
                for b in 0..nc {
                    let mut hab = 4.0 * g2 * c[a] * c[b];
                    if a == b {
                        hab += 2.0 * g1 * chi[a];
                    }
                    if hab == 0.0 {
                        continue;
                    }
                    let w = scale * mi * hab;
                    for &(j, dj) in &rows[a] {
                        for &(k, dk) in &rows[b] {
                            mat[(row0 + j, col0 + k)] += w * dj * dk;
                        }
                    }
                }
            }
        }
    }

    /// Sup over nodes of `sqrt(sum_axis max(|q+|, |q-|)^2)`.
    pub fn gradient_bound(&self, u: &[f64]) -> f64 {
        let g = &self.grid;
        let inv_h = 1.0 / g.spacing();
        (0..g.len())
            .map(|i| {
                (0..g.dim())
                    .map(|axis| {
                        let qp = (u[g.neighbor(i, axis, 1)] - u[i]) * inv_h;
                        let qm = (u[i] - u[g.neighbor(i, axis, -1)]) * inv_h;
                        qp.abs().max(qm.abs()).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `max_i sum_axis (|P+| + |P-|) / h`: the explicit-transport CFL rate.
    pub fn transport_rate(&self, u: &[f64]) -> f64 {
        let (pf, pb) = self.slopes(u);
        let inv_h = 1.0 / self.grid.spacing();
        pf.iter()
            .zip(&pb)
            .map(|(f, b)| {
                (0..self.grid.dim())
                    .map(|a| f[a].abs() + b[a].abs())
                    .sum::<f64>()
                    * inv_h
            })
            .fold(0.0, f64::max)
    }
}

/// `(L v)_i = sum_axis pf_i (v_{i+e} - v_i)/h + pb_i (v_i - v_{i-e})/h`.
pub(crate) fn hjb_transport(grid: &Grid, pf: &[[f64; 2]], pb: &[[f64; 2]]) -> StencilOp {
    let inv_h = 1.0 / grid.spacing();
    let mut op = StencilOp::zeros(*grid);
    for i in 0..grid.len() {
        for axis in 0..grid.dim() {
            let a = pf[i][axis] * inv_h;
            let b = pb[i][axis] * inv_h;
            *op.off_mut(i, axis, 1) += a;
            *op.diag_mut(i) += b - a;
            *op.off_mut(i, axis, -1) -= b;
        }
    }
    op
}

/// Flux-form `-div_h(rho P)`: `-(D-(pf rho) + D+(pb rho))` per axis.
pub(crate) fn fp_transport(grid: &Grid, pf: &[[f64; 2]], pb: &[[f64; 2]]) -> StencilOp {
    let inv_h = 1.0 / grid.spacing();
    let mut op = StencilOp::zeros(*grid);
    for j in 0..grid.len() {
        for axis in 0..grid.dim() {
            let jm = grid.neighbor(j, axis, -1);
            let jp = grid.neighbor(j, axis, 1);
            *op.off_mut(j, axis, -1) += pf[jm][axis] * inv_h;
            *op.diag_mut(j) += (pb[j][axis] - pf[j][axis]) * inv_h;
            *op.off_mut(j, axis, 1) -= pb[jp][axis] * inv_h;
        }
    }
    op
}

/// Upwind split of a prescribed drift `V`: `pf = min(V, 0)`, `pb = max(V, 0)`.
pub(crate) fn split_drift(v: &VectorField) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let g = v.grid();
    let mut pf = vec![[0.0; 2]; g.len()];
    let mut pb = vec![[0.0; 2]; g.len()];
    for axis in 0..g.dim() {
        for (i, &vi) in v.component(axis).iter().enumerate() {
            pf[i][axis] = vi.min(0.0);
            pb[i][axis] = vi.max(0.0);
        }
    }
    (pf, pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HamiltonianFamily;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_u(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..grid.len()).map(|_| rng.gen_range(-0.2..0.2)).collect()
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for fam in [
            HamiltonianFamily::Quadratic,
            HamiltonianFamily::LipschitzConvex,
        ] {
            for d in [1, 2] {
                let g = Grid::new(8, d).unwrap();
                let h = UpwindHamiltonian::new(&HamiltonianSpec::new(fam), g);
                let u = random_u(&g, &mut rng);
                let dir = random_u(&g, &mut rng);
                let eps = 1e-7;
                let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
                let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
                let (hp, hm) = (h.value(&up), h.value(&um));
                let lin = h.linearize(&u).apply(&dir);
                for i in 0..g.len() {
                    let fd = (hp[i] - hm[i]) / (2.0 * eps);
                    assert!(
                        (fd - lin[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                        "{fam:?} d={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn fp_operator_is_exact_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [1, 2] {
            let g = Grid::new(8, d).unwrap();
            let h = UpwindHamiltonian::new(
                &HamiltonianSpec::new(HamiltonianFamily::LipschitzConvex),
                g,
            );
            let u = random_u(&g, &mut rng);
            let l = h.linearize(&u).to_dense();
            let k = h.fp_operator(&u).to_dense();
            assert!((l.transpose() - k).amax() < 1e-12);
        }
    }

    #[test]
    fn transport_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for fam in [
            HamiltonianFamily::Quadratic,
            HamiltonianFamily::LipschitzConvex,
        ] {
            for d in [1, 2] {
                let g = Grid::new(6, d).unwrap();
                let n = g.len();
                let h = UpwindHamiltonian::new(&HamiltonianSpec::new(fam), g);
                let u = random_u(&g, &mut rng);
                let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
                let mut jac = DMatrix::zeros(n, n);
                h.add_transport_jacobian(&u, &m, &mut jac, 0, 0, 1.0);
                let dir = random_u(&g, &mut rng);
                let eps = 1e-7;
                let up: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
                let um: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
                let gp = h.fp_operator(&up).apply(&m);
                let gm = h.fp_operator(&um).apply(&m);
                let jd = &jac * nalgebra::DVector::from_vec(dir);
                for i in 0..n {
                    let fd = (gp[i] - gm[i]) / (2.0 * eps);
                    assert!(
                        (fd - jd[i]).abs() < 1e-4 * (1.0 + fd.abs()),
                        "{fam:?} d={d}: {fd} vs {}",
                        jd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn scheme_is_monotone() {
        let g = Grid::new(16, 1).unwrap();
        let h = UpwindHamiltonian::new(&HamiltonianSpec::new(HamiltonianFamily::Quadratic), g);
        let u: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).sin()).collect();
        let l = h.linearize(&u);
        for i in 0..16 {
            assert!(l.off(i, 0, 1) <= 0.0 && l.off(i, 0, -1) <= 0.0);
        }
    }
}
