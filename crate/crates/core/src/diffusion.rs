//! Second-difference diffusion matrices and the implicit solve `(I - eps^2 D) u = r`.
//!
//! Neumann rows use the ghost-point closure `U_0 := U_2`, `U_{n+1} := U_{n-1}`,
//! which puts a 2 next to the diagonal in the first and last row. Periodic
//! rows wrap around. Both matrices annihilate constants.

use crate::error::{PsbcError, Result};
use crate::params::BoundaryCondition;

/// Tridiagonal matrix with its elimination coefficients precomputed.
///
/// `L` is strictly diagonally dominant for every `eps >= 0`, so elimination
/// runs without pivoting.
#[derive(Debug, Clone)]
struct Thomas {
    sub: Vec<f64>,
    cp: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl Thomas {
    /// `sub[i]` multiplies `x[i-1]` in row `i`, `sup[i]` multiplies `x[i+1]`.
    fn factor(sub: Vec<f64>, diag: &[f64], sup: &[f64]) -> Self {
        let n = diag.len();
        let mut cp = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev_cp = 0.0;
        for i in 0..n {
            let denom = diag[i] - if i > 0 { sub[i] * prev_cp } else { 0.0 };
            inv_denom[i] = 1.0 / denom;
            cp[i] = if i + 1 < n {
                sup[i] * inv_denom[i]
            } else {
                0.0
            };
            prev_cp = cp[i];
        }
        Thomas { sub, cp, inv_denom }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] *= self.inv_denom[0];
        for i in 1..n {
            x[i] = (x[i] - self.sub[i] * x[i - 1]) * self.inv_denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
enum Factorization {
    Identity,
    Neumann {
        forward: Thomas,
        transpose: Thomas,
    },
    /// Sherman-Morrison: `L = T + u v^T` with corner terms moved into `u v^T`.
    Periodic {
        reduced: Thomas,
        /// `T^{-1} u`
        z: Vec<f64>,
        /// `v = (1, 0, ..., 0, v_last)`
        v_last: f64,
        inv_one_plus_vz: f64,
    },
}

/// The operator `L = I - eps^2 D` for a given size and boundary condition.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    n: usize,
    bc: BoundaryCondition,
    eps2: f64,
    fact: Factorization,
}

impl DiffusionOperator {
    pub fn build(n: usize, bc: BoundaryCondition, eps: f64) -> Result<Self> {
        if n == 0 {
            return Err(PsbcError::Config("diffusion operator needs n >= 1".into()));
        }
        if bc == BoundaryCondition::Periodic && n < 3 {
            return Err(PsbcError::Config(format!(
                "periodic boundary condition needs n >= 3, got {n}"
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(PsbcError::Config(format!(
                "eps must be non-negative, got {eps}"
            )));
        }
        let eps2 = eps * eps;
        let fact = if eps2 == 0.0 || n == 1 {
            Factorization::Identity
        } else {
            match bc {
                BoundaryCondition::Neumann => neumann_factor(n, eps2),
                BoundaryCondition::Periodic => periodic_factor(n, eps2),
            }
        };
        Ok(DiffusionOperator { n, bc, eps2, fact })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    /// Stencil coefficients `(left, center, right)` of row `i` of `D`,
    /// with wrap-around for periodic rows.
    fn d_row(&self, i: usize) -> [(usize, f64); 3] {
        let n = self.n;
        if n == 1 {
            return [(0, 0.0), (0, 0.0), (0, 0.0)];
        }
        match self.bc {
            BoundaryCondition::Neumann => {
                if i == 0 {
                    [(1, 1.0), (0, -2.0), (1, 1.0)]
                } else if i == n - 1 {
                    [(n - 2, 1.0), (n - 1, -2.0), (n - 2, 1.0)]
                } else {
                    [(i - 1, 1.0), (i, -2.0), (i + 1, 1.0)]
                }
            }
            BoundaryCondition::Periodic => [((i + n - 1) % n, 1.0), (i, -2.0), ((i + 1) % n, 1.0)],
        }
    }

    /// `D v` via the stencil.
    pub fn apply_d(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok((0..self.n)
            .map(|i| {
                let [(l, a), (c, b), (r, d)] = self.d_row(i);
                a * v[l] + b * v[c] + d * v[r]
            })
            .collect())
    }

    /// `L v = v - eps^2 D v`.
    pub fn apply_l(&self, v: &[f64]) -> Result<Vec<f64>> {
        let dv = self.apply_d(v)?;
        Ok(v.iter().zip(dv).map(|(x, d)| x - self.eps2 * d).collect())
    }

    /// Row-major dense `D`.
    pub fn dense_d(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for (j, c) in self.d_row(i) {
                out[i * n + j] += c;
            }
        }
        out
    }

    /// Row-major dense `L = I - eps^2 D`.
    pub fn dense_l(&self) -> Vec<f64> {
        let n = self.n;
        let mut out: Vec<f64> = self.dense_d().into_iter().map(|d| -self.eps2 * d).collect();
        for i in 0..n {
            out[i * n + i] += 1.0;
        }
        out
    }

    /// Solves `L u = rhs`.
    pub fn solve_l(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rhs.len())?;
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    /// Solves `L^T u = rhs`.
    pub fn solve_l_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rhs.len())?;
        let mut x = rhs.to_vec();
        self.solve_transpose_in_place(&mut x);
        Ok(x)
    }

    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        match &self.fact {
            Factorization::Identity => {}
            Factorization::Neumann { forward, .. } => forward.solve_in_place(x),
            Factorization::Periodic {
                reduced,
                z,
                v_last,
                inv_one_plus_vz,
            } => {
                reduced.solve_in_place(x);
                let n = x.len();
                let coef = (x[0] + v_last * x[n - 1]) * inv_one_plus_vz;
                for (xi, zi) in x.iter_mut().zip(z) {
                    *xi -= coef * zi;
                }
            }
        }
    }

    pub(crate) fn solve_transpose_in_place(&self, x: &mut [f64]) {
        match &self.fact {
            Factorization::Neumann { transpose, .. } => transpose.solve_in_place(x),
            // identity and the symmetric circulant are their own transposes
            _ => self.solve_in_place(x),
        }
    }

    /// Exact `l_inf -> l_inf` norm of `L^{-1}`: the largest absolute row sum,
    /// assembled column by column.
    pub fn inverse_norm_inf(&self) -> f64 {
        let n = self.n;
        let mut row_sums = vec![0.0; n];
        let mut col = vec![0.0; n];
        for k in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[k] = 1.0;
            self.solve_in_place(&mut col);
            for (s, c) in row_sums.iter_mut().zip(&col) {
                *s += c.abs();
            }
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(PsbcError::dim("diffusion operator", self.n, len));
        }
        Ok(())
    }
}

fn neumann_factor(n: usize, e: f64) -> Factorization {
    let diag = vec![1.0 + 2.0 * e; n];
    let mut sub = vec![-e; n];
    let mut sup = vec![-e; n];
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    sup[0] = -2.0 * e;
    sub[n - 1] = -2.0 * e;
    // transpose: row i of L^T holds column i of L
    let mut t_sub = vec![0.0; n];
    let mut t_sup = vec![0.0; n];
    for i in 0..n {
        if i > 0 {
            t_sub[i] = sup[i - 1];
        }
        if i + 1 < n {
            t_sup[i] = sub[i + 1];
        }
    }
    Factorization::Neumann {
        forward: Thomas::factor(sub, &diag, &sup),
        transpose: Thomas::factor(t_sub, &diag, &t_sup),
    }
}

fn periodic_factor(n: usize, e: f64) -> Factorization {
    let b = 1.0 + 2.0 * e;
    let corner = -e;
    let gamma = -b;
    let mut diag = vec![b; n];
    diag[0] -= gamma;
    diag[n - 1] -= corner * corner / gamma;
    let mut sub = vec![-e; n];
    sub[0] = 0.0;
    let mut sup = vec![-e; n];
    sup[n - 1] = 0.0;
    let reduced = Thomas::factor(sub, &diag, &sup);
    let mut z = vec![0.0; n];
    z[0] = gamma;
    z[n - 1] = corner;
    reduced.solve_in_place(&mut z);
    let v_last = corner / gamma;
    let vz = z[0] + v_last * z[n - 1];
    Factorization::Periodic {
        reduced,
        z,
        v_last,
        inv_one_plus_vz: 1.0 / (1.0 + vz),
    }
}

/// Neighbor average used by the discrete maximum principles.
///
/// Neumann: `v[1]` at the first index, `v[n-2]` at the last, else the mean of
/// both neighbors. Periodic: mean of both neighbors with wrap-around.
pub fn neighbor_average(v: &[f64], j: usize, bc: BoundaryCondition) -> Result<f64> {
    let n = v.len();
    if j >= n {
        return Err(PsbcError::Domain(format!(
            "index {j} out of range for length {n}"
        )));
    }
    if n == 1 {
        return Ok(v[0]);
    }
    Ok(match bc {
        BoundaryCondition::Neumann => {
            if j == 0 {
                v[1]
            } else if j == n - 1 {
                v[n - 2]
            } else {
                (v[j - 1] + v[j + 1]) / 2.0
            }
        }
        BoundaryCondition::Periodic => (v[(j + n - 1) % n] + v[(j + 1) % n]) / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BoundaryCondition::{Neumann, Periodic};

    /// Gaussian elimination with partial pivoting on a dense copy.
    fn dense_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row = a[i * n..(i + 1) * n].to_vec();
                row.push(b[i]);
                row
            })
            .collect();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
                .unwrap();
            m.swap(k, p);
            for i in k + 1..n {
                let f = m[i][k] / m[k][k];
                let pivot = m[k].clone();
                for (a, b) in m[i][k..].iter_mut().zip(&pivot[k..]) {
                    *a -= f * b;
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| m[i][j] * x[j]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    fn transpose(a: &[f64], n: usize) -> Vec<f64> {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = a[i * n + j];
            }
        }
        t
    }

    #[test]
    fn neumann_three() {
        let op = DiffusionOperator::build(3, Neumann, 0.5).unwrap();
        assert_eq!(
            op.dense_d(),
            vec![-2.0, 2.0, 0.0, 1.0, -2.0, 1.0, 0.0, 2.0, -2.0]
        );
        assert_eq!(op.apply_d(&[0.0, 1.0, 0.0]).unwrap(), vec![2.0, -2.0, 2.0]);
    }

    #[test]
    fn periodic_three() {
        let op = DiffusionOperator::build(3, Periodic, 0.5).unwrap();
        assert_eq!(
            op.dense_d(),
            vec![-2.0, 1.0, 1.0, 1.0, -2.0, 1.0, 1.0, 1.0, -2.0]
        );
        assert!(DiffusionOperator::build(2, Periodic, 0.5).is_err());
    }

    #[test]
    fn small_neumann_sizes() {
        let one = DiffusionOperator::build(1, Neumann, 1.0).unwrap();
        assert_eq!(one.dense_d(), vec![0.0]);
        assert_eq!(one.solve_l(&[0.3]).unwrap(), vec![0.3]);
        let two = DiffusionOperator::build(2, Neumann, 1.0).unwrap();
        assert_eq!(two.dense_d(), vec![-2.0, 2.0, 2.0, -2.0]);
        let x = two.solve_l(&[1.0, 0.0]).unwrap();
        let back = two.apply_l(&x).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-14 && back[1].abs() < 1e-14);
    }

    #[test]
    fn constants_are_fixed() {
        for bc in [Neumann, Periodic] {
            for n in [3, 4, 17] {
                let op = DiffusionOperator::build(n, bc, 0.7).unwrap();
                assert!(op.apply_d(&vec![2.5; n]).unwrap().iter().all(|&d| d == 0.0));
                let x = op.solve_l(&vec![0.4; n]).unwrap();
                assert!(x.iter().all(|&v| (v - 0.4).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn zero_eps_is_identity() {
        for bc in [Neumann, Periodic] {
            let op = DiffusionOperator::build(5, bc, 0.0).unwrap();
            let r = vec![0.1, -2.0, 3.5, 0.0, 7.25];
            assert_eq!(op.solve_l(&r).unwrap(), r);
            assert_eq!(op.solve_l_transpose(&r).unwrap(), r);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let op = DiffusionOperator::build(4, Neumann, 0.5).unwrap();
        assert!(op.solve_l(&[1.0; 3]).is_err());
        assert!(op.solve_l_transpose(&[1.0; 5]).is_err());
        assert!(op.apply_d(&[1.0; 2]).is_err());
    }

    #[test]
    fn averages() {
        assert_eq!(neighbor_average(&[1.0, 2.0, 3.0], 0, Neumann).unwrap(), 2.0);
        assert_eq!(neighbor_average(&[1.0, 2.0, 3.0], 2, Neumann).unwrap(), 2.0);
        assert_eq!(
            neighbor_average(&[1.0, 2.0, 3.0], 0, Periodic).unwrap(),
            2.5
        );
        assert_eq!(neighbor_average(&[4.0; 5], 3, Periodic).unwrap(), 4.0);
        assert!(neighbor_average(&[1.0, 2.0], 2, Neumann).is_err());
    }

    fn system() -> impl Strategy<Value = (usize, BoundaryCondition, f64, Vec<f64>, Vec<f64>)> {
        (3usize..64, prop::bool::ANY, 0.0f64..2.0).prop_flat_map(|(n, periodic, eps)| {
            let bc = if periodic { Periodic } else { Neumann };
            (
                Just(n),
                Just(bc),
                Just(eps),
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn solves_match_dense_oracle((n, bc, eps, a, b) in system()) {
            let op = DiffusionOperator::build(n, bc, eps).unwrap();
            let l = op.dense_l();
            let x = op.solve_l(&a).unwrap();
            let oracle = dense_solve(&l, &a);
            let scale = oracle.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (p, q) in x.iter().zip(&oracle) {
                prop_assert!((p - q).abs() <= 1e-10 * scale);
            }
            let residual = op.apply_l(&x).unwrap();
            for (r, t) in residual.iter().zip(&a) {
                prop_assert!((r - t).abs() <= 1e-10 * (1.0 + t.abs()));
            }
            let xt = op.solve_l_transpose(&b).unwrap();
            let oracle_t = dense_solve(&transpose(&l, n), &b);
            let scale_t = oracle_t.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (p, q) in xt.iter().zip(&oracle_t) {
                prop_assert!((p - q).abs() <= 1e-10 * scale_t);
            }
            // <L^{-1} a, b> = <a, L^{-T} b>
            let lhs: f64 = x.iter().zip(&b).map(|(p, q)| p * q).sum();
            let rhs: f64 = a.iter().zip(&xt).map(|(p, q)| p * q).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            if bc == Periodic {
                prop_assert_eq!(op.solve_l(&b).unwrap(), xt);
            }
        }

        #[test]
        fn maximum_principle((n, bc, eps, a, _b) in system()) {
            let op = DiffusionOperator::build(n, bc, eps).unwrap();
            let positive: Vec<f64> = a.iter().map(|v| v.abs()).collect();
            prop_assert!(op.solve_l(&positive).unwrap().iter().all(|&v| v >= -1e-12));
            let d = op.apply_d(&a).unwrap();
            let (imin, _) = a.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap();
            let (imax, _) = a.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap();
            prop_assert!(d[imin] >= 0.0);
            prop_assert!(d[imax] <= 0.0);
            for j in 0..n {
                let gap = neighbor_average(&a, j, bc).unwrap() - a[j];
                // (Dv)_j is a positive multiple of av_j(v) - v_j
                prop_assert!((d[j] - 2.0 * gap).abs() <= 1e-12 * (1.0 + d[j].abs()));
            }
        }
    }

    #[test]
    fn inverse_is_nonexpansive() {
        for bc in [Neumann, Periodic] {
            for n in [3, 8, 31] {
                for eps in [0.0, 0.0625, 0.25, 1.0, 4.0] {
                    let op = DiffusionOperator::build(n, bc, eps).unwrap();
                    assert!(op.inverse_norm_inf() <= 1.0 + 1e-12);
                }
            }
        }
    }
}
