//! Principal-component bases for the feature weights.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::basis::BasisMatrix;
use crate::data::Dataset;
use crate::error::{PsbcError, Result};
use crate::invariant::hull;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    n_u: usize,
    n_pt: usize,
    /// `n_u x n_pt`, row-major; column `j` is the `j`-th component.
    components: Vec<f64>,
    pub mean: Vec<f64>,
    /// Covariance eigenvalues of the kept components, non-increasing.
    pub explained: Vec<f64>,
}

impl PcaBasis {
    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_pt(&self) -> usize {
        self.n_pt
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.n_u)
            .map(|i| self.components[i * self.n_pt + j])
            .collect()
    }

    /// Coordinates of `x - mean` along each component.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_u {
            return Err(PsbcError::dim("projected vector", self.n_u, x.len()));
        }
        let mut out = vec![0.0; self.n_pt];
        for (i, (xi, mi)) in x.iter().zip(&self.mean).enumerate() {
            let c = xi - mi;
            for (o, b) in out
                .iter_mut()
                .zip(&self.components[i * self.n_pt..(i + 1) * self.n_pt])
            {
                *o += c * b;
            }
        }
        Ok(out)
    }

    /// `mean + sum_j coords_j * component_j`.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.n_pt {
            return Err(PsbcError::dim(
                "component coordinates",
                self.n_pt,
                coords.len(),
            ));
        }
        Ok((0..self.n_u)
            .map(|i| {
                let row = &self.components[i * self.n_pt..(i + 1) * self.n_pt];
                self.mean[i] + row.iter().zip(coords).map(|(b, c)| b * c).sum::<f64>()
            })
            .collect())
    }

    pub fn to_basis_matrix(&self) -> Result<BasisMatrix> {
        BasisMatrix::dense(self.n_u, self.n_pt, self.components.clone())
    }
}

/// Leading `n_pt` eigenvectors of the sample covariance of `train`.
///
/// Each component is signed so that its largest-magnitude entry (the first
/// one, on ties) is positive.
pub fn pca_basis(train: &Dataset, n_pt: usize) -> Result<PcaBasis> {
    let n_u = train.n_u();
    let n = train.len();
    if n_pt == 0 || n_pt > n_u {
        return Err(PsbcError::Config(format!(
            "need 1 <= n_pt <= {n_u}, got {n_pt}"
        )));
    }
    if n < n_pt {
        return Err(PsbcError::Rank {
            requested: n_pt,
            achieved: n,
        });
    }
    let mut mean = vec![0.0; n_u];
    for x in train.features() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, n_u, |r, c| train.feature(r)[c] - mean[c]);
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.tr_mul(&centered) / denom;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..n_u).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * n_u.max(n) as f64 * f64::EPSILON * 16.0;
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > tol).count();
    if rank < n_pt {
        return Err(PsbcError::Rank {
            requested: n_pt,
            achieved: rank,
        });
    }

    let mut components = vec![0.0; n_u * n_pt];
    let mut explained = Vec::with_capacity(n_pt);
    for (j, &k) in order.iter().take(n_pt).enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut lead = 0;
        for i in 1..n_u {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n_u {
            components[i * n_pt + j] = sign * v[i];
        }
        explained.push(eig.eigenvalues[k]);
    }
    Ok(PcaBasis {
        n_u,
        n_pt,
        components,
        mean,
        explained,
    })
}

/// Diameter of `conv({0, 1} U entries of B w)` over all weight groups,
/// always forming the products.
pub fn irec_diameter_general(basis: &BasisMatrix, groups: &[Vec<f64>]) -> Result<f64> {
    let (mut l, mut r) = (0.0f64, 1.0f64);
    for w in groups {
        let (gl, gr) = hull(&basis.apply(w)?);
        l = l.min(gl);
        r = r.max(gr);
    }
    Ok(r - l)
}
