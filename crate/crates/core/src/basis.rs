//! Linear parameterization of per-feature coefficients: `alpha = B * w`.

use nalgebra::DMatrix;

use crate::error::{PsbcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Indicator columns of consecutive, disjoint index blocks.
    Canonical,
    /// Leading principal components (dense).
    Pca,
    Identity,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Canonical => "canonical",
            BasisKind::Pca => "pca",
            BasisKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "canonical" => Some(BasisKind::Canonical),
            "pca" => Some(BasisKind::Pca),
            "identity" => Some(BasisKind::Identity),
            _ => None,
        }
    }
}

/// An `n_rows x n_cols` full column rank matrix.
///
/// Canonical and identity bases keep a row-to-column map so that products
/// cost `O(n_rows)`; dense entries are only stored for PCA bases.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    n_rows: usize,
    n_cols: usize,
    kind: BasisKind,
    repr: Repr,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    Blocks(Vec<usize>),
    Dense(Vec<f64>),
}

impl BasisMatrix {
    /// Partition `0..n_u` into `n_pt` consecutive blocks, smallest indices first.
    ///
    /// When `n_pt` does not divide `n_u`, the first `n_u % n_pt` blocks take
    /// one extra index.
    pub fn canonical(n_u: usize, n_pt: usize) -> Result<Self> {
        if n_pt == 0 || n_pt > n_u {
            return Err(PsbcError::Config(format!(
                "canonical basis needs 1 <= n_pt <= n_u, got n_u={n_u}, n_pt={n_pt}"
            )));
        }
        let base = n_u / n_pt;
        let extra = n_u % n_pt;
        let mut row_block = Vec::with_capacity(n_u);
        for j in 0..n_pt {
            let len = if j < extra { base + 1 } else { base };
            row_block.extend(std::iter::repeat_n(j, len));
        }
        Ok(BasisMatrix {
            n_rows: n_u,
            n_cols: n_pt,
            kind: BasisKind::Canonical,
            repr: Repr::Blocks(row_block),
        })
    }

    pub fn identity(n: usize) -> Self {
        BasisMatrix {
            n_rows: n,
            n_cols: n,
            kind: BasisKind::Identity,
            repr: Repr::Blocks((0..n).collect()),
        }
    }

    /// Dense basis from row-major entries. Rejects matrices without full column rank.
    pub fn dense(n_rows: usize, n_cols: usize, entries: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || n_cols > n_rows {
            return Err(PsbcError::Config(format!(
                "basis needs 1 <= columns <= rows, got {n_rows}x{n_cols}"
            )));
        }
        if entries.len() != n_rows * n_cols {
            return Err(PsbcError::dim(
                "dense basis entries",
                n_rows * n_cols,
                entries.len(),
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(PsbcError::Config("basis has non-finite entries".into()));
        }
        let m = DMatrix::from_row_slice(n_rows, n_cols, &entries);
        let gram = m.transpose() * &m;
        if gram.cholesky().is_none() {
            return Err(PsbcError::Config(
                "basis columns are linearly dependent".into(),
            ));
        }
        Ok(BasisMatrix {
            n_rows,
            n_cols,
            kind: BasisKind::Pca,
            repr: Repr::Dense(entries),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Column index owning `row`, for block-structured bases.
    pub fn block_of(&self, row: usize) -> Option<usize> {
        match &self.repr {
            Repr::Blocks(map) => map.get(row).copied(),
            Repr::Dense(_) => None,
        }
    }

    /// Row indices in the support of column `col`, for block-structured bases.
    pub fn block_rows(&self, col: usize) -> Option<Vec<usize>> {
        match &self.repr {
            Repr::Blocks(map) => Some(
                map.iter()
                    .enumerate()
                    .filter(|&(_, &c)| c == col)
                    .map(|(r, _)| r)
                    .collect(),
            ),
            Repr::Dense(_) => None,
        }
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        match &self.repr {
            Repr::Blocks(map) => {
                if map[row] == col {
                    1.0
                } else {
                    0.0
                }
            }
            Repr::Dense(e) => e[row * self.n_cols + col],
        }
    }

    /// Row-major dense copy of the entries.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                out[r * self.n_cols + c] = self.entry(r, c);
            }
        }
        out
    }

    /// `B * w`.
    pub fn apply(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n_cols {
            return Err(PsbcError::dim("basis apply", self.n_cols, w.len()));
        }
        let mut out = vec![0.0; self.n_rows];
        self.apply_into(w, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, w: &[f64], out: &mut [f64]) {
        match &self.repr {
            Repr::Blocks(map) => {
                for (o, &c) in out.iter_mut().zip(map) {
                    *o = w[c];
                }
            }
            Repr::Dense(e) => {
                for (o, row) in out.iter_mut().zip(e.chunks_exact(self.n_cols)) {
                    *o = row.iter().zip(w).map(|(b, x)| b * x).sum();
                }
            }
        }
    }

    /// `B^T * g`: chain rule through the parameterization.
    pub fn pullback(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.n_rows {
            return Err(PsbcError::dim("basis pullback", self.n_rows, g.len()));
        }
        let mut out = vec![0.0; self.n_cols];
        self.pullback_add(g, &mut out);
        Ok(out)
    }

    /// `out += B^T * g`, accumulating rows in increasing order.
    pub(crate) fn pullback_add(&self, g: &[f64], out: &mut [f64]) {
        match &self.repr {
            Repr::Blocks(map) => {
                for (&gi, &c) in g.iter().zip(map) {
                    out[c] += gi;
                }
            }
            Repr::Dense(e) => {
                for (&gi, row) in g.iter().zip(e.chunks_exact(self.n_cols)) {
                    for (o, b) in out.iter_mut().zip(row) {
                        *o += b * gi;
                    }
                }
            }
        }
    }

    /// Largest absolute row sum, an upper constant in `|B w|_inf <= c |w|_inf`.
    pub fn max_abs_row_sum(&self) -> f64 {
        match &self.repr {
            Repr::Blocks(_) => 1.0,
            Repr::Dense(e) => e
                .chunks_exact(self.n_cols)
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    /// Lower constant `c` in `c |w|_inf <= |B w|_inf`, from the left inverse
    /// `(B^T B)^{-1} B^T`.
    pub fn lower_norm_constant(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.n_rows, self.n_cols, &self.to_dense());
        let gram = m.transpose() * &m;
        let inv = gram
            .cholesky()
            .expect("basis has full column rank")
            .inverse();
        let left = inv * m.transpose();
        let norm = (0..left.nrows())
            .map(|r| left.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        1.0 / norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linf(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn canonical_examples() {
        let id = BasisMatrix::canonical(4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(id.entry(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
        let ones = BasisMatrix::canonical(4, 1).unwrap();
        assert_eq!(ones.to_dense(), vec![1.0; 4]);
        let two = BasisMatrix::canonical(4, 2).unwrap();
        assert_eq!(two.to_dense(), vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(two.apply(&[3.0, -7.0]).unwrap(), vec![3.0, 3.0, -7.0, -7.0]);
        assert_eq!(ones.apply(&[0.25]).unwrap(), vec![0.25; 4]);
        assert_eq!(ones.pullback(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![10.0]);
        assert_eq!(
            id.pullback(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn uneven_blocks_front_loaded() {
        let b = BasisMatrix::canonical(7, 3).unwrap();
        let sizes: Vec<usize> = (0..3).map(|c| b.block_rows(c).unwrap().len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(b.block_rows(1).unwrap(), vec![3, 4]);
    }

    #[test]
    fn dimension_errors() {
        assert!(BasisMatrix::canonical(3, 4).is_err());
        assert!(BasisMatrix::canonical(3, 0).is_err());
        let b = BasisMatrix::canonical(4, 2).unwrap();
        assert!(b.apply(&[1.0]).is_err());
        assert!(b.pullback(&[1.0, 2.0]).is_err());
        assert!(BasisMatrix::dense(2, 2, vec![1.0, 2.0, 2.0, 4.0]).is_err());
    }

    #[test]
    fn dense_row_sum_three() {
        let b = BasisMatrix::dense(2, 1, vec![3.0, 1.0]).unwrap();
        assert_eq!(b.apply(&[1.0]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(b.max_abs_row_sum(), 3.0);
    }

    fn canonical_strategy() -> impl Strategy<Value = (BasisMatrix, Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n_u| {
            (1..=n_u).prop_flat_map(move |n_pt| {
                (
                    proptest::collection::vec(-5.0f64..5.0, n_pt),
                    proptest::collection::vec(-5.0f64..5.0, n_u),
                )
                    .prop_map(move |(w, g)| (BasisMatrix::canonical(n_u, n_pt).unwrap(), w, g))
            })
        })
    }

    proptest! {
        #[test]
        fn canonical_structure((b, w, g) in canonical_strategy()) {
            // one nonzero per row, disjoint consecutive supports
            let mut prev = 0;
            for r in 0..b.n_rows() {
                let nz: Vec<usize> = (0..b.n_cols()).filter(|&c| b.entry(r, c) != 0.0).collect();
                prop_assert_eq!(nz.len(), 1);
                prop_assert!(nz[0] >= prev);
                prev = nz[0];
            }
            let bw = b.apply(&w).unwrap();
            prop_assert_eq!(linf(&bw), linf(&w));
            let lhs: f64 = bw.iter().zip(&g).map(|(a, c)| a * c).sum();
            let rhs: f64 = w.iter().zip(b.pullback(&g).unwrap()).map(|(a, c)| a * c).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn dense_norm_equivalence(
            entries in proptest::collection::vec(-2.0f64..2.0, 12),
            w in proptest::collection::vec(-3.0f64..3.0, 3),
            g in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let Ok(b) = BasisMatrix::dense(4, 3, entries) else { return Ok(()); };
            let bw = b.apply(&w).unwrap();
            let c2 = b.max_abs_row_sum();
            let c1 = b.lower_norm_constant();
            prop_assert!(linf(&bw) <= c2 * linf(&w) + 1e-12);
            prop_assert!(c1 * linf(&w) <= linf(&bw) * (1.0 + 1e-9) + 1e-12);
            let lhs: f64 = bw.iter().zip(&g).map(|(a, c)| a * c).sum();
            let rhs: f64 = w.iter().zip(b.pullback(&g).unwrap()).map(|(a, c)| a * c).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
