//! Compressed sparse row storage, scalar and with small dense blocks.

use crate::basis::TensorBasis3D;
use crate::error::{Error, Result};

/// Square operator acting on `f64` slices.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Scalar CSR matrix. Symmetric matrices are stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Symmetric sparse matrices use the same layout; symmetry is checked, not
/// exploited in storage.
pub type SparseSymMatrix = CsrMatrix;

impl CsrMatrix {
    /// Builds an `n x n` matrix from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        if sorted.iter().any(|&(r, c, _)| r >= n || c >= n) {
            return Err(Error::InvalidMatrix("triplet index out of range".into()));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut trip = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix("dense matrix is not square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &trip)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn symmetry_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                err = err.max((v - self.get(j, i)).abs());
            }
        }
        err
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_error() <= rel_tol * self.max_abs()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Principal submatrix on the rows/columns where `keep` is true.
    pub fn restrict(&self, keep: &[bool]) -> Self {
        let mut map = vec![usize::MAX; self.n];
        let mut m = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = m;
                m += 1;
            }
        }
        let mut trip = Vec::new();
        for i in 0..self.n {
            if !keep[i] {
                continue;
            }
            for (j, v) in self.row(i) {
                if keep[j] {
                    trip.push((map[i], map[j], v));
                }
            }
        }
        Self::from_triplets(m, &trip).expect("restricted indices are in range")
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }
}

/// Block sparsity pattern over basis functions: row `alpha` lists every
/// `beta` whose support overlaps that of `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPattern {
    nrows: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
}

impl BlockPattern {
    pub fn from_basis(basis: &TensorBasis3D) -> Self {
        let dims = basis.dims();
        let deg = basis.degrees();
        let n = basis.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for alpha in 0..n {
            let i = basis.multi_index(alpha);
            let range = |d: usize| i[d].saturating_sub(deg[d])..(i[d] + deg[d] + 1).min(dims[d]);
            for j3 in range(2) {
                for j2 in range(1) {
                    for j1 in range(0) {
                        col_idx.push(basis.flat_index([j1, j2, j3]) as u32);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows: n,
            row_ptr,
            col_idx,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Storage position of block `(row, col)`, if present.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let r = self.row_ptr[row]..self.row_ptr[row + 1];
        self.col_idx[r.clone()]
            .binary_search(&(col as u32))
            .ok()
            .map(|k| r.start + k)
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }

    pub fn col(&self, pos: usize) -> usize {
        self.col_idx[pos] as usize
    }
}

/// Sparse matrix made of dense `B x B` blocks. Scalar index of component
/// `c` of block row `alpha` is `B * alpha + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCsrMatrix<const B: usize> {
    pattern: std::sync::Arc<BlockPattern>,
    values: Vec<[[f64; B]; B]>,
}

impl<const B: usize> BlockCsrMatrix<B> {
    pub fn zeros(pattern: std::sync::Arc<BlockPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![[[0.0; B]; B]; nnz],
        }
    }

    pub fn pattern(&self) -> &BlockPattern {
        &self.pattern
    }

    pub fn block_rows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn block(&self, pos: usize) -> &[[f64; B]; B] {
        &self.values[pos]
    }

    pub fn block_mut(&mut self, pos: usize) -> &mut [[f64; B]; B] {
        &mut self.values[pos]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self.pattern.position(i / B, j / B) {
            Some(pos) => self.values[pos][i % B][j % B],
            None => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; B * self.block_rows()];
        for a in 0..self.block_rows() {
            if let Some(pos) = self.pattern.position(a, a) {
                for c in 0..B {
                    d[B * a + c] = self.values[pos][c][c];
                }
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|b| b.iter().flatten())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn symmetry_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for a in 0..self.block_rows() {
            for pos in self.pattern.row_range(a) {
                let b = self.pattern.col(pos);
                let tpos = self.pattern.position(b, a).expect("pattern is symmetric");
                for r in 0..B {
                    for c in 0..B {
                        err = err.max((self.values[pos][r][c] - self.values[tpos][c][r]).abs());
                    }
                }
            }
        }
        err
    }

    /// Expands to scalar CSR, dropping exact zeros.
    pub fn to_csr(&self) -> CsrMatrix {
        let mut trip = Vec::new();
        for a in 0..self.block_rows() {
            for pos in self.pattern.row_range(a) {
                let b = self.pattern.col(pos);
                for r in 0..B {
                    for c in 0..B {
                        let v = self.values[pos][r][c];
                        if v != 0.0 {
                            trip.push((B * a + r, B * b + c, v));
                        }
                    }
                }
            }
        }
        CsrMatrix::from_triplets(B * self.block_rows(), &trip).expect("indices in range")
    }
}

impl<const B: usize> LinearOperator for BlockCsrMatrix<B> {
    fn dim(&self) -> usize {
        B * self.block_rows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for a in 0..self.block_rows() {
            let mut acc = [0.0; B];
            for pos in self.pattern.row_range(a) {
                let b = self.pattern.col(pos);
                let blk = &self.values[pos];
                let xb = &x[B * b..B * b + B];
                for r in 0..B {
                    let mut s = 0.0;
                    for c in 0..B {
                        s += blk[r][c] * xb[c];
                    }
                    acc[r] += s;
                }
            }
            y[B * a..B * a + B].copy_from_slice(&acc);
        }
    }
}

/// Operator restricted to the unconstrained degrees of freedom: inputs and
/// outputs are zeroed wherever `free` is false.
pub struct Masked<'a, Op: ?Sized> {
    pub op: &'a Op,
    pub free: &'a [bool],
}

impl<Op: LinearOperator + ?Sized> LinearOperator for Masked<'_, Op> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut xm = x.to_vec();
        for (v, &f) in xm.iter_mut().zip(self.free) {
            if !f {
                *v = 0.0;
            }
        }
        self.op.apply(&xm, y);
        for (v, &f) in y.iter_mut().zip(self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::KnotVector;
    use std::sync::Arc;

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert!(CsrMatrix::from_triplets(2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn matvec_and_symmetry() {
        let a = CsrMatrix::from_dense(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let mut y = vec![0.0; 2];
        a.apply(&[1.0, 1.0], &mut y);
        assert_eq!(y, vec![1.0, 1.0]);
        assert!(a.is_symmetric(1e-14));
        let b = CsrMatrix::from_dense(&[vec![2.0, -1.0], vec![0.0, 2.0]]).unwrap();
        assert!(!b.is_symmetric(1e-14));
    }

    #[test]
    fn restriction() {
        let a = CsrMatrix::from_dense(&[
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 5.0],
            vec![3.0, 5.0, 6.0],
        ])
        .unwrap();
        let r = a.restrict(&[true, false, true]);
        assert_eq!(r.to_dense(), vec![vec![1.0, 3.0], vec![3.0, 6.0]]);
    }

    #[test]
    fn block_pattern_for_bernstein_patch_is_dense() {
        let kv = KnotVector::uniform(3, 2).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv]);
        let p = BlockPattern::from_basis(&basis);
        assert_eq!(p.nnz(), 27 * 27);
        assert_eq!(p.position(3, 26), Some(3 * 27 + 26));
    }

    #[test]
    fn block_matrix_expands_consistently() {
        let kv = KnotVector::uniform(4, 1).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv]);
        let pattern = Arc::new(BlockPattern::from_basis(&basis));
        let mut m = BlockCsrMatrix::<2>::zeros(pattern.clone());
        for a in 0..pattern.nrows() {
            for pos in pattern.row_range(a) {
                let b = pattern.col(pos);
                let v = (a * 7 + b * 3) as f64;
                *m.block_mut(pos) = [[v, 1.0], [2.0, -v]];
            }
        }
        let csr = m.to_csr();
        let x: Vec<f64> = (0..m.dim()).map(|i| (i as f64).sin()).collect();
        let (mut y1, mut y2) = (vec![0.0; m.dim()], vec![0.0; m.dim()]);
        m.apply(&x, &mut y1);
        csr.apply(&x, &mut y2);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(csr.get(1, 2), m.get(1, 2));
    }

    #[test]
    fn masked_operator_zeroes_constrained_entries() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let free = [true, false];
        let m = Masked { op: &a, free: &free };
        let mut y = vec![0.0; 2];
        m.apply(&[1.0, 5.0], &mut y);
        assert_eq!(y, vec![1.0, 0.0]);
    }
}
