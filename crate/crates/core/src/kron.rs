//! Fast diagonalization of tensor-product operators on affine boxes.
//!
//! For `K = a (D1 x M2 x M3 + M1 x D2 x M3 + M1 x M2 x D3) + s (M1 x M2 x M3)`
//! each direction's generalized eigenproblem `D v = l M v` gives `V` with
//! `V^T M V = I`, `V^T D V = diag(l)`, and
//! `K^{-1} = (V3 x V2 x V1) diag(1 / (a (l1 + l2 + l3) + s)) (V3 x V2 x V1)^T`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::basis::KnotVector;
use crate::error::{Error, Result};
use crate::geometry::gauss_legendre;

/// 1D mass and stiffness matrices of a spline space on an interval of
/// physical length `length`.
pub fn interval_matrices(kv: &KnotVector, length: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = kv.num_basis();
    let p = kv.degree();
    let scale = length / (kv.upper() - kv.lower());
    let (gp, gw) = gauss_legendre(p + 1);
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    for span in kv.spans() {
        let h = span.length();
        let first = span.first_basis(p);
        for (&g, &w) in gp.iter().zip(&gw) {
            let t = span.lower + 0.5 * (g + 1.0) * h;
            let d = kv.ders_in_span(span.index, t, 1);
            let wt = 0.5 * h * w;
            for a in 0..=p {
                for b in 0..=p {
                    mass[(first + a, first + b)] += wt * scale * d[0][a] * d[0][b];
                    stiff[(first + a, first + b)] += wt / scale * d[1][a] * d[1][b];
                }
            }
        }
    }
    (mass, stiff)
}

/// Eigenbasis of one direction, possibly restricted to interior functions.
#[derive(Debug, Clone)]
struct Modes {
    /// Index of the first retained basis function.
    offset: usize,
    /// Number of retained functions.
    len: usize,
    /// Row-major `len x len` eigenvector matrix `V`.
    v: Vec<f64>,
    eig: Vec<f64>,
}

impl Modes {
    fn new(mass: &DMatrix<f64>, stiff: &DMatrix<f64>, dirichlet: bool) -> Result<Self> {
        let n = mass.nrows();
        let (offset, len) = if dirichlet { (1, n.saturating_sub(2)) } else { (0, n) };
        if len == 0 {
            return Err(Error::invalid("no interior basis functions to precondition"));
        }
        let m = mass.view((offset, offset), (len, len)).into_owned();
        let d = stiff.view((offset, offset), (len, len)).into_owned();
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::InvalidMatrix("mass matrix is not positive definite".into()))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidMatrix("singular Cholesky factor".into()))?;
        let mut k = &linv * d * linv.transpose();
        k = (&k + k.transpose()) * 0.5;
        let se = SymmetricEigen::new(k);
        let vmat = linv.transpose() * se.eigenvectors;
        let mut v = vec![0.0; len * len];
        for r in 0..len {
            for c in 0..len {
                v[r * len + c] = vmat[(r, c)];
            }
        }
        let eig = se.eigenvalues.iter().map(|&e| e.max(0.0)).collect();
        Ok(Self { offset, len, v, eig })
    }
}

/// Applies `v^T` (`transpose = true`) or `v` along `axis` of a tensor with
/// shape `dims` stored with axis 0 fastest.
fn mode_product(data: &[f64], out: &mut [f64], dims: [usize; 3], axis: usize, v: &[f64], transpose: bool) {
    let m = dims[axis];
    let inner: usize = dims[..axis].iter().product();
    let outer: usize = dims[axis + 1..].iter().product();
    out.iter_mut().for_each(|o| *o = 0.0);
    for o in 0..outer {
        let base = o * m * inner;
        for k in 0..m {
            let dst = base + k * inner;
            for l in 0..m {
                let coef = if transpose { v[l * m + k] } else { v[k * m + l] };
                if coef == 0.0 {
                    continue;
                }
                let src = base + l * inner;
                for i in 0..inner {
                    out[dst + i] += coef * data[src + i];
                }
            }
        }
    }
}

/// Inverse of a shifted tensor-product Laplacian (or mass matrix) on a box.
#[derive(Debug, Clone)]
pub struct KronInverse {
    full_dims: [usize; 3],
    modes: [Modes; 3],
    inv_eig: Vec<f64>,
}

impl KronInverse {
    /// `mats[d]` holds the `(mass, stiffness)` pair of direction `d`.
    /// `dirichlet[d]` drops the first and last function of that direction.
    pub fn new(
        mats: &[(DMatrix<f64>, DMatrix<f64>); 3],
        dirichlet: [bool; 3],
        laplace: f64,
        shift: f64,
    ) -> Result<Self> {
        let modes = [
            Modes::new(&mats[0].0, &mats[0].1, dirichlet[0])?,
            Modes::new(&mats[1].0, &mats[1].1, dirichlet[1])?,
            Modes::new(&mats[2].0, &mats[2].1, dirichlet[2])?,
        ];
        let full_dims = [mats[0].0.nrows(), mats[1].0.nrows(), mats[2].0.nrows()];
        let top = |m: &Modes| m.eig.iter().fold(0.0_f64, |a, &b| a.max(b));
        let scale = laplace.abs() * (top(&modes[0]) + top(&modes[1]) + top(&modes[2])) + shift.abs();
        let mut inv_eig = Vec::with_capacity(modes.iter().map(|m| m.len).product());
        for &e3 in &modes[2].eig {
            for &e2 in &modes[1].eig {
                for &e1 in &modes[0].eig {
                    let d = laplace * (e1 + e2 + e3) + shift;
                    if !(d > 1e-12 * scale) {
                        return Err(Error::InvalidMatrix("singular tensor-product operator".into()));
                    }
                    inv_eig.push(1.0 / d);
                }
            }
        }
        Ok(Self {
            full_dims,
            modes,
            inv_eig,
        })
    }

    /// Number of scalar unknowns on the full grid.
    pub fn full_len(&self) -> usize {
        self.full_dims.iter().product()
    }

    /// `z[offset + stride * alpha] = (K^{-1} r)[alpha]` over the full grid;
    /// entries outside the retained sub-grid are set to zero.
    pub fn apply_strided(&self, r: &[f64], z: &mut [f64], stride: usize, offset: usize) {
        let sub = [self.modes[0].len, self.modes[1].len, self.modes[2].len];
        let [n1, n2, n3] = self.full_dims;
        let o = [self.modes[0].offset, self.modes[1].offset, self.modes[2].offset];
        let total = sub[0] * sub[1] * sub[2];
        let mut a = vec![0.0; total];
        let mut b = vec![0.0; total];
        for i3 in 0..sub[2] {
            for i2 in 0..sub[1] {
                for i1 in 0..sub[0] {
                    let g = (i1 + o[0]) + n1 * ((i2 + o[1]) + n2 * (i3 + o[2]));
                    a[i1 + sub[0] * (i2 + sub[1] * i3)] = r[offset + stride * g];
                }
            }
        }
        mode_product(&a, &mut b, sub, 0, &self.modes[0].v, true);
        mode_product(&b, &mut a, sub, 1, &self.modes[1].v, true);
        mode_product(&a, &mut b, sub, 2, &self.modes[2].v, true);
        for (v, s) in b.iter_mut().zip(&self.inv_eig) {
            *v *= s;
        }
        mode_product(&b, &mut a, sub, 0, &self.modes[0].v, false);
        mode_product(&a, &mut b, sub, 1, &self.modes[1].v, false);
        mode_product(&b, &mut a, sub, 2, &self.modes[2].v, false);
        for g in 0..n1 * n2 * n3 {
            z[offset + stride * g] = 0.0;
        }
        for i3 in 0..sub[2] {
            for i2 in 0..sub[1] {
                for i1 in 0..sub[0] {
                    let g = (i1 + o[0]) + n1 * ((i2 + o[1]) + n2 * (i3 + o[2]));
                    z[offset + stride * g] = a[i1 + sub[0] * (i2 + sub[1] * i3)];
                }
            }
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.apply_strided(r, z, 1, 0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_graded_knot_vector, Grading, TensorBasis3D};
    use crate::geometry::Patch;
    use crate::sparse::{CsrMatrix, LinearOperator};

    fn kron3(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        // Index i1 + n1 (i2 + n2 i3): c (direction 3) is the slowest factor.
        c.kronecker(b).kronecker(a)
    }

    #[test]
    fn interval_matrices_integrate_exactly() {
        let kv = KnotVector::uniform(5, 2).unwrap();
        let (m, d) = interval_matrices(&kv, 3.0);
        // Sum of all mass entries is the interval length; stiffness annihilates constants.
        assert!((m.sum() - 3.0).abs() < 1e-13);
        let ones = DMatrix::from_element(5, 1, 1.0);
        assert!((&d * ones).amax() < 1e-13);
    }

    fn dense_operator(kvs: &[KnotVector; 3], lengths: [f64; 3], laplace: f64, shift: f64) -> DMatrix<f64> {
        let mats: Vec<_> = (0..3).map(|d| interval_matrices(&kvs[d], lengths[d])).collect();
        let (m1, d1) = &mats[0];
        let (m2, d2) = &mats[1];
        let (m3, d3) = &mats[2];
        (kron3(d1, m2, m3) + kron3(m1, d2, m3) + kron3(m1, m2, d3)) * laplace + kron3(m1, m2, m3) * shift
    }

    #[test]
    fn inverse_matches_dense_solve() {
        let kvs = [
            KnotVector::uniform(5, 2).unwrap(),
            make_graded_knot_vector(6, 2, Grading::centered(2.0)).unwrap(),
            KnotVector::uniform(4, 1).unwrap(),
        ];
        let lengths = [2.0, 3.0, 0.5];
        let mats = [
            interval_matrices(&kvs[0], lengths[0]),
            interval_matrices(&kvs[1], lengths[1]),
            interval_matrices(&kvs[2], lengths[2]),
        ];
        let k = dense_operator(&kvs, lengths, 1.5, 0.3);
        let inv = KronInverse::new(&mats, [false; 3], 1.5, 0.3).unwrap();
        let n = k.nrows();
        let r: Vec<f64> = (0..n).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut z = vec![0.0; n];
        inv.apply(&r, &mut z);
        let kz = &k * DMatrix::from_column_slice(n, 1, &z);
        for i in 0..n {
            assert!((kz[i] - r[i]).abs() < 1e-9, "{} vs {}", kz[i], r[i]);
        }
    }

    #[test]
    fn dirichlet_direction_restricts_to_interior() {
        let kvs = [
            KnotVector::uniform(5, 2).unwrap(),
            KnotVector::uniform(4, 2).unwrap(),
            KnotVector::uniform(3, 2).unwrap(),
        ];
        let lengths = [1.0, 1.0, 1.0];
        let mats = [
            interval_matrices(&kvs[0], 1.0),
            interval_matrices(&kvs[1], 1.0),
            interval_matrices(&kvs[2], 1.0),
        ];
        let k = dense_operator(&kvs, lengths, 1.0, 0.0);
        let inv = KronInverse::new(&mats, [true, false, false], 1.0, 0.0).unwrap();
        let basis = TensorBasis3D::with_unit_weights(kvs.clone());
        let n = basis.len();
        let keep: Vec<bool> = (0..n)
            .map(|a| {
                let i = basis.multi_index(a);
                i[0] != 0 && i[0] != 4
            })
            .collect();
        let dense: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| k[(i, j)]).collect()).collect();
        let kr = CsrMatrix::from_dense(&dense).unwrap().restrict(&keep);
        let r: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut z = vec![0.0; n];
        inv.apply(&r, &mut z);
        let zr: Vec<f64> = z.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
        let rr: Vec<f64> = r.iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| *v).collect();
        let mut kz = vec![0.0; zr.len()];
        kr.apply(&zr, &mut kz);
        for (a, b) in kz.iter().zip(&rr) {
            assert!((a - b).abs() < 1e-9);
        }
        for (v, &k) in z.iter().zip(&keep) {
            if !k {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn singular_operator_is_rejected() {
        let kv = KnotVector::uniform(3, 2).unwrap();
        let mats = [
            interval_matrices(&kv, 1.0),
            interval_matrices(&kv, 1.0),
            interval_matrices(&kv, 1.0),
        ];
        assert!(KronInverse::new(&mats, [false; 3], 1.0, 0.0).is_err());
    }

    #[test]
    fn strided_application_touches_only_its_slot() {
        let kv = KnotVector::uniform(3, 1).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv.clone()]);
        let _patch = Patch::affine_box(basis, [1.0; 3], [0.0; 3]).unwrap();
        let mats = [
            interval_matrices(&kv, 1.0),
            interval_matrices(&kv, 1.0),
            interval_matrices(&kv, 1.0),
        ];
        let inv = KronInverse::new(&mats, [false; 3], 0.0, 1.0).unwrap();
        let n = inv.full_len();
        let r = vec![1.0; 2 * n];
        let mut z = vec![7.0; 2 * n];
        inv.apply_strided(&r, &mut z, 2, 1);
        for a in 0..n {
            assert_eq!(z[2 * a], 7.0);
        }
        // The inverse mass matrix maps the load of a constant to the constant 1 / volume.
        let mut zc = vec![0.0; n];
        let mut load = vec![0.0; n];
        let (m, _) = interval_matrices(&kv, 1.0);
        for a in 0..n {
            let i = [a % 3, (a / 3) % 3, a / 9];
            load[a] = (0..3).map(|d| m.row(i[d]).sum()).product();
        }
        inv.apply(&load, &mut zc);
        assert!(zc.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
