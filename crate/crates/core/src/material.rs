//! St. Venant-Kirchhoff response relative to the intermediate metric
//! `g = vartheta^T vartheta`.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Tensor4 = [[[[f64; 3]; 3]; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub shear_modulus: f64,
    pub poisson_ratio: f64,
}

impl Material {
    pub fn new(shear_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let m = Self {
            shear_modulus,
            poisson_ratio,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shear_modulus > 0.0 && self.shear_modulus.is_finite()) {
            return Err(Error::validation("material.mu", "shear modulus must be positive"));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::validation(
                "material.nu",
                format!("Poisson ratio {} outside (-1, 0.5)", self.poisson_ratio),
            ));
        }
        Ok(())
    }

    /// `2 mu nu / (1 - 2 nu)`.
    pub fn lame_lambda(&self) -> f64 {
        2.0 * self.shear_modulus * self.poisson_ratio / (1.0 - 2.0 * self.poisson_ratio)
    }
}

impl Default for Material {
    fn default() -> Self {
        Self {
            shear_modulus: 1.0,
            poisson_ratio: 0.3,
        }
    }
}

pub(crate) fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub(crate) fn transpose(a: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub(crate) fn inverse(a: &Mat3) -> Option<(Mat3, f64)> {
    let det = crate::plastic::det3(a);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
    let inv = [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ];
    Some((inv.map(|r| r.map(|v| v / det)), det))
}

/// `E_kl = 1/2 (F^i_k F^i_l - vartheta^i_k vartheta^i_l)`.
pub fn green_strain(grad_y: &Mat3, vartheta: &Mat3) -> Mat3 {
    std::array::from_fn(|k| {
        std::array::from_fn(|l| {
            0.5 * (0..3)
                .map(|i| grad_y[i][k] * grad_y[i][l] - vartheta[i][k] * vartheta[i][l])
                .sum::<f64>()
        })
    })
}

/// `C^ijkl = lambda G^ij G^kl + mu (G^ik G^jl + G^il G^jk)` for the inverse
/// metric `G`.
pub fn elastic_coefficients(g_inv: &Mat3, material: &Material) -> Result<Tensor4> {
    if material.poisson_ratio >= 0.5 {
        return Err(Error::invalid("incompressible limit nu = 0.5 is not supported"));
    }
    material.validate()?;
    let lam = material.lame_lambda();
    let mu = material.shear_modulus;
    let g = g_inv;
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            std::array::from_fn(|k| {
                std::array::from_fn(|l| lam * g[i][j] * g[k][l] + mu * (g[i][k] * g[j][l] + g[i][l] * g[j][k]))
            })
        })
    }))
}

/// `S^ij = C^ijkl E_kl`.
pub fn second_pk_stress(c: &Tensor4, e: &Mat3) -> Mat3 {
    std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mut s = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    s += c[i][j][k][l] * e[k][l];
                }
            }
            s
        })
    })
}

/// Pointwise response computed in the frame where the intermediate metric
/// is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvkPoint {
    /// `H = F vartheta^{-1}`.
    pub h: Mat3,
    /// Stress in the transformed frame, `S~ = lambda tr(E~) I + 2 mu E~`.
    pub s_tilde: Mat3,
    /// `S = vartheta^{-1} S~ vartheta^{-T}`.
    pub s: Mat3,
    /// `1/2 S : E` per unit intermediate volume.
    pub energy_density: f64,
}

/// SVK response for deformation gradient `f` and `q = vartheta^{-1}`.
///
/// With `H = F q`, the transformed strain is `E~ = (H^T H - I) / 2`; this is
/// algebraically identical to contracting the full `C^ijkl` with `E`.
pub fn svk_response(f: &Mat3, q: &Mat3, material: &Material) -> SvkPoint {
    let lam = material.lame_lambda();
    let mu = material.shear_modulus;
    let h = matmul(f, q);
    let mut e = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in k..3 {
            let v = 0.5 * ((0..3).map(|i| h[i][k] * h[i][l]).sum::<f64>() - if k == l { 1.0 } else { 0.0 });
            e[k][l] = v;
            e[l][k] = v;
        }
    }
    let tr = e[0][0] + e[1][1] + e[2][2];
    let mut st = [[0.0; 3]; 3];
    let mut ee = 0.0;
    for k in 0..3 {
        for l in 0..3 {
            st[k][l] = 2.0 * mu * e[k][l] + if k == l { lam * tr } else { 0.0 };
            ee += e[k][l] * e[k][l];
        }
    }
    let s = matmul(&matmul(q, &st), &transpose(q));
    SvkPoint {
        h,
        s_tilde: st,
        s,
        energy_density: 0.5 * lam * tr * tr + mu * ee,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const I: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn random_mat(rng: &mut ChaCha8Rng, scale: f64) -> Mat3 {
        std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 } + scale * rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn green_strain_examples() {
        assert_eq!(green_strain(&I, &I), [[0.0; 3]; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = random_mat(&mut rng, 0.3);
        let e = green_strain(&th, &th);
        assert!(e.iter().flatten().all(|v| v.abs() < 1e-15));
        let f = [[1.1, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let e = green_strain(&f, &I);
        assert_relative_eq!(e[0][0], 0.105, epsilon = 1e-15);
        assert_eq!(e[1][1], 0.0);
        assert_eq!(e[0][1], 0.0);
    }

    #[test]
    fn coefficient_examples() {
        let m0 = Material::new(2.0, 0.0).unwrap();
        let c = elastic_coefficients(&I, &m0).unwrap();
        assert_eq!(c[0][1][0][1], 2.0);
        assert_eq!(c[0][0][1][1], 0.0);
        let m = Material::new(1.5, 0.3).unwrap();
        let c = elastic_coefficients(&I, &m).unwrap();
        assert_relative_eq!(c[0][0][0][0], 2.0 * 1.5 * 0.3 / 0.4 + 3.0, epsilon = 1e-14);
        let bad = Material {
            shear_modulus: 1.0,
            poisson_ratio: 0.5,
        };
        assert!(elastic_coefficients(&I, &bad).is_err());
        assert!(Material::new(1.0, 0.6).is_err());
        assert!(Material::new(-1.0, 0.2).is_err());
    }

    #[test]
    fn coefficient_symmetries_for_random_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 0.4);
        let g = matmul(&transpose(&a), &a);
        let c = elastic_coefficients(&g, &Material::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert_relative_eq!(c[i][j][k][l], c[k][l][i][j], epsilon = 1e-14);
                        assert_relative_eq!(c[i][j][k][l], c[j][i][k][l], epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn stress_examples() {
        let m = Material::new(1.0, 0.0).unwrap();
        let c = elastic_coefficients(&I, &m).unwrap();
        assert_eq!(second_pk_stress(&c, &[[0.0; 3]; 3]), [[0.0; 3]; 3]);
        let gamma = 0.02;
        let e = [[0.0, gamma / 2.0, 0.0], [gamma / 2.0, 0.0, 0.0], [0.0; 3]];
        let s = second_pk_stress(&c, &e);
        assert_relative_eq!(s[0][1], gamma, epsilon = 1e-16);
        let m = Material::new(1.0, 0.25).unwrap();
        let c = elastic_coefficients(&I, &m).unwrap();
        let eps = 1e-3;
        let s = second_pk_stress(&c, &[[eps, 0.0, 0.0], [0.0, eps, 0.0], [0.0, 0.0, eps]]);
        let expect = (3.0 * m.lame_lambda() + 2.0) * eps;
        for i in 0..3 {
            assert_relative_eq!(s[i][i], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn fast_path_matches_full_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mat = Material::new(1.3, 0.27).unwrap();
        for _ in 0..20 {
            let th = random_mat(&mut rng, 0.3);
            let f = random_mat(&mut rng, 0.3);
            let (q, _) = inverse(&th).unwrap();
            let g_inv = matmul(&q, &transpose(&q));
            let e = green_strain(&f, &th);
            let c = elastic_coefficients(&g_inv, &mat).unwrap();
            let s = second_pk_stress(&c, &e);
            let p = svk_response(&f, &q, &mat);
            let mut w = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(p.s[i][j], s[i][j], epsilon = 1e-12, max_relative = 1e-10);
                    w += 0.5 * s[i][j] * e[i][j];
                }
            }
            assert_relative_eq!(p.energy_density, w, epsilon = 1e-13, max_relative = 1e-10);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_mat(&mut rng, 0.5);
        let (b, det) = inverse(&a).unwrap();
        assert_relative_eq!(det, crate::plastic::det3(&a));
        let p = matmul(&a, &b);
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - I[i][j]).abs() < 1e-14);
            }
        }
    }
}
