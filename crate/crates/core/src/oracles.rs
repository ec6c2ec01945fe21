//! Closed-form and brute-force references: infinite-medium straight
//! dislocation stresses, the Poincaré homotopy of the torsion, and central
//! finite differences.
//!
//! Stress signs follow the convention of the solver: `b` is the closed-loop
//! integral of `vartheta`, so the elastic distortion `grad u - Theta` jumps
//! by `-b` and the fields below carry the opposite sign of the textbook
//! expressions written for a displacement jump of `+b`.

use std::f64::consts::PI;
use std::io::Write;

use crate::dislocation::{DislocationSpec, TorsionField};
use crate::error::{Error, Result};
use crate::geometry::gauss_legendre;

/// Material and defect parameters of the classical solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolterraParams {
    pub shear_modulus: f64,
    pub poisson_ratio: f64,
    pub burgers: f64,
    pub core_radius: f64,
}

impl VolterraParams {
    pub fn new(shear_modulus: f64, poisson_ratio: f64, burgers: f64, core_radius: f64) -> Result<Self> {
        if !(shear_modulus > 0.0) {
            return Err(Error::invalid("shear modulus must be positive"));
        }
        if !(core_radius > 0.0) {
            return Err(Error::invalid("core radius must be positive"));
        }
        if !(poisson_ratio > -1.0 && poisson_ratio < 0.5) {
            return Err(Error::invalid(format!("Poisson ratio {poisson_ratio} outside (-1, 0.5)")));
        }
        Ok(Self {
            shear_modulus,
            poisson_ratio,
            burgers,
            core_radius,
        })
    }

    /// `mu b / (2 pi R)`.
    pub fn screw_scale(&self) -> f64 {
        self.shear_modulus * self.burgers / (2.0 * PI * self.core_radius)
    }

    /// `mu b / (2 pi (1 - nu) R)`.
    pub fn edge_scale(&self) -> f64 {
        self.screw_scale() / (1.0 - self.poisson_ratio)
    }
}

fn radius2(x1: f64, x2: f64) -> Result<f64> {
    let r2 = x1 * x1 + x2 * x2;
    if r2 == 0.0 || !r2.is_finite() {
        return Err(Error::Singularity(format!("classical field undefined at ({x1}, {x2})")));
    }
    Ok(r2)
}

/// `(S^23, S^31)` of a screw dislocation along `x^3` through the origin.
pub fn volterra_screw_stress(x1: f64, x2: f64, p: &VolterraParams) -> Result<(f64, f64)> {
    let r2 = radius2(x1, x2)?;
    let k = p.shear_modulus * p.burgers / (2.0 * PI);
    Ok((-k * x1 / r2, k * x2 / r2))
}

/// `(S^11, S^22, S^33, S^12)` of an edge dislocation along `x^3` with
/// Burgers vector along `x^1`, in plane strain.
pub fn volterra_edge_stress(x1: f64, x2: f64, p: &VolterraParams) -> Result<(f64, f64, f64, f64)> {
    let r2 = radius2(x1, x2)?;
    let d = p.shear_modulus * p.burgers / (2.0 * PI * (1.0 - p.poisson_ratio));
    let r4 = r2 * r2;
    let s11 = d * x2 * (3.0 * x1 * x1 + x2 * x2) / r4;
    let s22 = -d * x2 * (x1 * x1 - x2 * x2) / r4;
    let s12 = -d * x1 * (x1 * x1 - x2 * x2) / r4;
    Ok((s11, s22, p.poisson_ratio * (s11 + s22), s12))
}

/// Values of `t` in `(0, 1)` where the segment `x0 + t v` crosses a core
/// boundary, where the taper profile has a kink.
fn core_crossings(spec: &DislocationSpec, x0: [f64; 3], v: [f64; 3], out: &mut Vec<f64>) {
    let n = spec.line_direction;
    let w = [x0[0] - spec.center[0], x0[1] - spec.center[1], x0[2]];
    let perp = |a: [f64; 3]| {
        let s = a[0] * n[0] + a[1] * n[1] + a[2] * n[2];
        [a[0] - s * n[0], a[1] - s * n[1], a[2] - s * n[2]]
    };
    let (pw, pv) = (perp(w), perp(v));
    let a: f64 = pv.iter().map(|c| c * c).sum();
    let b: f64 = pw.iter().zip(&pv).map(|(p, q)| p * q).sum();
    let c: f64 = pw.iter().map(|c| c * c).sum::<f64>() - spec.core_radius * spec.core_radius;
    if a == 0.0 {
        return;
    }
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return;
    }
    let s = disc.sqrt();
    for t in [(-b - s) / a, (-b + s) / a] {
        if t > 0.0 && t < 1.0 {
            out.push(t);
        }
    }
}

/// Integrand `t T^i_kj(x0 + t v) v^k` of the homotopy at `t`.
fn homotopy_integrand(torsion: &TorsionField, x0: [f64; 3], v: [f64; 3], t: f64) -> [[f64; 3]; 3] {
    let x = [x0[0] + t * v[0], x0[1] + t * v[1], x0[2] + t * v[2]];
    let tau = torsion.coefficients(x);
    std::array::from_fn(|i| std::array::from_fn(|j| t * (0..3).map(|k| tau.component(i, k, j) * v[k]).sum::<f64>()))
}

fn gauss_on(
    torsion: &TorsionField,
    x0: [f64; 3],
    v: [f64; 3],
    (a, b): (f64, f64),
    nodes: &(Vec<f64>, Vec<f64>),
    pieces: usize,
) -> [[f64; 3]; 3] {
    let mut acc = [[0.0; 3]; 3];
    let h = (b - a) / pieces as f64;
    for p in 0..pieces {
        let lo = a + p as f64 * h;
        for (&s, &w) in nodes.0.iter().zip(&nodes.1) {
            let f = homotopy_integrand(torsion, x0, v, lo + 0.5 * (s + 1.0) * h);
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += 0.5 * w * h * f[i][j];
                }
            }
        }
    }
    acc
}

/// Poincaré homotopy `(H tau)^i_j(x) = int_0^1 t T^i_kj(x0 + t(x - x0)) (x - x0)^k dt`.
///
/// The interval is split where the ray crosses a core boundary; each piece
/// uses composite Gauss with `quad_order` points, halving the panels until
/// successive results differ by at most `1e-10`.
pub fn homotopy_theta(torsion: &TorsionField, x: [f64; 3], basepoint: [f64; 3], quad_order: usize) -> Result<[[f64; 3]; 3]> {
    if quad_order == 0 {
        return Err(Error::invalid("quadrature order must be positive"));
    }
    let v = [x[0] - basepoint[0], x[1] - basepoint[1], x[2] - basepoint[2]];
    let mut breaks = vec![0.0, 1.0];
    for s in torsion.sources() {
        core_crossings(s, basepoint, v, &mut breaks);
    }
    breaks.sort_by(f64::total_cmp);
    let nodes = gauss_legendre(quad_order);
    let mut total = [[0.0; 3]; 3];
    for seg in breaks.windows(2) {
        let span = (seg[0], seg[1]);
        let mut pieces = 1;
        let mut prev = gauss_on(torsion, basepoint, v, span, &nodes, pieces);
        loop {
            pieces *= 2;
            let next = gauss_on(torsion, basepoint, v, span, &nodes, pieces);
            let diff = (0..9).map(|k| (next[k / 3][k % 3] - prev[k / 3][k % 3]).abs()).fold(0.0, f64::max);
            prev = next;
            if diff <= 1e-10 || pieces >= 1 << 16 {
                break;
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                total[i][j] += prev[i][j];
            }
        }
    }
    Ok(total)
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        p[k] = x[k] + step;
        let fp = f(&p);
        p[k] = x[k] - step;
        let fm = f(&p);
        p[k] = x[k];
        g.push((fp - fm) / (2.0 * step));
    }
    Ok(g)
}

/// Writes the classical fields sampled along `from -> to` as CSV, stresses
/// normalized by the respective scale. Points on the dislocation line are
/// written as `NaN`.
pub fn write_oracle_profile<W: Write>(p: &VolterraParams, from: [f64; 2], to: [f64; 2], samples: usize, mut out: W) -> Result<()> {
    if samples < 2 {
        return Err(Error::invalid("a profile needs at least two samples"));
    }
    writeln!(out, "s,x1,x2,S23_screw,S31_screw,S11_edge,S22_edge,S33_edge,S12_edge")?;
    let (ds, de) = (p.screw_scale(), p.edge_scale());
    let len = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        let x1 = from[0] + t * (to[0] - from[0]);
        let x2 = from[1] + t * (to[1] - from[1]);
        let (a, b) = volterra_screw_stress(x1, x2, p).unwrap_or((f64::NAN, f64::NAN));
        let e = volterra_edge_stress(x1, x2, p).unwrap_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN));
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            t * len / p.core_radius,
            x1,
            x2,
            a / ds,
            b / ds,
            e.0 / de,
            e.1 / de,
            e.2 / de,
            e.3 / de
        )?;
    }
    Ok(())
}
