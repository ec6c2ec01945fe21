//! NURBS geometry map, Jacobians and Gauss quadrature over knot spans.

use nalgebra::Matrix3;

use crate::basis::{rationalize, KnotSpan, TensorBasis3D};
use crate::error::{Error, Result};

/// Axis-aligned box described by its extents and center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub extents: [f64; 3],
    pub center: [f64; 3],
}

impl BoxDomain {
    pub fn lower(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.center[d] - 0.5 * self.extents[d])
    }

    pub fn upper(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.center[d] + 0.5 * self.extents[d])
    }

    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        let (lo, hi) = (self.lower(), self.upper());
        (0..3).all(|d| x[d] >= lo[d] - 1e-12 * self.extents[d] && x[d] <= hi[d] + 1e-12 * self.extents[d])
    }
}

/// Jacobian of the geometry map at a parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian {
    /// `J[(i, k)] = dx^i / dt^k`.
    pub matrix: Matrix3<f64>,
    pub det: f64,
    pub inverse: Matrix3<f64>,
}

/// Single-patch NURBS solid: basis, control points and (for the shipped
/// models) the affine box it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    basis: TensorBasis3D,
    control_points: Vec<[f64; 3]>,
    box_domain: Option<BoxDomain>,
}

impl Patch {
    /// General patch from arbitrary control points.
    pub fn new(basis: TensorBasis3D, control_points: Vec<[f64; 3]>) -> Result<Self> {
        if control_points.len() != basis.len() {
            return Err(Error::InvalidPatch(format!(
                "expected {} control points, got {}",
                basis.len(),
                control_points.len()
            )));
        }
        Ok(Self {
            basis,
            control_points,
            box_domain: None,
        })
    }

    /// Affine box `x = center + L (t - 1/2)` (parameters normalised to the
    /// knot interval). Control points sit at the mapped Greville abscissae.
    pub fn affine_box(basis: TensorBasis3D, extents: [f64; 3], center: [f64; 3]) -> Result<Self> {
        if !basis.has_unit_weights() {
            return Err(Error::UnsupportedGeometry(
                "affine box patches require unit weights".into(),
            ));
        }
        if extents.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!("box extents must be positive, got {extents:?}")));
        }
        let knots = basis.knots();
        let grev: Vec<Vec<f64>> = (0..3)
            .map(|d| {
                let (lo, hi) = (knots[d].lower(), knots[d].upper());
                knots[d]
                    .greville()
                    .into_iter()
                    .map(|g| center[d] + extents[d] * ((g - lo) / (hi - lo) - 0.5))
                    .collect()
            })
            .collect();
        let [n1, n2, n3] = basis.dims();
        let mut control_points = Vec::with_capacity(basis.len());
        for i3 in 0..n3 {
            for i2 in 0..n2 {
                for i1 in 0..n1 {
                    control_points.push([grev[0][i1], grev[1][i2], grev[2][i3]]);
                }
            }
        }
        Ok(Self {
            basis,
            control_points,
            box_domain: Some(BoxDomain { extents, center }),
        })
    }

    pub fn basis(&self) -> &TensorBasis3D {
        &self.basis
    }

    pub fn control_points(&self) -> &[[f64; 3]] {
        &self.control_points
    }

    pub fn box_domain(&self) -> Option<&BoxDomain> {
        self.box_domain.as_ref()
    }

    pub fn num_basis(&self) -> usize {
        self.basis.len()
    }

    /// Parameter-space corners `(lower, upper)` per direction.
    pub fn parameter_bounds(&self) -> [[f64; 2]; 3] {
        let k = self.basis.knots();
        std::array::from_fn(|d| [k[d].lower(), k[d].upper()])
    }

    /// `x(t) = sum_alpha N^alpha(t) a_alpha`.
    pub fn geometry_map(&self, t: [f64; 3]) -> Result<[f64; 3]> {
        let e = self.basis.eval(t)?;
        let mut x = [0.0; 3];
        for (k, &alpha) in e.indices.iter().enumerate() {
            let a = self.control_points[alpha];
            for d in 0..3 {
                x[d] += e.values[k] * a[d];
            }
        }
        Ok(x)
    }

    pub fn jacobian(&self, t: [f64; 3]) -> Result<Jacobian> {
        let e = self.basis.eval(t)?;
        let mut j = Matrix3::zeros();
        for (k, &alpha) in e.indices.iter().enumerate() {
            let a = self.control_points[alpha];
            for i in 0..3 {
                for c in 0..3 {
                    j[(i, c)] += a[i] * e.grads[k][c];
                }
            }
        }
        finish_jacobian(j, t)
    }

    /// Basis values and physical gradients `dN/dx` at parameter `t`.
    pub fn eval_physical(&self, t: [f64; 3]) -> Result<PointBasis> {
        let e = self.basis.eval(t)?;
        let mut j = Matrix3::zeros();
        let mut x = [0.0; 3];
        for (k, &alpha) in e.indices.iter().enumerate() {
            let a = self.control_points[alpha];
            for i in 0..3 {
                x[i] += e.values[k] * a[i];
                for c in 0..3 {
                    j[(i, c)] += a[i] * e.grads[k][c];
                }
            }
        }
        let jac = finish_jacobian(j, t)?;
        let grads = e
            .grads
            .iter()
            .map(|gt| std::array::from_fn(|i| (0..3).map(|c| gt[c] * jac.inverse[(c, i)]).sum()))
            .collect();
        Ok(PointBasis {
            indices: e.indices,
            values: e.values,
            grads,
            x,
        })
    }

    /// Inverse of the geometry map: exact for affine boxes, Newton otherwise.
    pub fn inverse_map(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let bounds = self.parameter_bounds();
        if let Some(b) = &self.box_domain {
            let t: [f64; 3] = std::array::from_fn(|d| {
                let s = (x[d] - b.center[d]) / b.extents[d] + 0.5;
                bounds[d][0] + s * (bounds[d][1] - bounds[d][0])
            });
            return self.clamp_parameter(t, x);
        }
        let mut t: [f64; 3] = std::array::from_fn(|d| 0.5 * (bounds[d][0] + bounds[d][1]));
        for _ in 0..50 {
            let xt = self.geometry_map(t)?;
            let jac = self.jacobian(t)?;
            let r = nalgebra::Vector3::new(x[0] - xt[0], x[1] - xt[1], x[2] - xt[2]);
            let dt = jac.inverse * r;
            for d in 0..3 {
                t[d] = (t[d] + dt[d]).clamp(bounds[d][0], bounds[d][1]);
            }
            if dt.norm() < 1e-14 {
                break;
            }
        }
        let xt = self.geometry_map(t)?;
        let err = (0..3).map(|d| (xt[d] - x[d]).powi(2)).sum::<f64>().sqrt();
        let scale = self
            .control_points
            .iter()
            .flat_map(|a| a.iter().map(|v| v.abs()))
            .fold(1.0_f64, f64::max);
        if err > 1e-10 * scale {
            return Err(Error::invalid(format!("point {x:?} is outside the patch")));
        }
        Ok(t)
    }

    fn clamp_parameter(&self, t: [f64; 3], x: [f64; 3]) -> Result<[f64; 3]> {
        let bounds = self.parameter_bounds();
        let mut out = t;
        for d in 0..3 {
            let (lo, hi) = (bounds[d][0], bounds[d][1]);
            let tol = 1e-12 * (hi - lo);
            if t[d] < lo - tol || t[d] > hi + tol {
                return Err(Error::invalid(format!("point {x:?} is outside the patch")));
            }
            out[d] = t[d].clamp(lo, hi);
        }
        Ok(out)
    }

    /// Non-empty knot-span elements in lexicographic `(i1, i2, i3)` order
    /// (first direction slowest).
    pub fn elements(&self) -> Vec<Element> {
        let spans: Vec<Vec<KnotSpan>> = self.basis.knots().iter().map(|k| k.spans()).collect();
        let mut out = Vec::with_capacity(spans.iter().map(Vec::len).product());
        for s1 in &spans[0] {
            for s2 in &spans[1] {
                for s3 in &spans[2] {
                    out.push(Element {
                        spans: [*s1, *s2, *s3],
                    });
                }
            }
        }
        out
    }

    /// Default rule: `p + 1` Gauss points per direction.
    pub fn default_rule(&self) -> ElementRule {
        let p = self.basis.degrees();
        ElementRule::new([p[0] + 1, p[1] + 1, p[2] + 1]).expect("degree + 1 is a valid Gauss order")
    }

    /// Evaluates basis values, physical gradients and weights (Gauss weight
    /// times span scaling times det J) at every point of `elem`.
    pub fn eval_element(&self, elem: &Element, rule: &ElementRule, out: &mut ElementEval) -> Result<()> {
        let degrees = self.basis.degrees();
        let knots = self.basis.knots();
        // 1D values/derivatives per direction per point.
        let mut one_d: [Vec<(f64, f64, Vec<f64>, Vec<f64>)>; 3] = Default::default();
        for d in 0..3 {
            let span = elem.spans[d];
            let half = 0.5 * span.length();
            let mid = 0.5 * (span.lower + span.upper);
            one_d[d] = rule.points[d]
                .iter()
                .zip(&rule.weights[d])
                .map(|(&xi, &w)| {
                    let t = mid + half * xi;
                    let ders = knots[d].ders_in_span(span.index, t, 1);
                    (t, w * half, ders[0].clone(), ders[1].clone())
                })
                .collect();
        }
        let firsts: [usize; 3] = std::array::from_fn(|d| elem.spans[d].first_basis(degrees[d]));
        let nloc = self.basis.local_len();
        out.indices.clear();
        for c in 0..=degrees[2] {
            for b in 0..=degrees[1] {
                for a in 0..=degrees[0] {
                    out.indices
                        .push(self.basis.flat_index([firsts[0] + a, firsts[1] + b, firsts[2] + c]));
                }
            }
        }
        let npts = rule.len();
        out.nloc = nloc;
        out.npts = npts;
        out.t.clear();
        out.x.clear();
        out.weights.clear();
        out.values.resize(npts * nloc, 0.0);
        out.grads.resize(npts * nloc, [0.0; 3]);

        let affine = self.box_domain.map(|b| {
            let bounds = self.parameter_bounds();
            let scale: [f64; 3] = std::array::from_fn(|d| b.extents[d] / (bounds[d][1] - bounds[d][0]));
            (b, bounds, scale)
        });
        let unit_weights = self.basis.has_unit_weights();

        let mut pt = 0;
        for p1 in &one_d[0] {
            for p2 in &one_d[1] {
                for p3 in &one_d[2] {
                    let t = [p1.0, p2.0, p3.0];
                    let gauss_w = p1.1 * p2.1 * p3.1;
                    let vals = &mut out.values[pt * nloc..(pt + 1) * nloc];
                    let grads = &mut out.grads[pt * nloc..(pt + 1) * nloc];
                    let mut k = 0;
                    for c in 0..=degrees[2] {
                        for b in 0..=degrees[1] {
                            let v23 = p2.2[b] * p3.2[c];
                            let d2 = p2.3[b] * p3.2[c];
                            let d3 = p2.2[b] * p3.3[c];
                            for a in 0..=degrees[0] {
                                vals[k] = p1.2[a] * v23;
                                grads[k] = [p1.3[a] * v23, p1.2[a] * d2, p1.2[a] * d3];
                                k += 1;
                            }
                        }
                    }
                    if !unit_weights {
                        rationalize(self.basis.weights(), &out.indices, vals, grads);
                    }
                    match &affine {
                        Some((b, bounds, scale)) => {
                            let x: [f64; 3] = std::array::from_fn(|d| {
                                b.center[d]
                                    + b.extents[d] * ((t[d] - bounds[d][0]) / (bounds[d][1] - bounds[d][0]) - 0.5)
                            });
                            for g in grads.iter_mut() {
                                for d in 0..3 {
                                    g[d] /= scale[d];
                                }
                            }
                            out.t.push(t);
                            out.x.push(x);
                            out.weights.push(gauss_w * scale[0] * scale[1] * scale[2]);
                        }
                        None => {
                            let mut j = Matrix3::zeros();
                            let mut x = [0.0; 3];
                            for (kk, &alpha) in out.indices.iter().enumerate() {
                                let a = self.control_points[alpha];
                                for i in 0..3 {
                                    x[i] += vals[kk] * a[i];
                                    for c in 0..3 {
                                        j[(i, c)] += a[i] * grads[kk][c];
                                    }
                                }
                            }
                            let jac = finish_jacobian(j, t)?;
                            for g in grads.iter_mut() {
                                let gt = *g;
                                for i in 0..3 {
                                    g[i] = (0..3).map(|c| gt[c] * jac.inverse[(c, i)]).sum();
                                }
                            }
                            out.t.push(t);
                            out.x.push(x);
                            out.weights.push(gauss_w * jac.det);
                        }
                    }
                    pt += 1;
                }
            }
        }
        Ok(())
    }
}

fn finish_jacobian(matrix: Matrix3<f64>, t: [f64; 3]) -> Result<Jacobian> {
    let det = matrix.determinant();
    if !(det > 0.0) {
        return Err(Error::SingularGeometry { det, t });
    }
    let inverse = matrix
        .try_inverse()
        .ok_or(Error::SingularGeometry { det, t })?;
    Ok(Jacobian {
        matrix,
        det,
        inverse,
    })
}

/// Active basis functions at a single point, with physical gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBasis {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
    pub x: [f64; 3],
}

/// One knot-span element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub spans: [KnotSpan; 3],
}

/// Tensor-product Gauss rule on the reference cube `[-1, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementRule {
    pub points: [Vec<f64>; 3],
    pub weights: [Vec<f64>; 3],
}

impl ElementRule {
    pub fn new(q: [usize; 3]) -> Result<Self> {
        let mut points: [Vec<f64>; 3] = Default::default();
        let mut weights: [Vec<f64>; 3] = Default::default();
        for d in 0..3 {
            let (p, w) = gauss_rule(q[d])?;
            points[d] = p;
            weights[d] = w;
        }
        Ok(Self { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-element evaluation buffers, reused across elements.
#[derive(Debug, Clone, Default)]
pub struct ElementEval {
    /// Global indices of the functions active on the element.
    pub indices: Vec<usize>,
    pub nloc: usize,
    pub npts: usize,
    pub t: Vec<[f64; 3]>,
    pub x: Vec<[f64; 3]>,
    /// Integration weights including det J.
    pub weights: Vec<f64>,
    /// `values[pt * nloc + k]`.
    pub values: Vec<f64>,
    /// Physical gradients `dN/dx`, same layout as `values`.
    pub grads: Vec<[f64; 3]>,
}

impl ElementEval {
    pub fn point_values(&self, pt: usize) -> &[f64] {
        &self.values[pt * self.nloc..(pt + 1) * self.nloc]
    }

    pub fn point_grads(&self, pt: usize) -> &[[f64; 3]] {
        &self.grads[pt * self.nloc..(pt + 1) * self.nloc]
    }
}

/// Gauss-Legendre points and weights on [-1, 1] for `1 <= q <= 10`.
pub fn gauss_rule(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=10).contains(&q) {
        return Err(Error::invalid(format!("Gauss order must be in 1..=10, got {q}")));
    }
    Ok(gauss_legendre(q))
}

/// Gauss-Legendre rule of any order (Newton iteration on P_q).
pub(crate) fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut points = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pq = if q == 1 { x } else { p1 };
            let pqm1 = if q == 1 { 1.0 } else { p0 };
            dp = q as f64 * (x * pq - pqm1) / (x * x - 1.0);
            let dx = pq / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = -x;
        points[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        points[q / 2] = 0.0;
    }
    (points, weights)
}

/// A quadrature point of the patch-wide rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePoint {
    pub t: [f64; 3],
    pub x: [f64; 3],
    /// Gauss weight times span scaling times det J.
    pub weight: f64,
}

/// Patch-wide quadrature with `q` points per direction per span, in
/// element order then lexicographic point order.
pub fn assemble_quadrature(patch: &Patch, q: usize) -> Result<Vec<QuadraturePoint>> {
    let rule = ElementRule::new([q; 3])?;
    let mut eval = ElementEval::default();
    let mut out = Vec::new();
    for elem in patch.elements() {
        patch.eval_element(&elem, &rule, &mut eval)?;
        for pt in 0..eval.npts {
            out.push(QuadraturePoint {
                t: eval.t[pt],
                x: eval.x[pt],
                weight: eval.weights[pt],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{make_graded_knot_vector, Grading, KnotVector};
    use approx::assert_relative_eq;

    fn cube_patch(n: usize, extents: [f64; 3]) -> Patch {
        let kv = KnotVector::uniform(n, 2).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv]);
        Patch::affine_box(basis, extents, [0.0; 3]).unwrap()
    }

    /// Same geometry as `cube_patch` but without the affine fast path.
    fn general_copy(p: &Patch) -> Patch {
        Patch::new(p.basis().clone(), p.control_points().to_vec()).unwrap()
    }

    #[test]
    fn gauss_rules() {
        let (p, w) = gauss_rule(1).unwrap();
        assert_eq!(p, vec![0.0]);
        assert_relative_eq!(w[0], 2.0, epsilon = 1e-15);

        let (p, w) = gauss_rule(2).unwrap();
        assert_relative_eq!(p[0], -1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);

        let (p, w) = gauss_rule(3).unwrap();
        let int: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert_relative_eq!(int, 0.4, epsilon = 1e-15);

        assert!(gauss_rule(0).is_err());
        assert!(gauss_rule(11).is_err());
    }

    #[test]
    fn gauss_exactness_up_to_2q_minus_1() {
        for q in 1..=10 {
            let (p, w) = gauss_rule(q).unwrap();
            for deg in 0..2 * q {
                let int: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((int - exact).abs() < 1e-13, "q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn box_map_center_and_corner() {
        let p = cube_patch(5, [100.0; 3]);
        let x = p.geometry_map([0.5; 3]).unwrap();
        for v in x {
            assert!(v.abs() < 1e-12);
        }
        let x = p.geometry_map([1.0; 3]).unwrap();
        for v in x {
            assert_relative_eq!(v, 50.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn box_jacobian() {
        let p = cube_patch(4, [100.0; 3]);
        let j = p.jacobian([0.3, 0.6, 0.9]).unwrap();
        assert_relative_eq!(j.matrix, Matrix3::from_diagonal_element(100.0), epsilon = 1e-10);
        assert_relative_eq!(j.det, 1e6, max_relative = 1e-12);

        let p = cube_patch(3, [1.0; 3]);
        let j = p.jacobian([0.2, 0.2, 0.2]).unwrap();
        assert_relative_eq!(j.matrix, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences_on_distorted_patch() {
        let p = cube_patch(4, [2.0, 3.0, 1.5]);
        let mut cps = p.control_points().to_vec();
        for (k, c) in cps.iter_mut().enumerate() {
            let s = (k as f64 * 0.7).sin();
            c[0] += 0.05 * s;
            c[1] += 0.03 * (k as f64).cos();
            c[2] += 0.02 * s * s;
        }
        let patch = Patch::new(p.basis().clone(), cps).unwrap();
        let t = [0.37, 0.52, 0.71];
        let j = patch.jacobian(t).unwrap();
        let h = 1e-6;
        for c in 0..3 {
            let mut tp = t;
            let mut tm = t;
            tp[c] += h;
            tm[c] -= h;
            let xp = patch.geometry_map(tp).unwrap();
            let xm = patch.geometry_map(tm).unwrap();
            for i in 0..3 {
                let fd = (xp[i] - xm[i]) / (2.0 * h);
                assert_relative_eq!(fd, j.matrix[(i, c)], max_relative = 1e-6, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn singular_geometry_is_rejected() {
        let p = cube_patch(3, [1.0; 3]);
        let cps = vec![[0.0; 3]; p.num_basis()];
        let flat = Patch::new(p.basis().clone(), cps).unwrap();
        assert!(matches!(
            flat.jacobian([0.5; 3]),
            Err(Error::SingularGeometry { .. })
        ));
    }

    #[test]
    fn map_stays_in_convex_hull() {
        let p = cube_patch(4, [1.0; 3]);
        let mut cps = p.control_points().to_vec();
        for (k, c) in cps.iter_mut().enumerate() {
            c[0] += 0.1 * ((k * 7 % 5) as f64 - 2.0) / 2.0;
        }
        let patch = Patch::new(p.basis().clone(), cps.clone()).unwrap();
        let t = [0.41, 0.13, 0.66];
        let e = patch.basis().eval(t).unwrap();
        let x = patch.geometry_map(t).unwrap();
        let lo = e.indices.iter().map(|&a| cps[a][0]).fold(f64::INFINITY, f64::min);
        let hi = e.indices.iter().map(|&a| cps[a][0]).fold(f64::NEG_INFINITY, f64::max);
        assert!(x[0] >= lo - 1e-14 && x[0] <= hi + 1e-14);
    }

    #[test]
    fn quadrature_volumes() {
        for q in 1..=4 {
            let p = cube_patch(4, [1.0; 3]);
            let sum: f64 = assemble_quadrature(&p, q).unwrap().iter().map(|qp| qp.weight).sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-13);
        }
        let p = cube_patch(5, [100.0; 3]);
        let pts = assemble_quadrature(&p, 3).unwrap();
        let sum: f64 = pts.iter().map(|qp| qp.weight).sum();
        assert_relative_eq!(sum, 1e6, max_relative = 1e-13);
        let first_moment: f64 = pts.iter().map(|qp| qp.weight * qp.x[0]).sum();
        assert!(first_moment.abs() < 1e-10 * 1e6);
    }

    #[test]
    fn quadrature_exact_for_tensor_polynomials() {
        let kv = make_graded_knot_vector(7, 2, Grading::centered(2.0)).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), kv]);
        let patch = Patch::affine_box(basis, [2.0, 4.0, 6.0], [0.0; 3]).unwrap();
        // x^4 y^2 z^0 integrated over [-1,1]x[-2,2]x[-3,3]: exact with q = 3.
        let int: f64 = assemble_quadrature(&patch, 3)
            .unwrap()
            .iter()
            .map(|qp| qp.weight * qp.x[0].powi(4) * qp.x[1].powi(2))
            .sum();
        let exact = (2.0 / 5.0) * (2.0 * 8.0 / 3.0) * 6.0;
        assert_relative_eq!(int, exact, max_relative = 1e-13);
    }

    #[test]
    fn quadrature_is_deterministic() {
        let p = cube_patch(4, [1.0, 2.0, 3.0]);
        let a = assemble_quadrature(&p, 3).unwrap();
        let b = assemble_quadrature(&p, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn general_and_affine_paths_agree() {
        let kv = make_graded_knot_vector(5, 2, Grading::centered(1.5)).unwrap();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), KnotVector::uniform(4, 2).unwrap(), kv]);
        let affine = Patch::affine_box(basis, [3.0, 2.0, 5.0], [0.5, 0.0, -1.0]).unwrap();
        let general = general_copy(&affine);
        let rule = affine.default_rule();
        let (mut ea, mut eg) = (ElementEval::default(), ElementEval::default());
        for elem in affine.elements() {
            affine.eval_element(&elem, &rule, &mut ea).unwrap();
            general.eval_element(&elem, &rule, &mut eg).unwrap();
            assert_eq!(ea.indices, eg.indices);
            for pt in 0..ea.npts {
                assert_relative_eq!(ea.weights[pt], eg.weights[pt], max_relative = 1e-12);
                for d in 0..3 {
                    assert_relative_eq!(ea.x[pt][d], eg.x[pt][d], epsilon = 1e-12);
                }
            }
            for (ga, gg) in ea.grads.iter().zip(&eg.grads) {
                for d in 0..3 {
                    assert_relative_eq!(ga[d], gg[d], epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn inverse_map_round_trip() {
        let p = cube_patch(4, [10.0, 20.0, 5.0]);
        let t = [0.2, 0.9, 0.45];
        let x = p.geometry_map(t).unwrap();
        let back = p.inverse_map(x).unwrap();
        for d in 0..3 {
            assert_relative_eq!(back[d], t[d], epsilon = 1e-12);
        }
        let g = general_copy(&p);
        let back = g.inverse_map(x).unwrap();
        for d in 0..3 {
            assert_relative_eq!(back[d], t[d], epsilon = 1e-10);
        }
        assert!(p.inverse_map([100.0, 0.0, 0.0]).is_err());
    }
}
