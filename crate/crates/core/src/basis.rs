//! B-spline and tensor-product NURBS bases.
//!
//! Knot vectors are open (clamped) and stored 0-based. A knot span `s`
//! is the half-open interval `[knots[s], knots[s+1])` with `p <= s < n`;
//! the functions active on it are `s - p ..= s`. The right endpoint of
//! the parameter interval is evaluated through the last non-empty span.

use crate::error::{Error, Result};

/// Open knot vector with its polynomial degree.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    values: Vec<f64>,
    degree: usize,
}

/// A non-empty knot span together with its parameter bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotSpan {
    /// Index `s` such that the span is `[knots[s], knots[s+1])`.
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl KnotSpan {
    /// Index of the first basis function supported on the span.
    pub fn first_basis(&self, degree: usize) -> usize {
        self.index - degree
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Values of the `p + 1` basis functions active at a parameter, and
/// optionally their derivatives. `derivs[k][j]` is the k-th derivative of
/// basis function `first + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDerivatives {
    pub first: usize,
    pub derivs: Vec<Vec<f64>>,
}

impl BasisDerivatives {
    pub fn values(&self) -> &[f64] {
        &self.derivs[0]
    }
}

impl KnotVector {
    pub fn new(values: Vec<f64>, degree: usize) -> Result<Self> {
        let m = values.len();
        if m < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "knot vector of length {m} is too short for degree {degree}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("knot values must be finite"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("knot values must be non-decreasing"));
        }
        let (lo, hi) = (values[0], values[m - 1]);
        if lo >= hi {
            return Err(Error::invalid("knot vector spans an empty interval"));
        }
        if values[..=degree].iter().any(|&v| v != lo) || values[m - degree - 1..].iter().any(|&v| v != hi)
        {
            return Err(Error::invalid(
                "knot vector must be open: first and last p+1 knots repeated",
            ));
        }
        Ok(Self { values, degree })
    }

    /// Uniform open knot vector on [0, 1] with `n` basis functions.
    pub fn uniform(n: usize, degree: usize) -> Result<Self> {
        make_graded_knot_vector(n, degree, Grading::uniform())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `n = m - p - 1`.
    pub fn num_basis(&self) -> usize {
        self.values.len() - self.degree - 1
    }

    pub fn lower(&self) -> f64 {
        self.values[0]
    }

    pub fn upper(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// All non-empty knot spans in increasing order.
    pub fn spans(&self) -> Vec<KnotSpan> {
        (self.degree..self.num_basis())
            .filter(|&s| self.values[s] < self.values[s + 1])
            .map(|s| KnotSpan {
                index: s,
                lower: self.values[s],
                upper: self.values[s + 1],
            })
            .collect()
    }

    /// Distinct interior breakpoints (knots strictly inside the interval).
    pub fn interior_breaks(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &v in &self.values {
            if v > self.lower() && v < self.upper() && out.last() != Some(&v) {
                out.push(v);
            }
        }
        out
    }

    /// Span index `s` with `knots[s] <= t < knots[s+1]`; the right endpoint
    /// maps to the last non-empty span.
    pub fn find_span(&self, t: f64) -> Result<usize> {
        let (lo, hi) = (self.lower(), self.upper());
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain {
                value: t,
                lower: lo,
                upper: hi,
            });
        }
        let n = self.num_basis();
        if t == hi {
            let mut s = n - 1;
            while self.values[s] == self.values[s + 1] {
                s -= 1;
            }
            return Ok(s);
        }
        // Binary search over [p, n).
        let (mut low, mut high) = (self.degree, n);
        while high - low > 1 {
            let mid = (low + high) / 2;
            if t < self.values[mid] {
                high = mid;
            } else {
                low = mid;
            }
        }
        Ok(low)
    }

    /// The `p + 1` non-zero basis values at `t` via the Cox-de Boor recursion.
    pub fn eval(&self, t: f64) -> Result<BasisDerivatives> {
        self.eval_derivatives(t, 0)
    }

    /// Basis values and derivatives up to `order`. Orders above the degree
    /// are identically zero.
    pub fn eval_derivatives(&self, t: f64, order: usize) -> Result<BasisDerivatives> {
        let span = self.find_span(t)?;
        let derivs = self.ders_in_span(span, t, order);
        Ok(BasisDerivatives {
            first: span - self.degree,
            derivs,
        })
    }

    /// Derivatives on a known span; `t` may lie on the span boundary.
    pub(crate) fn ders_in_span(&self, span: usize, t: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.values;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] == 0.0 {
                    0.0
                } else {
                    ndu[r][j - 1] / ndu[j][r]
                };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let top = order.min(p);
        let mut a = vec![vec![0.0; p + 1]; 2];
        let safe_div = |x: f64, y: f64| if y == 0.0 { 0.0 } else { x / y };
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let rk = rk as usize;
                    a[s2][0] = safe_div(a[s1][0], ndu[pk + 1][rk]);
                    d = a[s2][0] * ndu[rk][pk];
                }
                let j1 = if rk >= -1 { 1usize } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = safe_div(a[s1][j] - a[s1][j - 1], ndu[pk + 1][idx]);
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = safe_div(-a[s1][k - 1], ndu[pk + 1][r]);
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=top {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }

    /// Greville abscissae: knot averages that make the identity map exactly
    /// representable with these basis functions.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.values[i] + self.values[i + 1])
                } else {
                    self.values[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }
}

/// Symmetric densification of interior knots around a focus point.
///
/// Uniform interior knots `s` are mapped through
/// `s -> c - c (1 - 2s)^gamma` for `s < 1/2` and
/// `s -> c + (1 - c)(2s - 1)^gamma` otherwise. With `c = 1/2` this is
/// `0.5 + 0.5 sign(2s-1) |2s-1|^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    pub gamma: f64,
    pub focus: f64,
}

impl Grading {
    pub const DEFAULT_GAMMA: f64 = 2.0;

    pub fn uniform() -> Self {
        Self {
            gamma: 1.0,
            focus: 0.5,
        }
    }

    pub fn centered(gamma: f64) -> Self {
        Self { gamma, focus: 0.5 }
    }

    pub fn map(&self, s: f64) -> f64 {
        let c = self.focus;
        if s < 0.5 {
            c - c * (1.0 - 2.0 * s).powf(self.gamma)
        } else {
            c + (1.0 - c) * (2.0 * s - 1.0).powf(self.gamma)
        }
    }
}

impl Default for Grading {
    fn default() -> Self {
        Self::centered(Self::DEFAULT_GAMMA)
    }
}

/// Open knot vector on [0, 1] with `n` basis functions of degree `p` and
/// interior knots placed by `grading`.
pub fn make_graded_knot_vector(n: usize, p: usize, grading: Grading) -> Result<KnotVector> {
    if n < p + 1 {
        return Err(Error::invalid(format!(
            "need at least p+1 = {} basis functions, got {n}",
            p + 1
        )));
    }
    if !(grading.gamma >= 1.0) || !(grading.focus > 0.0 && grading.focus < 1.0) {
        return Err(Error::invalid(format!(
            "grading requires gamma >= 1 and focus in (0, 1), got {grading:?}"
        )));
    }
    let spans = n - p;
    let mut values = vec![0.0; p + 1];
    for k in 1..spans {
        values.push(grading.map(k as f64 / spans as f64));
    }
    values.extend(std::iter::repeat_n(1.0, p + 1));
    KnotVector::new(values, p)
}

/// Active tensor-product basis functions at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasisEval {
    /// Global indices of the active functions.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    /// Parametric gradients `dN/dt^k`.
    pub grads: Vec<[f64; 3]>,
}

/// Tensor-product NURBS basis on the unit cube.
///
/// Global index: `alpha = i1 + n1 * (i2 + n2 * i3)` (first direction fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBasis3D {
    knots: [KnotVector; 3],
    weights: Vec<f64>,
}

impl TensorBasis3D {
    pub fn new(knots: [KnotVector; 3], weights: Vec<f64>) -> Result<Self> {
        let n: usize = knots.iter().map(KnotVector::num_basis).product();
        if weights.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("NURBS weights must be positive"));
        }
        Ok(Self { knots, weights })
    }

    /// B-spline basis (all weights one).
    pub fn with_unit_weights(knots: [KnotVector; 3]) -> Self {
        let n = knots.iter().map(KnotVector::num_basis).product();
        Self {
            knots,
            weights: vec![1.0; n],
        }
    }

    pub fn knots(&self) -> &[KnotVector; 3] {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn has_unit_weights(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.knots[0].num_basis(),
            self.knots[1].num_basis(),
            self.knots[2].num_basis(),
        ]
    }

    pub fn degrees(&self) -> [usize; 3] {
        [
            self.knots[0].degree(),
            self.knots[1].degree(),
            self.knots[2].degree(),
        ]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn flat_index(&self, i: [usize; 3]) -> usize {
        let d = self.dims();
        i[0] + d[0] * (i[1] + d[1] * i[2])
    }

    pub fn multi_index(&self, alpha: usize) -> [usize; 3] {
        let d = self.dims();
        [alpha % d[0], (alpha / d[0]) % d[1], alpha / (d[0] * d[1])]
    }

    /// Number of functions active on a single element.
    pub fn local_len(&self) -> usize {
        self.degrees().iter().map(|p| p + 1).product()
    }

    /// NURBS values and parametric gradients at `t`.
    pub fn eval(&self, t: [f64; 3]) -> Result<TensorBasisEval> {
        let e: Vec<BasisDerivatives> = (0..3)
            .map(|d| self.knots[d].eval_derivatives(t[d], 1))
            .collect::<Result<_>>()?;
        let mut indices = Vec::with_capacity(self.local_len());
        let mut values = Vec::with_capacity(self.local_len());
        let mut grads = Vec::with_capacity(self.local_len());
        let [p1, p2, p3] = self.degrees();
        for c in 0..=p3 {
            for b in 0..=p2 {
                for a in 0..=p1 {
                    let alpha = self.flat_index([e[0].first + a, e[1].first + b, e[2].first + c]);
                    let (v0, v1, v2) = (e[0].derivs[0][a], e[1].derivs[0][b], e[2].derivs[0][c]);
                    let (d0, d1, d2) = (e[0].derivs[1][a], e[1].derivs[1][b], e[2].derivs[1][c]);
                    indices.push(alpha);
                    values.push(v0 * v1 * v2);
                    grads.push([d0 * v1 * v2, v0 * d1 * v2, v0 * v1 * d2]);
                }
            }
        }
        rationalize(&self.weights, &indices, &mut values, &mut grads);
        Ok(TensorBasisEval {
            indices,
            values,
            grads,
        })
    }
}

/// Turns B-spline values/gradients into NURBS ones in place (quotient rule).
pub(crate) fn rationalize(
    weights: &[f64],
    indices: &[usize],
    values: &mut [f64],
    grads: &mut [[f64; 3]],
) {
    let mut wsum = 0.0;
    let mut wgrad = [0.0; 3];
    for (k, &alpha) in indices.iter().enumerate() {
        let w = weights[alpha];
        wsum += w * values[k];
        for d in 0..3 {
            wgrad[d] += w * grads[k][d];
        }
    }
    if wsum == 1.0 && wgrad == [0.0; 3] && indices.iter().all(|&a| weights[a] == 1.0) {
        return;
    }
    for (k, &alpha) in indices.iter().enumerate() {
        let w = weights[alpha];
        let n = w * values[k] / wsum;
        for d in 0..3 {
            grads[k][d] = (w * grads[k][d] - n * wgrad[d]) / wsum;
        }
        values[k] = n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bernstein2() -> KnotVector {
        KnotVector::new(vec![0., 0., 0., 1., 1., 1.], 2).unwrap()
    }

    fn fig1() -> KnotVector {
        KnotVector::new(
            vec![0., 0., 0., 1. / 6., 1. / 3., 0.5, 2. / 3., 5. / 6., 1., 1., 1.],
            2,
        )
        .unwrap()
    }

    #[test]
    fn bernstein_midpoint() {
        let e = bernstein2().eval(0.5).unwrap();
        assert_eq!(e.first, 0);
        assert_eq!(e.values(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn degree_zero_indicator() {
        let kv = KnotVector::new(vec![0., 1.], 0).unwrap();
        let e = kv.eval(0.3).unwrap();
        assert_eq!(e.values(), &[1.0]);
    }

    #[test]
    fn partition_of_unity_on_fig1_knots() {
        let kv = fig1();
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let e = kv.eval(t).unwrap();
            assert_abs_diff_eq!(e.values().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            assert!(e.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn bernstein_first_derivatives_at_zero() {
        let e = bernstein2().eval_derivatives(0.0, 1).unwrap();
        assert_eq!(e.derivs[1], vec![-2.0, 2.0, 0.0]);
    }

    #[test]
    fn linear_hats() {
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let e = kv.eval_derivatives(0.25, 1).unwrap();
        assert_eq!(e.derivs[0], vec![0.75, 0.25]);
        assert_eq!(e.derivs[1], vec![-1.0, 1.0]);
    }

    #[test]
    fn derivatives_beyond_degree_are_zero() {
        let kv = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let e = kv.eval_derivatives(0.4, 2).unwrap();
        assert_eq!(e.derivs[2], vec![0.0, 0.0]);
    }

    #[test]
    fn derivative_sums_vanish() {
        let kv = fig1();
        for k in 0..50 {
            let t = (k as f64 + 0.37) / 50.0;
            let e = kv.eval_derivatives(t, 2).unwrap();
            assert_abs_diff_eq!(e.derivs[1].iter().sum::<f64>(), 0.0, epsilon = 1e-11);
            assert_abs_diff_eq!(e.derivs[2].iter().sum::<f64>(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let kv = fig1();
        let h = 1e-5;
        for &t in &[0.07, 0.29, 0.6, 0.91] {
            let e = kv.eval_derivatives(t, 2).unwrap();
            let ep = kv.eval_derivatives(t + h, 1).unwrap();
            let em = kv.eval_derivatives(t - h, 1).unwrap();
            assert_eq!(ep.first, e.first);
            for j in 0..3 {
                let fd = (ep.derivs[1][j] - em.derivs[1][j]) / (2.0 * h);
                assert_abs_diff_eq!(fd, e.derivs[2][j], epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn right_endpoint_uses_last_span() {
        let kv = fig1();
        let e = kv.eval(1.0).unwrap();
        assert_eq!(e.first, kv.num_basis() - 3);
        assert_abs_diff_eq!(e.values()[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let kv = fig1();
        assert!(matches!(kv.eval(-0.01), Err(Error::Domain { .. })));
        assert!(matches!(kv.eval(1.01), Err(Error::Domain { .. })));
        assert!(kv.eval(f64::NAN).is_err());
    }

    #[test]
    fn invalid_knot_vectors_are_rejected() {
        assert!(KnotVector::new(vec![0., 0., 1.], 1).is_err());
        assert!(KnotVector::new(vec![0., 0., 1., 0.5, 1., 1.], 2).is_err());
        assert!(KnotVector::new(vec![0., 0.1, 0.5, 1., 1., 1.], 2).is_err());
    }

    #[test]
    fn local_support() {
        let kv = fig1();
        let u = kv.values().to_vec();
        for k in 0..100 {
            let t = (k as f64 + 0.5) / 100.0;
            let e = kv.eval(t).unwrap();
            for i in 0..kv.num_basis() {
                let active = i >= e.first && i <= e.first + 2;
                if !(u[i] <= t && t < u[i + 3]) {
                    assert!(!active || e.values()[i - e.first] == 0.0);
                }
            }
        }
    }

    #[test]
    fn graded_knot_vectors() {
        let kv = make_graded_knot_vector(3, 2, Grading::uniform()).unwrap();
        assert_eq!(kv.values(), &[0., 0., 0., 1., 1., 1.]);

        let kv = make_graded_knot_vector(8, 2, Grading::uniform()).unwrap();
        for (a, b) in kv.values().iter().zip(fig1().values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }

        let kv = make_graded_knot_vector(16, 2, Grading::centered(2.0)).unwrap();
        let breaks = kv.interior_breaks();
        let mut pts = vec![0.0];
        pts.extend(breaks);
        pts.push(1.0);
        let gaps: Vec<(f64, f64)> = pts
            .windows(2)
            .map(|w| (0.5 * (w[0] + w[1]), w[1] - w[0]))
            .collect();
        // Gaps grow with distance from the center.
        let mut sorted = gaps.clone();
        sorted.sort_by(|a, b| (a.0 - 0.5).abs().partial_cmp(&(b.0 - 0.5).abs()).unwrap());
        for w in sorted.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-15);
        }

        assert!(make_graded_knot_vector(2, 2, Grading::uniform()).is_err());
    }

    #[test]
    fn nurbs_weights_rationalize() {
        // Degree-1 in first direction, constants elsewhere: two active functions.
        let lin = KnotVector::new(vec![0., 0., 1., 1.], 1).unwrap();
        let cst = KnotVector::new(vec![0., 1.], 0).unwrap();
        let basis = TensorBasis3D::new([lin, cst.clone(), cst], vec![1.0, 3.0]).unwrap();
        let e = basis.eval([0.5, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(e.values[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn unit_weights_reduce_to_bsplines() {
        let kv = fig1();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), kv.clone(), bernstein2()]);
        let t = [0.31, 0.77, 0.4];
        let e = basis.eval(t).unwrap();
        let e0 = kv.eval(t[0]).unwrap();
        let e1 = kv.eval(t[1]).unwrap();
        let e2 = bernstein2().eval(t[2]).unwrap();
        assert_abs_diff_eq!(
            e.values[0],
            e0.values()[0] * e1.values()[0] * e2.values()[0],
            epsilon = 1e-15
        );
        assert_eq!(e.indices[0], basis.flat_index([e0.first, e1.first, e2.first]));
    }

    #[test]
    fn flat_index_round_trip() {
        let kv = fig1();
        let basis = TensorBasis3D::with_unit_weights([kv.clone(), bernstein2(), kv]);
        for alpha in 0..basis.len() {
            assert_eq!(basis.flat_index(basis.multi_index(alpha)), alpha);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let kv = bernstein2();
        let n = 27;
        let mut w = vec![1.0; n];
        w[3] = 0.0;
        assert!(TensorBasis3D::new([kv.clone(), kv.clone(), kv.clone()], w).is_err());
        assert!(TensorBasis3D::new([kv.clone(), kv.clone(), kv], vec![1.0; 5]).is_err());
    }
}
