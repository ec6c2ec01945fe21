//! Dislocation density, its torsion 2-form, and the algebra of
//! ℝ³-valued forms in the orthonormal coframe `dx^1, dx^2, dx^3`.
//!
//! Storage conventions:
//! - a 1-form `ω = ω^i_j dx^j ⊗ E_i` is `OneForm([[ω^i_j; j]; i])`;
//! - a 2-form is stored by its dual components on
//!   `(dx^2∧dx^3, dx^3∧dx^1, dx^1∧dx^2)`, so `TwoForm(c)[i][0] = T^i_23`,
//!   `c[i][1] = T^i_31` and `c[i][2] = T^i_12`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OneForm(pub [[f64; 3]; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwoForm(pub [[f64; 3]; 3]);

impl TwoForm {
    /// Antisymmetric coefficient `T^i_jk` (0-based indices).
    pub fn component(&self, i: usize, j: usize, k: usize) -> f64 {
        match (j, k) {
            (1, 2) => self.0[i][0],
            (2, 1) => -self.0[i][0],
            (2, 0) => self.0[i][1],
            (0, 2) => -self.0[i][1],
            (0, 1) => self.0[i][2],
            (1, 0) => -self.0[i][2],
            _ => 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        TwoForm(self.0.map(|row| row.map(|v| v * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for k in 0..3 {
                out.0[i][k] += other.0[i][k];
            }
        }
        out
    }
}

/// An ℝ³-valued k-form of degree 0, 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Form {
    Zero([f64; 3]),
    One(OneForm),
    Two(TwoForm),
}

impl Form {
    pub fn degree(&self) -> usize {
        match self {
            Form::Zero(_) => 0,
            Form::One(_) => 1,
            Form::Two(_) => 2,
        }
    }
}

/// `*dx^1 = dx^2∧dx^3`, `*dx^2 = dx^3∧dx^1`, `*dx^3 = dx^1∧dx^2`, applied
/// componentwise in the ℝ³ index.
pub fn hodge_star_1form(omega: &OneForm) -> TwoForm {
    TwoForm(omega.0)
}

/// Inverse of [`hodge_star_1form`] (`** = 1` on 1- and 2-forms in 3D).
pub fn hodge_star_2form(tau: &TwoForm) -> OneForm {
    OneForm(tau.0)
}

/// Coefficient of the volume form in `⟨ω, η⟩ = ω^i ∧ *η^j ⟨E_i, E_j⟩`.
pub fn form_inner_product(omega: &Form, eta: &Form) -> Result<f64> {
    let dot9 = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| -> f64 {
        (0..3).map(|i| (0..3).map(|j| a[i][j] * b[i][j]).sum::<f64>()).sum()
    };
    match (omega, eta) {
        (Form::Zero(a), Form::Zero(b)) => Ok(a.iter().zip(b).map(|(x, y)| x * y).sum()),
        (Form::One(a), Form::One(b)) => Ok(dot9(&a.0, &b.0)),
        (Form::Two(a), Form::Two(b)) => Ok(dot9(&a.0, &b.0)),
        _ => Err(Error::invalid(format!(
            "inner product of forms of degree {} and {}",
            omega.degree(),
            eta.degree()
        ))),
    }
}

/// Linear-taper core profile, normalised to unit integral over the disk
/// `r <= R` and vanishing outside it.
pub fn radial_density(r: f64, core_radius: f64) -> Result<f64> {
    if !(core_radius > 0.0) {
        return Err(Error::invalid(format!(
            "core radius must be positive, got {core_radius}"
        )));
    }
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("radius must be non-negative, got {r}")));
    }
    Ok(radial_density_unchecked(r, core_radius))
}

#[inline]
pub(crate) fn radial_density_unchecked(r: f64, core_radius: f64) -> f64 {
    if r <= core_radius {
        3.0 / (PI * core_radius * core_radius) * (1.0 - r / core_radius)
    } else {
        0.0
    }
}

/// Straight dislocation: Burgers vector, unit line direction, core radius
/// and a point the line passes through (in the `x^1`-`x^2` plane).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DislocationSpec {
    pub burgers: [f64; 3],
    pub line_direction: [f64; 3],
    pub core_radius: f64,
    pub center: [f64; 2],
}

impl DislocationSpec {
    pub fn new(burgers: [f64; 3], line_direction: [f64; 3], core_radius: f64, center: [f64; 2]) -> Result<Self> {
        let norm = line_direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "line direction must be a unit vector, |n| = {norm}"
            )));
        }
        if !(core_radius > 0.0) {
            return Err(Error::invalid(format!(
                "core radius must be positive, got {core_radius}"
            )));
        }
        if burgers.iter().chain(center.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite Burgers vector or center"));
        }
        Ok(Self {
            burgers,
            line_direction,
            core_radius,
            center,
        })
    }

    /// Screw dislocation along `x^3` with `b = (0, 0, b)`.
    pub fn screw(b: f64, core_radius: f64) -> Result<Self> {
        Self::new([0.0, 0.0, b], [0.0, 0.0, 1.0], core_radius, [0.0, 0.0])
    }

    /// Edge dislocation along `x^3` with `b = (b, 0, 0)`.
    pub fn edge(b: f64, core_radius: f64) -> Result<Self> {
        Self::new([b, 0.0, 0.0], [0.0, 0.0, 1.0], core_radius, [0.0, 0.0])
    }

    pub fn with_center(mut self, center: [f64; 2]) -> Self {
        self.center = center;
        self
    }

    pub fn burgers_magnitude(&self) -> f64 {
        self.burgers.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Distance from the dislocation line.
    pub fn distance(&self, x: [f64; 3]) -> f64 {
        let v = [x[0] - self.center[0], x[1] - self.center[1], x[2]];
        let n = self.line_direction;
        let along = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
        let perp2 = v.iter().map(|c| c * c).sum::<f64>() - along * along;
        perp2.max(0.0).sqrt()
    }

    /// Dislocation density `α = f b^i n_k dx^k ⊗ E_i`.
    pub fn density(&self, x: [f64; 3]) -> OneForm {
        let f = radial_density_unchecked(self.distance(x), self.core_radius);
        OneForm(std::array::from_fn(|i| {
            std::array::from_fn(|k| f * self.burgers[i] * self.line_direction[k])
        }))
    }

    /// Torsion `τ = *α`, i.e. `T^i_jk = f b^i n^l ε_ljk`.
    pub fn torsion(&self, x: [f64; 3]) -> TwoForm {
        hodge_star_1form(&self.density(x))
    }
}

/// Superposition of straight dislocations.
#[derive(Debug, Clone, PartialEq)]
pub struct TorsionField {
    sources: Vec<DislocationSpec>,
}

impl TorsionField {
    pub fn new(sources: Vec<DislocationSpec>) -> Self {
        Self { sources }
    }

    pub fn single(spec: DislocationSpec) -> Self {
        Self {
            sources: vec![spec],
        }
    }

    pub fn zero() -> Self {
        Self { sources: vec![] }
    }

    pub fn sources(&self) -> &[DislocationSpec] {
        &self.sources
    }

    pub fn is_zero(&self) -> bool {
        self.sources.iter().all(|s| s.burgers_magnitude() == 0.0)
    }

    pub fn coefficients(&self, x: [f64; 3]) -> TwoForm {
        self.sources
            .iter()
            .fold(TwoForm::default(), |acc, s| acc.add(&s.torsion(x)))
    }

    /// Same field with every Burgers vector scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            sources: self
                .sources
                .iter()
                .map(|d| DislocationSpec {
                    burgers: d.burgers.map(|v| v * s),
                    ..*d
                })
                .collect(),
        }
    }
}

/// Torsion coefficients `T^i_jk` for `j < k` at a point, in the
/// `(1,2), (1,3), (2,3)` pair ordering: returns `[i][pair]`.
pub fn torsion_coefficients(field: &TorsionField, x: [f64; 3]) -> [[f64; 3]; 3] {
    let t = field.coefficients(x);
    std::array::from_fn(|i| [t.component(i, 0, 1), t.component(i, 0, 2), t.component(i, 1, 2)])
}
