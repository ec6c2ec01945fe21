//! Field sampling, legacy VTK output and line profiles with reference
//! columns.

use std::io::Write;

use crate::config::Preset;
use crate::dislocation::TorsionField;
use crate::elastic::{ElasticProblem, ElasticState};
use crate::error::{Error, Result};
use crate::geometry::BoxDomain;
use crate::material::Mat3;
use crate::oracles::{homotopy_theta, volterra_edge_stress, volterra_screw_stress, VolterraParams};
use crate::plastic::PlasticField;

/// A scalar quantity that can be sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// `Theta^i_j`, zero-based.
    Theta(usize, usize),
    /// `S^ij` with `i <= j`, zero-based.
    Stress(usize, usize),
    DetTheta,
}

impl Component {
    /// Accepts `Theta11`..`Theta33`, `S11`..`S33` (either index order) and
    /// `detTheta`.
    pub fn parse(name: &str) -> Result<Self> {
        let idx = |s: &str| -> Option<(usize, usize)> {
            let b = s.as_bytes();
            if b.len() != 2 {
                return None;
            }
            let d = |c: u8| (b'1'..=b'3').contains(&c).then(|| (c - b'1') as usize);
            Some((d(b[0])?, d(b[1])?))
        };
        if name == "detTheta" {
            return Ok(Component::DetTheta);
        }
        if let Some((i, j)) = name.strip_prefix("Theta").and_then(idx) {
            return Ok(Component::Theta(i, j));
        }
        if let Some((i, j)) = name.strip_prefix('S').and_then(idx) {
            return Ok(Component::Stress(i.min(j), i.max(j)));
        }
        Err(Error::invalid(format!("unknown component `{name}`")))
    }

    pub fn name(&self) -> String {
        match *self {
            Component::Theta(i, j) => format!("Theta{}{}", i + 1, j + 1),
            Component::Stress(i, j) => format!("S{}{}", i + 1, j + 1),
            Component::DetTheta => "detTheta".into(),
        }
    }

    fn value(&self, s: &FieldSample) -> f64 {
        match *self {
            Component::Theta(i, j) => s.theta[i][j],
            Component::Stress(i, j) => s.stress[i][j],
            Component::DetTheta => s.det_theta,
        }
    }
}

/// Every exported quantity at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub theta: Mat3,
    pub det_theta: f64,
    /// Second Piola-Kirchhoff stress; zero when no elastic state is given.
    pub stress: Mat3,
}

pub trait FieldSampler {
    fn domain(&self) -> &BoxDomain;
    fn sample(&self, x: [f64; 3]) -> Result<FieldSample>;
}

/// Samples a plastic field and, optionally, the relaxed elastic state.
pub struct SolvedFields<'a> {
    plastic: &'a PlasticField,
    elastic: Option<(&'a ElasticProblem, &'a ElasticState)>,
    domain: BoxDomain,
}

impl<'a> SolvedFields<'a> {
    pub fn new(plastic: &'a PlasticField, elastic: Option<(&'a ElasticProblem, &'a ElasticState)>) -> Result<Self> {
        let domain = *plastic
            .patch()
            .box_domain()
            .ok_or_else(|| Error::UnsupportedGeometry("sampling needs an axis-aligned box".into()))?;
        Ok(Self {
            plastic,
            elastic,
            domain,
        })
    }
}

impl FieldSampler for SolvedFields<'_> {
    fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn sample(&self, x: [f64; 3]) -> Result<FieldSample> {
        let t = self.plastic.patch().inverse_map(x)?;
        match self.elastic {
            Some((prob, state)) => {
                let sp = prob.stress_at(state, t)?;
                Ok(FieldSample {
                    theta: sp.plastic.theta,
                    det_theta: sp.plastic.det,
                    stress: sp.s,
                })
            }
            None => {
                let th = self.plastic.theta_at(t)?;
                Ok(FieldSample {
                    theta: th.theta,
                    det_theta: th.det,
                    stress: [[0.0; 3]; 3],
                })
            }
        }
    }
}

/// Uniform lattice of sample points covering a box, boundaries included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingGrid {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub counts: [usize; 3],
}

impl SamplingGrid {
    pub fn covering(domain: &BoxDomain, counts: [usize; 3]) -> Result<Self> {
        if counts.iter().any(|&n| n < 2) {
            return Err(Error::invalid("need at least two samples per direction"));
        }
        Ok(Self {
            lower: domain.lower(),
            upper: domain.upper(),
            counts,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points with `x1` fastest, as VTK expects.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let coord = |d: usize, k: usize| {
            if k + 1 == self.counts[d] {
                self.upper[d]
            } else {
                self.lower[d] + (self.upper[d] - self.lower[d]) * k as f64 / (self.counts[d] - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.counts[2] {
            for j in 0..self.counts[1] {
                for i in 0..self.counts[0] {
                    out.push([coord(0, i), coord(1, j), coord(2, k)]);
                }
            }
        }
        out
    }
}

/// Array names and components written by [`write_vtk`], in file order.
pub fn vtk_arrays() -> Vec<(String, Component)> {
    let mut v = Vec::with_capacity(16);
    for i in 0..3 {
        for j in 0..3 {
            v.push((format!("Theta_{}{}", i + 1, j + 1), Component::Theta(i, j)));
        }
    }
    for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
        v.push((format!("S_{}{}", i + 1, j + 1), Component::Stress(i, j)));
    }
    v.push(("detTheta".into(), Component::DetTheta));
    v
}

/// Legacy ASCII VTK structured grid with one scalar array per component.
pub fn write_vtk<W: Write>(sampler: &dyn FieldSampler, grid: &SamplingGrid, title: &str, mut out: W) -> Result<()> {
    let points = grid.points();
    let samples: Vec<FieldSample> = points.iter().map(|&x| sampler.sample(x)).collect::<Result<_>>()?;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_GRID")?;
    writeln!(out, "DIMENSIONS {} {} {}", grid.counts[0], grid.counts[1], grid.counts[2])?;
    writeln!(out, "POINTS {} double", points.len())?;
    for p in &points {
        writeln!(out, "{:.10e} {:.10e} {:.10e}", p[0], p[1], p[2])?;
    }
    writeln!(out, "POINT_DATA {}", points.len())?;
    for (name, comp) in vtk_arrays() {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for s in &samples {
            writeln!(out, "{:.10e}", comp.value(s))?;
        }
    }
    Ok(())
}

/// Straight sampling line parallel to a coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileLine {
    /// Zero-based axis.
    pub axis: usize,
    /// The remaining two coordinates in increasing axis order.
    pub at: [f64; 2],
    pub range: [f64; 2],
    pub samples: usize,
}

impl ProfileLine {
    /// Full-length line through the box along `axis`.
    pub fn spanning(domain: &BoxDomain, axis: usize, at: [f64; 2], samples: usize) -> Self {
        Self {
            axis,
            at,
            range: [domain.lower()[axis.min(2)], domain.upper()[axis.min(2)]],
            samples,
        }
    }

    fn others(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        if self.axis > 2 {
            return Err(Error::invalid(format!("axis index {} out of range", self.axis)));
        }
        if self.samples < 2 {
            return Err(Error::invalid("a profile needs at least two samples"));
        }
        let (lo, hi) = (domain.lower(), domain.upper());
        let inside = |d: usize, v: f64| v >= lo[d] && v <= hi[d];
        for (k, &d) in self.others().iter().enumerate() {
            if !inside(d, self.at[k]) {
                return Err(Error::invalid(format!(
                    "line coordinate x{} = {} lies outside [{}, {}]",
                    d + 1,
                    self.at[k],
                    lo[d],
                    hi[d]
                )));
            }
        }
        let a = self.axis;
        if !(inside(a, self.range[0]) && inside(a, self.range[1]) && self.range[0] < self.range[1]) {
            return Err(Error::invalid(format!(
                "range {:?} along x{} is not an interval inside [{}, {}]",
                self.range,
                a + 1,
                lo[a],
                hi[a]
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        let [o0, o1] = self.others();
        (0..self.samples)
            .map(|k| {
                let mut x = [0.0; 3];
                x[o0] = self.at[0];
                x[o1] = self.at[1];
                x[self.axis] = if k + 1 == self.samples {
                    self.range[1]
                } else {
                    self.range[0] + (self.range[1] - self.range[0]) * k as f64 / (self.samples - 1) as f64
                };
                x
            })
            .collect()
    }
}

/// Reference fields for the profile oracle columns.
#[derive(Debug, Clone)]
pub struct ProfileOracle {
    pub preset: Preset,
    pub volterra: VolterraParams,
    pub torsion: TorsionField,
    /// Position of the dislocation line in the `x1`-`x2` plane.
    pub line_center: [f64; 2],
    /// Base point of the homotopy.
    pub basepoint: [f64; 3],
}

impl ProfileOracle {
    /// `D_S` of the preset.
    pub fn stress_scale(&self) -> f64 {
        match self.preset {
            Preset::Screw => self.volterra.screw_scale(),
            Preset::Edge => self.volterra.edge_scale(),
        }
    }

    /// Classical stress at `x`; `NaN` on the line itself.
    fn stress(&self, x: [f64; 3]) -> Mat3 {
        let (x1, x2) = (x[0] - self.line_center[0], x[1] - self.line_center[1]);
        let mut s = [[0.0; 3]; 3];
        match self.preset {
            Preset::Screw => match volterra_screw_stress(x1, x2, &self.volterra) {
                Ok((s23, s31)) => {
                    s[1][2] = s23;
                    s[0][2] = s31;
                }
                Err(_) => return [[f64::NAN; 3]; 3],
            },
            Preset::Edge => match volterra_edge_stress(x1, x2, &self.volterra) {
                Ok((s11, s22, s33, s12)) => {
                    s[0][0] = s11;
                    s[1][1] = s22;
                    s[2][2] = s33;
                    s[0][1] = s12;
                }
                Err(_) => return [[f64::NAN; 3]; 3],
            },
        }
        s
    }
}

/// Writes one row per sample: coordinate along the line in units of the
/// core radius, the point, then each component followed by its reference.
/// Stress columns (numeric and reference) are divided by `D_S`; the
/// reference of `detTheta` is the determinant of `I` plus the homotopy.
pub fn write_profile<W: Write>(
    sampler: &dyn FieldSampler,
    line: &ProfileLine,
    components: &[Component],
    oracle: &ProfileOracle,
    mut out: W,
) -> Result<()> {
    line.validate(sampler.domain())?;
    let r = oracle.volterra.core_radius;
    let ds = oracle.stress_scale();
    let scale = |c: &Component| match c {
        Component::Stress(..) if ds != 0.0 => 1.0 / ds,
        _ => 1.0,
    };
    let mut header = String::from("s_over_R,x1,x2,x3");
    for c in components {
        let n = c.name();
        header.push_str(&format!(",{n},{n}_ref"));
    }
    writeln!(out, "{header}")?;
    let needs_homotopy = components.iter().any(|c| !matches!(c, Component::Stress(..)));
    for x in line.points() {
        let s = sampler.sample(x)?;
        let h = if needs_homotopy {
            homotopy_theta(&oracle.torsion, x, oracle.basepoint, 8)?
        } else {
            [[0.0; 3]; 3]
        };
        let sref = oracle.stress(x);
        write!(
            out,
            "{:.10e},{:.10e},{:.10e},{:.10e}",
            x[line.axis] / r,
            x[0],
            x[1],
            x[2]
        )?;
        for c in components {
            let reference = match *c {
                Component::Theta(i, j) => h[i][j],
                Component::Stress(i, j) => sref[i][j],
                Component::DetTheta => {
                    let mut v = h;
                    for (i, row) in v.iter_mut().enumerate() {
                        row[i] += 1.0;
                    }
                    crate::plastic::det3(&v)
                }
            };
            let k = scale(c);
            write!(out, ",{:.10e},{:.10e}", c.value(&s) * k, reference * k)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
