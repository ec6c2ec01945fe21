//! Run configuration: a sectioned TOML file, command-line overrides of
//! single keys, validation and a content hash.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{make_graded_knot_vector, Grading, TensorBasis3D};
use crate::dislocation::{DislocationSpec, TorsionField};
use crate::elastic::{BoundarySpec, ElasticPreconditioner, FaceCondition};
use crate::error::{Error, Result};
use crate::geometry::Patch;
use crate::krylov::SolverConfig;
use crate::material::Material;
use crate::plastic::{PlasticOptions, PlasticPreconditioner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Screw,
    Edge,
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Screw => "screw",
            Preset::Edge => "edge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// Box edge lengths, in the same units as the core radius.
    pub extents: [f64; 3],
    pub center: [f64; 3],
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            extents: [40.0, 40.0, 20.0],
            center: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Basis functions per direction.
    pub bases: [usize; 3],
    pub degrees: [usize; 3],
    /// Knot clustering exponent toward the box center; 1 is uniform.
    pub grading: f64,
    /// Directions to which `grading` applies.
    pub graded_axes: [bool; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            bases: [48, 48, 24],
            degrees: [2, 2, 2],
            grading: Grading::DEFAULT_GAMMA,
            graded_axes: [true, true, false],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DislocationConfig {
    pub preset: Preset,
    pub burgers: f64,
    pub core_radius: f64,
    /// Position of the line in the `x1`-`x2` plane.
    pub center: [f64; 2],
}

impl Default for DislocationConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Screw,
            burgers: 1.0,
            core_radius: 1.0,
            center: [0.0; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub mu: f64,
    pub nu: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { mu: 1.0, nu: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub minres_tol: f64,
    pub pcg_tol: f64,
    pub newton_tol: f64,
    pub minres_max_iter: usize,
    pub pcg_max_iter: usize,
    pub newton_max_iter: usize,
    pub max_backtracks: usize,
    pub plastic_preconditioner: String,
    pub elastic_preconditioner: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            minres_tol: d.minres_tol,
            pcg_tol: d.pcg_tol,
            newton_tol: d.newton_tol,
            minres_max_iter: d.minres_max_iter,
            pcg_max_iter: d.pcg_max_iter,
            newton_max_iter: d.newton_max_iter,
            max_backtracks: d.max_backtracks,
            plastic_preconditioner: PlasticPreconditioner::default().to_string(),
            elastic_preconditioner: ElasticPreconditioner::default().to_string(),
        }
    }
}

/// Prescribed displacement of one face, e.g. `face = "x1+"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletFace {
    pub face: String,
    pub displacement: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryConfig {
    pub pin_rigid_modes: bool,
    pub dirichlet: Vec<DirichletFace>,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self {
            pin_rigid_modes: true,
            dirichlet: Vec::new(),
        }
    }
}

/// A sampling line parallel to a coordinate axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub name: String,
    /// 1, 2 or 3.
    pub axis: usize,
    /// The two remaining coordinates in increasing axis order.
    pub at: [f64; 2],
    pub samples: usize,
    /// Component names such as `Theta11` or `S23`.
    pub components: Vec<String>,
    /// Coordinate range along the axis; defaults to the full box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub vtk: bool,
    pub vtk_samples: [usize; 3],
    /// Empty means the preset's standard lines.
    pub profiles: Vec<ProfileConfig>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            vtk: true,
            vtk_samples: [41, 41, 21],
            profiles: Vec::new(),
        }
    }
}

/// Complete, validated description of one run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub dislocation: DislocationConfig,
    pub material: MaterialConfig,
    pub solver: SolverSection,
    pub boundary: BoundaryConfig,
    pub output: OutputConfig,
}

/// Parses `value` as a TOML scalar or array; bare words become strings.
fn parse_override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Splits `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::validation("--set", format!("expected key=value, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::validation("--set", "empty key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, sections) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, format!("`{s}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_override_value(value));
    Ok(())
}

fn deserialize_error(e: toml::de::Error) -> Error {
    Error::Parse(e.message().to_string())
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides (dotted keys).
    pub fn from_toml_str(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(deserialize_error)?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: RunConfig = table.try_into().map_err(deserialize_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, overrides)
    }

    /// Canonical TOML of every setting, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::to_toml`], hex encoded.
    /// SHA-256 of the canonical TOML, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output.dir = OutputConfig::default().dir;
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        for k in 0..3 {
            if !(d.extents[k] > 0.0 && d.extents[k].is_finite()) {
                return Err(Error::validation("domain.extents", "extents must be positive"));
            }
        }
        if d.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::validation("domain.center", "must be finite"));
        }
        let g = &self.grid;
        for k in 0..3 {
            if !(1..=6).contains(&g.degrees[k]) {
                return Err(Error::validation("grid.degrees", "degrees must be in 1..=6"));
            }
            if g.bases[k] < g.degrees[k] + 1 {
                return Err(Error::validation("grid.bases", "need at least degree + 1 bases per direction"));
            }
        }
        if !(g.grading >= 1.0 && g.grading.is_finite()) {
            return Err(Error::validation("grid.grading", "grading exponent must be >= 1"));
        }
        let s = &self.dislocation;
        if !s.burgers.is_finite() {
            return Err(Error::validation("dislocation.burgers", "must be finite"));
        }
        if !(s.core_radius > 0.0 && s.core_radius.is_finite()) {
            return Err(Error::validation("dislocation.core_radius", "must be positive"));
        }
        for k in 0..2 {
            let lo = d.center[k] - 0.5 * d.extents[k];
            let hi = d.center[k] + 0.5 * d.extents[k];
            if !(s.center[k] > lo && s.center[k] < hi) {
                return Err(Error::validation("dislocation.center", "line must pass through the box"));
            }
        }
        Material::new(self.material.mu, self.material.nu)?;
        let v = &self.solver;
        for (name, t) in [
            ("solver.minres_tol", v.minres_tol),
            ("solver.pcg_tol", v.pcg_tol),
            ("solver.newton_tol", v.newton_tol),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::validation(name, "tolerance must be in (0, 1)"));
            }
        }
        for (name, n) in [
            ("solver.minres_max_iter", v.minres_max_iter),
            ("solver.pcg_max_iter", v.pcg_max_iter),
            ("solver.newton_max_iter", v.newton_max_iter),
        ] {
            if n == 0 {
                return Err(Error::validation(name, "iteration cap must be positive"));
            }
        }
        v.plastic_preconditioner.parse::<PlasticPreconditioner>()?;
        v.elastic_preconditioner.parse::<ElasticPreconditioner>()?;
        self.boundary_spec()?;
        let o = &self.output;
        if o.vtk_samples.iter().any(|&n| n < 2) {
            return Err(Error::validation("output.vtk_samples", "need at least 2 samples per direction"));
        }
        for p in &o.profiles {
            if !(1..=3).contains(&p.axis) {
                return Err(Error::validation("output.profiles.axis", "axis must be 1, 2 or 3"));
            }
            if p.samples < 2 {
                return Err(Error::validation("output.profiles.samples", "need at least 2 samples"));
            }
            if p.name.is_empty() || p.name.contains(['/', '\\']) {
                return Err(Error::validation("output.profiles.name", "name must be a plain file stem"));
            }
            for c in &p.components {
                crate::export::Component::parse(c)
                    .map_err(|_| Error::validation("output.profiles.components", format!("unknown component `{c}`")))?;
            }
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        let v = &self.solver;
        SolverConfig {
            minres_tol: v.minres_tol,
            pcg_tol: v.pcg_tol,
            newton_tol: v.newton_tol,
            minres_max_iter: v.minres_max_iter,
            pcg_max_iter: v.pcg_max_iter,
            newton_max_iter: v.newton_max_iter,
            max_backtracks: v.max_backtracks,
        }
    }

    pub fn plastic_options(&self) -> Result<PlasticOptions> {
        Ok(PlasticOptions {
            pin_multiplier: true,
            preconditioner: self.solver.plastic_preconditioner.parse()?,
        })
    }

    pub fn elastic_preconditioner(&self) -> Result<ElasticPreconditioner> {
        self.solver.elastic_preconditioner.parse()
    }

    pub fn material(&self) -> Result<Material> {
        Material::new(self.material.mu, self.material.nu)
    }

    pub fn boundary_spec(&self) -> Result<BoundarySpec> {
        let mut b = BoundarySpec {
            pin_rigid_modes: self.boundary.pin_rigid_modes,
            ..BoundarySpec::default()
        };
        for f in &self.boundary.dirichlet {
            let (axis, side) = match f.face.as_str() {
                "x1-" => (0, 0),
                "x1+" => (0, 1),
                "x2-" => (1, 0),
                "x2+" => (1, 1),
                "x3-" => (2, 0),
                "x3+" => (2, 1),
                other => {
                    return Err(Error::validation(
                        "boundary.dirichlet.face",
                        format!("unknown face `{other}` (x1-, x1+, ..., x3+)"),
                    ))
                }
            };
            if f.displacement.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("boundary.dirichlet.displacement", "must be finite"));
            }
            b.faces[axis][side] = FaceCondition::Dirichlet(f.displacement);
        }
        Ok(b)
    }

    pub fn dislocation_spec(&self) -> Result<DislocationSpec> {
        let s = &self.dislocation;
        let d = match s.preset {
            Preset::Screw => DislocationSpec::screw(s.burgers, s.core_radius)?,
            Preset::Edge => DislocationSpec::edge(s.burgers, s.core_radius)?,
        };
        Ok(d.with_center(s.center))
    }

    pub fn torsion(&self) -> Result<TorsionField> {
        Ok(TorsionField::single(self.dislocation_spec()?))
    }

    pub fn build_patch(&self) -> Result<Arc<Patch>> {
        let g = &self.grid;
        let kvs = [0, 1, 2].map(|k| {
            let grading = if g.graded_axes[k] {
                Grading::centered(g.grading)
            } else {
                Grading::uniform()
            };
            make_graded_knot_vector(g.bases[k], g.degrees[k], grading)
        });
        let [a, b, c] = kvs;
        let basis = TensorBasis3D::with_unit_weights([a?, b?, c?]);
        Ok(Arc::new(Patch::affine_box(basis, self.domain.extents, self.domain.center)?))
    }
}
