//! Batch pipeline: configuration, plastic solve, elastic relaxation and
//! export, each failure tagged with the stage that raised it.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{Preset, ProfileConfig, RunConfig};
use crate::elastic::{write_newton_history, write_state, ElasticProblem, NewtonSolution};
use crate::error::Error;
use crate::export::{write_profile, write_vtk, Component, ProfileLine, ProfileOracle, SamplingGrid, SolvedFields};
use crate::krylov::write_history_csv;
use crate::oracles::VolterraParams;
use crate::plastic::{burgers_circuit, read_coefficients, solve_plastic, square_loop, write_coefficients, PlasticField, PlasticSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Plastic,
    Elastic,
    Export,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Plastic => "plastic",
            Stage::Elastic => "elastic",
            Stage::Export => "export",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

/// Which stages to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Full,
    PlasticOnly,
    /// Relax a plastic field read from a coefficient dump.
    ElasticOnly { plastic_file: PathBuf },
}

/// In-memory results of a run.
pub struct PipelineOutput {
    pub config_hash: String,
    pub plastic: Arc<PlasticField>,
    pub plastic_solution: Option<PlasticSolution>,
    pub elastic: Option<(ElasticProblem, NewtonSolution)>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

/// Current commit of the working directory, or `unknown`.
pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Ordered `key value` pairs written to `metadata.txt`.
pub fn metadata(config: &RunConfig, mode: &Mode) -> Vec<(String, String)> {
    let s = &config.solver;
    let b = config.boundary_spec().map(|b| b.pinning_description()).unwrap_or("invalid");
    vec![
        ("config_hash".to_string(), config.hash()),
        ("git_revision".into(), git_revision()),
        ("crate_version".into(), env!("CARGO_PKG_VERSION").into()),
        (
            "mode".into(),
            match mode {
                Mode::Full => "full".into(),
                Mode::PlasticOnly => "plastic-only".into(),
                Mode::ElasticOnly { plastic_file } => format!("elastic-only {}", plastic_file.display()),
            },
        ),
        ("preset".into(), config.dislocation.preset.to_string()),
        ("burgers".into(), format!("{}", config.dislocation.burgers)),
        ("core_radius".into(), format!("{}", config.dislocation.core_radius)),
        ("grid".into(), format!("{:?}", config.grid.bases)),
        ("degrees".into(), format!("{:?}", config.grid.degrees)),
        ("grading_gamma".into(), format!("{}", config.grid.grading)),
        ("graded_axes".into(), format!("{:?}", config.grid.graded_axes)),
        ("extents".into(), format!("{:?}", config.domain.extents)),
        ("minres_tol".into(), format!("{:e}", s.minres_tol)),
        ("pcg_tol".into(), format!("{:e}", s.pcg_tol)),
        ("newton_tol".into(), format!("{:e}", s.newton_tol)),
        ("plastic_preconditioner".into(), s.plastic_preconditioner.clone()),
        ("elastic_preconditioner".into(), s.elastic_preconditioner.clone()),
        ("pinning".into(), b.into()),
        ("mu".into(), format!("{}", config.material.mu)),
        ("nu".into(), format!("{}", config.material.nu)),
    ]
}

/// Standard sampling lines of each preset.
pub fn default_profiles(config: &RunConfig) -> Vec<ProfileConfig> {
    let c = config.dislocation.center;
    let z = config.domain.center[2];
    let line = |name: &str, axis: usize, comps: &[&str]| ProfileConfig {
        name: name.into(),
        axis,
        at: match axis {
            1 => [c[1], z],
            2 => [c[0], z],
            _ => c,
        },
        samples: 161,
        components: comps.iter().map(|s| s.to_string()).collect(),
        range: None,
    };
    match config.dislocation.preset {
        Preset::Screw => vec![
            line("theta_x2", 2, &["Theta31", "Theta32", "Theta33"]),
            line("stress_x1", 1, &["S23", "S13"]),
            line("stress_x2", 2, &["S23", "S13"]),
        ],
        Preset::Edge => vec![
            line("theta_x2", 2, &["Theta11", "Theta12"]),
            line("stress_x1", 1, &["S11", "S22", "S33", "S12"]),
            line("stress_x2", 2, &["S11", "S22", "S33", "S12"]),
        ],
    }
}

pub fn profile_oracle(config: &RunConfig) -> crate::error::Result<ProfileOracle> {
    let d = &config.dislocation;
    Ok(ProfileOracle {
        preset: d.preset,
        volterra: VolterraParams::new(config.material.mu, config.material.nu, d.burgers, d.core_radius)?,
        torsion: config.torsion()?,
        line_center: d.center,
        basepoint: [d.center[0], d.center[1], config.domain.center[2]],
    })
}

/// Plastic stage on the configured grid.
pub fn plastic_stage(config: &RunConfig) -> crate::error::Result<PlasticSolution> {
    let patch = config.build_patch()?;
    solve_plastic(&patch, &config.torsion()?, &config.solver_config(), &config.plastic_options()?)
}

/// Elastic stage on a given plastic field.
pub fn elastic_stage(config: &RunConfig, plastic: Arc<PlasticField>) -> crate::error::Result<(ElasticProblem, NewtonSolution)> {
    let mut prob = ElasticProblem::new(plastic, config.material()?, config.boundary_spec()?)?;
    prob.preconditioner = config.elastic_preconditioner()?;
    let sol = prob.newton_solve(&config.solver_config())?;
    Ok((prob, sol))
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> crate::error::Result<BufWriter<File>> {
    files.push(name.to_string());
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_plastic_outputs(
    dir: &Path,
    hash: &str,
    sol: &PlasticSolution,
    config: &RunConfig,
    files: &mut Vec<String>,
) -> crate::error::Result<()> {
    let mut w = create(dir, "plastic_coefficients.csv", files)?;
    write_coefficients(&sol.field, hash, &mut w)?;
    w.flush()?;
    for (k, c) in sol.components.iter().enumerate() {
        let mut w = create(dir, &format!("minres_history_{}.csv", k + 1), files)?;
        write_history_csv(&mut w, &c.history)?;
        w.flush()?;
    }
    let mut w = create(dir, "plastic_report.csv", files)?;
    writeln!(w, "key,value")?;
    for (k, c) in sol.components.iter().enumerate() {
        writeln!(w, "minres_iterations_{},{}", k + 1, c.iterations)?;
        writeln!(w, "minres_residual_{},{:.17e}", k + 1, c.residual)?;
    }
    let r = &sol.report;
    writeln!(w, "minres_residual,{:.17e}", r.minres_residual)?;
    writeln!(w, "structure_residual,{:.17e}", r.structure_residual)?;
    writeln!(w, "divergence_residual,{:.17e}", r.divergence_residual)?;
    writeln!(w, "theta_norm,{:.17e}", r.theta_norm)?;
    let d = &config.dislocation;
    let half = 5.0 * d.core_radius;
    if let Ok(lp) = square_loop(sol.field.patch(), d.center, half, config.domain.center[2]) {
        let b = burgers_circuit(&sol.field, &lp, 6)?;
        writeln!(w, "burgers_circuit_5R,{:.17e} {:.17e} {:.17e}", b[0], b[1], b[2])?;
    }
    w.flush()?;
    Ok(())
}

fn write_elastic_outputs(
    dir: &Path,
    hash: &str,
    prob: &ElasticProblem,
    sol: &NewtonSolution,
    files: &mut Vec<String>,
) -> crate::error::Result<()> {
    let mut w = create(dir, "elastic_state.csv", files)?;
    write_state(&sol.state, hash, &mut w)?;
    w.flush()?;
    let mut w = create(dir, "newton_history.csv", files)?;
    write_newton_history(&sol.history, &mut w)?;
    w.flush()?;
    let mut w = create(dir, "elastic_report.csv", files)?;
    writeln!(w, "key,value")?;
    writeln!(w, "newton_iterations,{}", sol.iterations)?;
    writeln!(w, "relative_residual,{:.17e}", sol.relative_residual)?;
    writeln!(w, "strain_energy,{:.17e}", prob.strain_energy(&sol.state)?)?;
    w.flush()?;
    Ok(())
}

fn write_field_outputs(
    dir: &Path,
    config: &RunConfig,
    plastic: &PlasticField,
    elastic: Option<&(ElasticProblem, NewtonSolution)>,
    files: &mut Vec<String>,
) -> crate::error::Result<()> {
    let fields = SolvedFields::new(plastic, elastic.map(|(p, s)| (p, &s.state)))?;
    if config.output.vtk {
        let grid = SamplingGrid::covering(fields_domain(&fields), config.output.vtk_samples)?;
        let mut w = create(dir, "fields.vtk", files)?;
        let title = format!("{} dislocation, config {}", config.dislocation.preset, &config.hash()[..16]);
        write_vtk(&fields, &grid, &title, &mut w)?;
        w.flush()?;
    }
    let oracle = profile_oracle(config)?;
    let profiles = if config.output.profiles.is_empty() {
        default_profiles(config)
    } else {
        config.output.profiles.clone()
    };
    for p in &profiles {
        let domain = fields_domain(&fields);
        let mut line = ProfileLine::spanning(domain, p.axis - 1, p.at, p.samples);
        if let Some(r) = p.range {
            line.range = r;
        }
        let comps: Vec<Component> = p.components.iter().map(|c| Component::parse(c)).collect::<Result<_, _>>()?;
        let mut w = create(dir, &format!("profile_{}.csv", p.name), files)?;
        write_profile(&fields, &line, &comps, &oracle, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn fields_domain<'a>(f: &'a SolvedFields<'_>) -> &'a crate::geometry::BoxDomain {
    use crate::export::FieldSampler;
    f.domain()
}

/// Runs the selected stages and writes every artifact to
/// `config.output.dir`.
pub fn run_pipeline(config: &RunConfig, mode: &Mode) -> Result<PipelineOutput, PipelineError> {
    config.validate().at(Stage::Config)?;
    let hash = config.hash();
    let dir = PathBuf::from(&config.output.dir);
    std::fs::create_dir_all(&dir).at(Stage::Export)?;
    let mut files = Vec::new();
    {
        let mut w = create(&dir, "metadata.txt", &mut files).at(Stage::Export)?;
        for (k, v) in metadata(config, mode) {
            writeln!(w, "{k} {v}").at(Stage::Export)?;
        }
        w.flush().at(Stage::Export)?;
        let mut w = create(&dir, "config.toml", &mut files).at(Stage::Export)?;
        w.write_all(config.to_toml().as_bytes()).at(Stage::Export)?;
        w.flush().at(Stage::Export)?;
    }

    let (plastic, plastic_solution) = match mode {
        Mode::ElasticOnly { plastic_file } => {
            let f = File::open(plastic_file).at(Stage::Plastic)?;
            let (field, _) = read_coefficients(BufReader::new(f)).at(Stage::Plastic)?;
            (Arc::new(field), None)
        }
        _ => {
            let sol = plastic_stage(config).at(Stage::Plastic)?;
            write_plastic_outputs(&dir, &hash, &sol, config, &mut files).at(Stage::Export)?;
            (Arc::new(sol.field.clone()), Some(sol))
        }
    };

    let elastic = match mode {
        Mode::PlasticOnly => None,
        _ => {
            let (prob, sol) = elastic_stage(config, plastic.clone()).at(Stage::Elastic)?;
            write_elastic_outputs(&dir, &hash, &prob, &sol, &mut files).at(Stage::Export)?;
            Some((prob, sol))
        }
    };

    write_field_outputs(&dir, config, &plastic, elastic.as_ref(), &mut files).at(Stage::Export)?;
    Ok(PipelineOutput {
        config_hash: hash,
        plastic,
        plastic_solution,
        elastic,
        files,
    })
}
