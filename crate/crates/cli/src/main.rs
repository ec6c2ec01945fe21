use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use dislocation_iga::config::{parse_assignment, RunConfig};
use dislocation_iga::elastic::{read_state, ElasticProblem, ElasticState};
use dislocation_iga::export::{write_profile, write_vtk, Component, FieldSampler, ProfileLine, SamplingGrid, SolvedFields};
use dislocation_iga::pipeline::{profile_oracle, run_pipeline, Mode, PipelineOutput};
use dislocation_iga::plastic::{read_coefficients, PlasticField};
use dislocation_iga::Error;

/// Plastic and elastic fields of straight dislocations in a box.
#[derive(Parser)]
#[command(name = "dislo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set dislocation.preset=edge`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as `--set output.dir=...`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Fields {
    /// Plastic coefficient dump.
    #[arg(long)]
    plastic_file: PathBuf,
    /// Elastic state dump; stresses are zero without it.
    #[arg(long)]
    elastic_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Plastic solve, elastic relaxation and export.
    Solve(Common),
    /// Plastic solve and export only.
    PlasticOnly(Common),
    /// Elastic relaxation of a previously computed plastic field.
    ElasticOnly {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        plastic_file: PathBuf,
    },
    /// Sample components along an axis-parallel line with reference columns.
    Profile {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fields: Fields,
        /// Axis the line runs along (1, 2 or 3).
        #[arg(long)]
        axis: usize,
        /// The two remaining coordinates, in increasing axis order.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        at: Vec<f64>,
        /// Coordinate range along the axis; the full box when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        range: Option<Vec<f64>>,
        #[arg(long, default_value_t = 161)]
        samples: usize,
        /// Comma-separated component names, e.g. `S23,S13,Theta31`.
        #[arg(long, value_delimiter = ',', required = true)]
        components: Vec<String>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a legacy VTK structured grid of all fields.
    ExportVtk {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        fields: Fields,
        /// Samples per direction.
        #[arg(long, value_delimiter = ',', default_values_t = [41, 41, 21])]
        samples: Vec<usize>,
        #[arg(long)]
        output: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    Stage(dislocation_iga::pipeline::PipelineError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut overrides = c.overrides.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(out) = &c.out {
        let quoted = toml_string(&out.display().to_string());
        overrides.push(("output.dir".into(), quoted));
    }
    match &c.config {
        Some(path) => RunConfig::from_file(path, &overrides),
        None => RunConfig::from_toml_str("", &overrides),
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn expect_len<T>(flag: &str, v: &[T], n: usize) -> Result<(), Error> {
    if v.len() != n {
        return Err(Error::InvalidArgument(format!("{flag} takes {n} comma-separated values, got {}", v.len())));
    }
    Ok(())
}

fn load_plastic(path: &Path) -> Result<PlasticField, Error> {
    Ok(read_coefficients(BufReader::new(File::open(path)?))?.0)
}

struct Loaded {
    plastic: Arc<PlasticField>,
    elastic: Option<(ElasticProblem, ElasticState)>,
}

fn load_fields(config: &RunConfig, f: &Fields) -> Result<Loaded, Error> {
    let plastic = Arc::new(load_plastic(&f.plastic_file)?);
    let elastic = match &f.elastic_file {
        Some(path) => {
            let state = read_state(BufReader::new(File::open(path)?))?;
            let prob = ElasticProblem::new(plastic.clone(), config.material()?, config.boundary_spec()?)?;
            if state.y.len() != plastic.patch().num_basis() {
                return Err(Error::Parse(format!(
                    "{} has {} coefficients, the plastic field has {}",
                    path.display(),
                    state.y.len(),
                    plastic.patch().num_basis()
                )));
            }
            Some((prob, state))
        }
        None => None,
    };
    Ok(Loaded { plastic, elastic })
}

fn summarize(out: &PipelineOutput) {
    eprintln!("config hash {}", out.config_hash);
    if let Some(sol) = &out.plastic_solution {
        eprintln!(
            "plastic: MINRES residual {:.3e} (iterations {:?})",
            sol.report.minres_residual,
            sol.components.iter().map(|c| c.iterations).collect::<Vec<_>>()
        );
    }
    if let Some((prob, sol)) = &out.elastic {
        let w = prob.strain_energy(&sol.state).unwrap_or(f64::NAN);
        eprintln!(
            "elastic: {} Newton iterations, relative residual {:.3e}, energy {:.6e}",
            sol.iterations, sol.relative_residual, w
        );
    }
    eprintln!("wrote {} files", out.files.len());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve(c) => {
            let cfg = load_config(&c)?;
            summarize(&run_pipeline(&cfg, &Mode::Full).map_err(Failure::Stage)?);
        }
        Command::PlasticOnly(c) => {
            let cfg = load_config(&c)?;
            summarize(&run_pipeline(&cfg, &Mode::PlasticOnly).map_err(Failure::Stage)?);
        }
        Command::ElasticOnly { common, plastic_file } => {
            let cfg = load_config(&common)?;
            summarize(&run_pipeline(&cfg, &Mode::ElasticOnly { plastic_file }).map_err(Failure::Stage)?);
        }
        Command::Profile {
            common,
            fields,
            axis,
            at,
            range,
            samples,
            components,
            output,
        } => {
            let cfg = load_config(&common)?;
            let loaded = load_fields(&cfg, &fields)?;
            let sampler = SolvedFields::new(&loaded.plastic, loaded.elastic.as_ref().map(|(p, s)| (p, s)))?;
            if !(1..=3).contains(&axis) {
                return Err(Error::InvalidArgument(format!("axis must be 1, 2 or 3, got {axis}")).into());
            }
            expect_len("--at", &at, 2)?;
            if let Some(r) = &range {
                expect_len("--range", r, 2)?;
            }
            let mut line = ProfileLine::spanning(sampler.domain(), axis - 1, [at[0], at[1]], samples);
            if let Some(r) = range {
                line.range = [r[0], r[1]];
            }
            let comps = components.iter().map(|c| Component::parse(c)).collect::<Result<Vec<_>, _>>()?;
            let oracle = profile_oracle(&cfg)?;
            match output {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    write_profile(&sampler, &line, &comps, &oracle, &mut w)?;
                    w.flush()?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    write_profile(&sampler, &line, &comps, &oracle, &mut w)?;
                    w.flush()?;
                }
            }
        }
        Command::ExportVtk {
            common,
            fields,
            samples,
            output,
        } => {
            let cfg = load_config(&common)?;
            let loaded = load_fields(&cfg, &fields)?;
            let sampler = SolvedFields::new(&loaded.plastic, loaded.elastic.as_ref().map(|(p, s)| (p, s)))?;
            expect_len("--samples", &samples, 3)?;
            let grid = SamplingGrid::covering(sampler.domain(), [samples[0], samples[1], samples[2]])?;
            let mut w = BufWriter::new(File::create(&output)?);
            write_vtk(&sampler, &grid, "dislocation fields", &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else if e.is_non_convergence() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e.source))
        }
    }
}
