use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixmoment::extract::FitStatus;
use mixmoment::families::FamilyKind;
use mixmoment::relax::Distance;
use mixmoment_cli::config::{BenchConfig, DataInput, FitConfig, GenConfig, ProjectConfig, Scaling};
use mixmoment_cli::{cmd_bench, cmd_fit, cmd_gen, cmd_project_univariate, CliError};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "mixsdp", version, about = "Mixture estimation from empirical moments by semidefinite relaxation")]
struct Cli {
    /// Log solver and extraction progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mixture to a CSV sample and report its order, atoms and weights.
    Fit(FitArgs),
    /// Estimate the mixture order of every coordinate separately and take the mode.
    Project(ProjectArgs),
    /// Compare extracted and random initializations of k-means and EM.
    Bench(BenchArgs),
    /// Write a labeled sample of a random planted Gaussian mixture.
    Gen(GenArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file, one sample per row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// The first CSV line is a header.
    #[arg(long)]
    header: bool,
    /// The last CSV column is an integer class label.
    #[arg(long)]
    labels: bool,
}

impl DataArgs {
    fn apply(&self, input: &mut DataInput) {
        if let Some(p) = &self.data {
            input.path = p.clone();
        }
        input.header |= self.header;
        input.labels |= self.labels;
    }
}

#[derive(Args)]
struct FitArgs {
    /// JSON configuration (or a previous report); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    family: Option<FamilyKind>,
    #[arg(long)]
    distance: Option<Distance>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fit in the original coordinates instead of the unit cube.
    #[arg(long)]
    no_normalize: bool,
    /// Comma-separated lower bounds of the parameter box.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    lower: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    upper: Option<Vec<f64>>,
    #[arg(long)]
    principal_submatrix: bool,
    /// CSV of marginal mixture densities for plotting.
    #[arg(long)]
    density_csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Map all coordinates with one common range, or each with its own.
    #[arg(long, value_enum)]
    scaling: Option<Scaling>,
    #[arg(long)]
    distance: Option<Distance>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    /// Keep this many principal components of the input data.
    #[arg(long)]
    pca: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    /// Number of planted mixtures.
    #[arg(long)]
    mixtures: Option<usize>,
    #[arg(long)]
    separability: Option<f64>,
    #[arg(long)]
    eccentricity: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV with one row per clustering run.
    #[arg(long)]
    runs_csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    separability: Option<f64>,
    #[arg(long)]
    eccentricity: Option<f64>,
    /// Read the eccentricity as the largest-to-smallest variance ratio.
    #[arg(long)]
    reciprocal_eccentricity: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set<T: Clone>(target: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *target = v.clone();
    }
}

/// Loads a configuration file; a report is accepted through its `config` field.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn emit(json: String, out: &Option<PathBuf>) {
    if out.is_none() {
        // a closed pipe (`| head`) is not an error of the command
        let _ = writeln!(std::io::stdout(), "{json}");
    }
}

fn run(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Fit(a) => {
            let mut c: FitConfig = load_config(a.config.as_deref())?;
            a.data.apply(&mut c.data);
            set(&mut c.family, &a.family);
            set(&mut c.distance, &a.distance);
            if let Some(o) = a.order {
                c.order = o;
                c.max_order = c.max_order.max(o);
            }
            set(&mut c.max_order, &a.max_order);
            set(&mut c.epsilon, &a.epsilon);
            set(&mut c.tol, &a.tol);
            set(&mut c.seed, &a.seed);
            if a.no_normalize || (a.family.is_some() && a.family != Some(FamilyKind::GaussianDiagonal)) {
                c.normalize = false;
            }
            if a.lower.is_some() {
                c.lower = a.lower.clone();
            }
            if a.upper.is_some() {
                c.upper = a.upper.clone();
            }
            c.principal_submatrix |= a.principal_submatrix;
            if a.density_csv.is_some() {
                c.density_csv = a.density_csv.clone();
            }
            if a.out.is_some() {
                c.out = a.out.clone();
            }
            let report = cmd_fit(&c)?;
            emit(report.to_json()?, &c.out);
            Ok(if report.result.status == FitStatus::Failed { 1 } else { 0 })
        }
        Command::Project(a) => {
            let mut c: ProjectConfig = load_config(a.config.as_deref())?;
            a.data.apply(&mut c.data);
            set(&mut c.scaling, &a.scaling);
            set(&mut c.distance, &a.distance);
            set(&mut c.order, &a.order);
            set(&mut c.epsilon, &a.epsilon);
            set(&mut c.tol, &a.tol);
            set(&mut c.seed, &a.seed);
            if a.out.is_some() {
                c.out = a.out.clone();
            }
            let report = cmd_project_univariate(&c)?;
            emit(report.to_json()?, &c.out);
            let failed = report.result.coordinates.iter().any(|e| e.status == FitStatus::Failed);
            Ok(if failed { 1 } else { 0 })
        }
        Command::Bench(a) => {
            let mut c: BenchConfig = load_config(a.config.as_deref())?;
            if a.data.data.is_some() {
                let mut input = c.data.clone().unwrap_or_default();
                a.data.apply(&mut input);
                c.data = Some(input);
            }
            if a.pca.is_some() {
                c.pca = a.pca;
            }
            set(&mut c.k, &a.k);
            set(&mut c.dim, &a.dim);
            set(&mut c.samples, &a.samples);
            set(&mut c.mixtures, &a.mixtures);
            set(&mut c.separability, &a.separability);
            set(&mut c.eccentricity, &a.eccentricity);
            set(&mut c.order, &a.order);
            set(&mut c.epsilon, &a.epsilon);
            set(&mut c.tol, &a.tol);
            set(&mut c.repeats, &a.repeats);
            set(&mut c.seed, &a.seed);
            if a.out.is_some() {
                c.out = a.out.clone();
            }
            if a.runs_csv.is_some() {
                c.runs_csv = a.runs_csv.clone();
            }
            let report = cmd_bench(&c)?;
            emit(report.to_json()?, &c.out);
            Ok(0)
        }
        Command::Gen(a) => {
            let mut c: GenConfig = load_config(a.config.as_deref())?;
            set(&mut c.k, &a.k);
            set(&mut c.dim, &a.dim);
            set(&mut c.samples, &a.samples);
            set(&mut c.separability, &a.separability);
            set(&mut c.eccentricity, &a.eccentricity);
            c.reciprocal_eccentricity |= a.reciprocal_eccentricity;
            set(&mut c.seed, &a.seed);
            if let Some(o) = &a.out {
                c.out = o.clone();
            }
            cmd_gen(&c)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = match &cli.command {
        Command::Fit(_) => "fit",
        Command::Project(_) => "project",
        Command::Bench(_) => "bench",
        Command::Gen(_) => "gen",
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.record(name));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
