use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use mixmoment::cluster::{benchmark_dataset, run_benchmark, run_seed, BenchmarkReport};
use mixmoment::data::{
    empirical_moments, normalize, normalize_joint, pca_reduce, read_csv, sample_gmm, write_csv_to, Dataset, MixtureSpec, Projection,
};
use mixmoment::extract::{run_algorithm1, Algorithm1Options, FitStatus, OrderStep};
use mixmoment::families::{box_set, FamilyKind, ParametricFamily, Regularizer};
use mixmoment::relax::RelaxationSpec;
use serde::Serialize;

use crate::config::{BenchConfig, DataInput, FitConfig, GenConfig, ProjectConfig, Scaling};
use crate::{write_file, CliError, Report};

fn load(input: &DataInput) -> Result<Dataset, CliError> {
    if input.path.as_os_str().is_empty() {
        return Err(CliError::input("no data path given"));
    }
    Ok(read_csv(&input.path, input.header, input.labels)?)
}

fn column_range(data: &Dataset, j: usize) -> (f64, f64) {
    let c = data.points.column(j);
    (c.min(), c.max())
}

/// Parameter box used when the configuration gives none.
fn default_bounds(family: FamilyKind, data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.dim();
    let ranges: Vec<(f64, f64)> = (0..n).map(|j| column_range(data, j)).collect();
    match family {
        FamilyKind::GaussianDiagonal => {
            let widths: Vec<f64> = ranges.iter().map(|(lo, hi)| if hi > lo { hi - lo } else { 1.0 }).collect();
            let lower = ranges.iter().map(|r| r.0).chain(widths.iter().map(|w| 0.05 * w)).collect();
            let upper = ranges.iter().zip(&widths).map(|(r, w)| if r.1 > r.0 { r.1 } else { r.0 + w }).chain(widths.clone()).collect();
            (lower, upper)
        }
        FamilyKind::Poisson | FamilyKind::Exponential => {
            let upper = ranges.iter().map(|r| 1.5 * r.1.max(1.0)).collect();
            (vec![0.0; n], upper)
        }
    }
}

fn regularizer(p: usize, order: usize, epsilon: f64) -> Result<Regularizer, CliError> {
    Ok(if epsilon > 0.0 { Regularizer::trace(p, order, epsilon)? } else { Regularizer::none(p) })
}

#[derive(Clone, Debug, Serialize)]
pub struct Component {
    pub weight: f64,
    /// Parameters in the original data coordinates.
    pub theta: Vec<f64>,
    /// Parameters in the coordinates the relaxation was solved in.
    pub theta_working: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub status: FitStatus,
    pub khat: usize,
    pub order: usize,
    pub objective: f64,
    pub duality_gap: Option<f64>,
    pub flatness_shift: usize,
    pub rank_rule: String,
    pub message: Option<String>,
    pub components: Vec<Component>,
    /// Largest deviation between the extracted measure's moments and the solver's.
    pub moment_residual: Option<f64>,
    pub trace: Vec<OrderStep>,
    pub samples: usize,
    pub dim: usize,
    pub constant_columns: Vec<usize>,
    pub seconds: f64,
}

pub type FitReport = Report<FitConfig, FitResult>;

/// Solve, test flatness and extract a mixture from a CSV sample.
pub fn cmd_fit(config: &FitConfig) -> Result<FitReport, CliError> {
    config.validate()?;
    let started = Instant::now();
    let raw = load(&config.data)?;
    let data = if config.normalize { normalize(&raw)? } else { raw };
    let n = data.dim();
    let family = Arc::new(ParametricFamily::new(config.family, n));
    let p = family.param_dim();

    let mut resolved = config.clone();
    if resolved.lower.is_none() {
        let (lo, hi) = default_bounds(config.family, &data);
        resolved.lower = Some(lo);
        resolved.upper = Some(hi);
    }
    let (lower, upper) = (resolved.lower.clone().unwrap(), resolved.upper.clone().unwrap());
    if lower.len() != p || upper.len() != p {
        return Err(CliError::input(format!("the {} family on {n} coordinates needs {p} bounds", config.family)));
    }
    let set = box_set(&lower, &upper)?;
    let spec = RelaxationSpec::new(config.distance, config.order, family.clone(), set, regularizer(p, config.order, config.epsilon)?)?;
    let mu = empirical_moments(&data, 2 * config.max_order)?;
    let opts = Algorithm1Options {
        tol: config.tol,
        max_order: config.max_order,
        seed: config.seed,
        principal_submatrix: config.principal_submatrix,
        ..Default::default()
    };
    let report = run_algorithm1(&mu, &spec, &opts)?;

    let components: Vec<Component> = report
        .measure
        .iter()
        .flat_map(|m| m.atoms.iter().zip(&m.weights))
        .map(|(theta, &weight)| {
            let theta_orig = match config.family {
                FamilyKind::GaussianDiagonal => {
                    let mut t = data.denormalize_point(&theta[..n]);
                    t.extend(data.denormalize_scale(&theta[n..]));
                    t
                }
                _ => theta.clone(),
            };
            Component {
                weight,
                mean: family.mean(&theta_orig),
                std_dev: family.std_dev(&theta_orig),
                theta: theta_orig,
                theta_working: theta.clone(),
            }
        })
        .collect();
    let moment_residual = match (&report.measure, &report.phi) {
        (Some(m), Some(phi)) => m.moment_residual(phi).ok(),
        _ => None,
    };
    if let Some(path) = &config.density_csv {
        write_density(path, &family, &data, &components, config.density_points)?;
    }
    let result = FitResult {
        status: report.status,
        khat: report.khat,
        order: report.order,
        objective: report.objective,
        duality_gap: report.duality_gap,
        flatness_shift: report.flatness_shift,
        rank_rule: report.rank_rule,
        message: report.message,
        components,
        moment_residual,
        trace: report.trace,
        samples: data.len(),
        dim: n,
        constant_columns: data.constant_columns(),
        seconds: started.elapsed().as_secs_f64(),
    };
    let out = Report::new("fit", config.seed, resolved, result);
    if let Some(path) = &config.out {
        write_file(path, out.to_json()?.as_bytes())?;
    }
    Ok(out)
}

/// Marginal mixture densities on a grid over each coordinate's data range.
fn write_density(
    path: &PathBuf,
    family: &ParametricFamily,
    data: &Dataset,
    components: &[Component],
    points: usize,
) -> Result<(), CliError> {
    let uni = family.univariate();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::failure(e.to_string());
    w.write_record(["coordinate", "x", "density"]).map_err(err)?;
    for j in 0..data.dim() {
        let (a, b) = column_range(data, j);
        let (lo, hi) = (data.maps[j].invert(a), data.maps[j].invert(b));
        let xs: Vec<f64> = match family.kind() {
            FamilyKind::Poisson => (lo.floor().max(0.0) as i64..=hi.ceil() as i64).map(|v| v as f64).collect(),
            _ => (0..points.max(2)).map(|i| lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64).collect(),
        };
        let idx = family.coordinate_params(j);
        for x in xs {
            let dens: f64 = components
                .iter()
                .map(|c| c.weight * uni.density_1d(&idx.iter().map(|&i| c.theta[i]).collect::<Vec<_>>(), x))
                .sum();
            w.write_record([j.to_string(), format!("{x:?}"), format!("{dens:?}")]).map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::failure(e.to_string()))?;
    write_file(path, &bytes)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateEstimate {
    pub coordinate: usize,
    pub khat: usize,
    pub status: FitStatus,
    pub objective: f64,
    pub duality_gap: Option<f64>,
    /// Spread of the coordinate before normalization.
    pub range: (f64, f64),
    pub constant: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectResult {
    pub coordinates: Vec<CoordinateEstimate>,
    /// Number of coordinates per estimated order.
    pub histogram: BTreeMap<usize, usize>,
    /// Most frequent order; absent when several orders tie.
    pub mode: Option<usize>,
    /// Every order attaining the top count.
    pub mode_candidates: Vec<usize>,
    pub tie: bool,
    pub seconds: f64,
}

pub type ProjectReport = Report<ProjectConfig, ProjectResult>;

/// Most frequent value(s) of a histogram, ascending.
pub fn mode_candidates(histogram: &BTreeMap<usize, usize>) -> Vec<usize> {
    let top = histogram.values().copied().max().unwrap_or(0);
    histogram.iter().filter(|(_, &c)| c == top && top > 0).map(|(&k, _)| k).collect()
}

/// Univariate Gaussian-mixture order per coordinate and their mode.
pub fn cmd_project_univariate(config: &ProjectConfig) -> Result<ProjectReport, CliError> {
    config.validate()?;
    let started = Instant::now();
    let raw = load(&config.data)?;
    let data = match config.scaling {
        Scaling::Joint => normalize_joint(&raw)?,
        Scaling::PerCoordinate => normalize(&raw)?,
    };
    let family = Arc::new(ParametricFamily::gaussian(1));
    let set = box_set(&[0.0, config.sigma_lower], &[1.0, config.sigma_upper])?;
    let spec = RelaxationSpec::new(config.distance, config.order, family, set, regularizer(2, config.order, config.epsilon)?)?;
    let opts = Algorithm1Options { tol: config.tol, max_order: config.order, seed: config.seed, ..Default::default() };
    let mut coordinates = Vec::with_capacity(data.dim());
    let mut histogram = BTreeMap::new();
    for j in 0..data.dim() {
        let mu = empirical_moments(&data.column(j), 2 * config.order)?;
        let report = run_algorithm1(&mu, &spec, &opts)?;
        log::info!("coordinate {j}: khat {} ({:?})", report.khat, report.status);
        *histogram.entry(report.khat).or_insert(0) += 1;
        let range = column_range(&raw, j);
        coordinates.push(CoordinateEstimate {
            coordinate: j,
            khat: report.khat,
            status: report.status,
            objective: report.objective,
            duality_gap: report.duality_gap,
            range,
            constant: range.0 == range.1,
        });
    }
    let candidates = mode_candidates(&histogram);
    let result = ProjectResult {
        coordinates,
        mode: (candidates.len() == 1).then(|| candidates[0]),
        tie: candidates.len() > 1,
        mode_candidates: candidates,
        histogram,
        seconds: started.elapsed().as_secs_f64(),
    };
    let out = Report::new("project", config.seed, config.clone(), result);
    if let Some(path) = &config.out {
        write_file(path, out.to_json()?.as_bytes())?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    #[serde(flatten)]
    pub report: BenchmarkReport,
    /// Principal-component reduction applied to the input data, if any.
    pub projection: Option<Projection>,
    pub seconds: f64,
}

pub type BenchReport = Report<BenchConfig, BenchResult>;

/// Extracted versus random initialization of k-means and EM.
pub fn cmd_bench(config: &BenchConfig) -> Result<BenchReport, CliError> {
    config.validate()?;
    let started = Instant::now();
    let bench = config.benchmark();
    let (report, projection) = match &config.data {
        Some(input) => {
            let raw = load(input)?;
            let (data, projection) = match config.pca {
                Some(k) => {
                    let (d, p) = pca_reduce(&raw, k)?;
                    (d, Some(p))
                }
                None => (normalize(&raw)?, None),
            };
            let bench = mixmoment::cluster::BenchmarkConfig { dim: data.dim(), samples: data.len(), ..bench };
            let result = benchmark_dataset(&data, config.k, &bench, 0, config.seed)?;
            (BenchmarkReport::from_mixtures(bench, vec![result]), projection)
        }
        None => {
            let seeds: Vec<u64> = (0..config.mixtures).map(|i| run_seed(config.seed, i as u64)).collect();
            (run_benchmark(&bench, &seeds)?, None)
        }
    };
    if let Some(path) = &config.runs_csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_file(path, &buf)?;
    }
    let out = Report::new("bench", config.seed, config.clone(), BenchResult { report, projection, seconds: started.elapsed().as_secs_f64() });
    if let Some(path) = &config.out {
        write_file(path, out.to_json()?.as_bytes())?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct GenResult {
    pub csv: PathBuf,
    pub samples: usize,
    pub truth: MixtureSpec,
}

pub type GenReport = Report<GenConfig, GenResult>;

/// Sidecar path holding the ground truth of a generated CSV.
pub fn sidecar_path(csv: &std::path::Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Labeled sample of a random planted mixture plus a JSON sidecar with its parameters.
pub fn cmd_gen(config: &GenConfig) -> Result<GenReport, CliError> {
    config.validate()?;
    let truth = MixtureSpec::random(
        config.k,
        config.dim,
        config.separability,
        config.eccentricity,
        config.reciprocal_eccentricity,
        config.sigma_range,
        config.seed,
    )?;
    let data = sample_gmm(&truth, config.samples, run_seed(config.seed, 0))?;
    let mut buf = Vec::new();
    write_csv_to(&data, &mut buf, true)?;
    write_file(&config.out, &buf)?;
    let out = Report::new(
        "gen",
        config.seed,
        config.clone(),
        GenResult { csv: config.out.clone(), samples: config.samples, truth },
    );
    write_file(&sidecar_path(&config.out), out.to_json()?.as_bytes())?;
    Ok(out)
}
