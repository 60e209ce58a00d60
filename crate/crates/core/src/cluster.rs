//! k-means and diagonal-Gaussian EM, initialized at random or from extracted
//! atoms, plus the harness comparing the two.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{empirical_moments, normalize, sample_gmm, Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::extract::{extract_measure, run_algorithm1, Algorithm1Options, AtomicMeasure, FitStatus};
use crate::families::{box_set, ParametricFamily, Regularizer};
use crate::relax::{Distance, RelaxationSpec};

const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    Em,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Kmeans => "kmeans",
            Method::Em => "em",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    ExtractedW2,
    ExtractedTv,
    Random,
}

impl InitKind {
    pub fn from_distance(d: Distance) -> Self {
        match d {
            Distance::W2 => InitKind::ExtractedW2,
            Distance::Tv => InitKind::ExtractedTv,
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::ExtractedW2 => "extracted_w2",
            InitKind::ExtractedTv => "extracted_tv",
            InitKind::Random => "random",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extracted_w2" => Ok(InitKind::ExtractedW2),
            "extracted_tv" => Ok(InitKind::ExtractedTv),
            "random" => Ok(InitKind::Random),
            _ => Err(Error::Parse(format!("unknown init '{s}'"))),
        }
    }
}

/// Diagonal Gaussian mixture parameters; `variances` may be absent for a
/// means-only initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Option<Vec<Vec<f64>>>,
}

impl GmmParams {
    pub fn k(&self) -> usize {
        self.means.len()
    }
}

#[derive(Clone, Debug)]
pub enum Init {
    Random,
    Given { kind: InitKind, params: GmmParams },
}

impl Init {
    pub fn kind(&self) -> InitKind {
        match self {
            Init::Random => InitKind::Random,
            Init::Given { kind, .. } => *kind,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterRun {
    pub method: Method,
    pub init: InitKind,
    pub iterations: usize,
    /// Inertia for k-means, log-likelihood for EM.
    pub objective: f64,
    pub assignments: Vec<usize>,
    pub misclassification: Option<f64>,
    /// Objective after the initialization and after every iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn check_k(data: &Dataset, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Cluster("need at least one cluster".into()));
    }
    if k > data.len() {
        return Err(Error::Cluster(format!("{k} clusters for {} points", data.len())));
    }
    Ok(())
}

fn check_init(data: &Dataset, k: usize, init: &Init) -> Result<()> {
    if let Init::Given { params, .. } = init {
        if params.k() != k || params.weights.len() != k {
            return Err(Error::Cluster(format!("initialization has {} components, expected {k}", params.k())));
        }
        if params.means.iter().any(|m| m.len() != data.dim()) {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: params.means[0].len() });
        }
    }
    Ok(())
}

fn sq_dist(points: &DMatrix<f64>, i: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, cj)| (points[(i, j)] - cj).powi(2)).sum()
}

fn assign(points: &DMatrix<f64>, centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = (0..points.nrows())
        .map(|i| {
            let (best, dist) = centers
                .iter()
                .enumerate()
                .map(|(c, center)| (c, sq_dist(points, i, center)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("at least one center");
            inertia += dist;
            best
        })
        .collect();
    (labels, inertia)
}

/// Centroids of `labels`; empty clusters take the point farthest from its
/// current center, which then leaves its old cluster.
fn update_centers(points: &DMatrix<f64>, labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let (n, dim) = points.shape();
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { break };
        let far = (0..n)
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| sq_dist(points, a, &centers[labels[a]]).total_cmp(&sq_dist(points, b, &centers[labels[b]])))
            .expect("more points than clusters");
        labels[far] = empty;
        centers[empty] = points.row(far).iter().copied().collect();
    }
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0.0; k];
    for i in 0..n {
        counts[labels[i]] += 1.0;
        for j in 0..dim {
            sums[labels[i]][j] += points[(i, j)];
        }
    }
    for c in 0..k {
        centers[c] = sums[c].iter().map(|s| s / counts[c]).collect();
    }
}

fn with_labels(mut run: ClusterRun, data: &Dataset, k: usize) -> Result<ClusterRun> {
    if let Some(labels) = &data.labels {
        run.misclassification = Some(misclassification(&run.assignments, labels, k)?);
    }
    Ok(run)
}

/// Lloyd iterations from the assignment induced by the initial centers until
/// the assignment stops changing or `max_iter` updates have been made.
pub fn kmeans(data: &Dataset, k: usize, init: &Init, max_iter: usize, seed: u64) -> Result<ClusterRun> {
    check_k(data, k)?;
    check_init(data, k, init)?;
    let points = &data.points;
    let mut centers: Vec<Vec<f64>> = match init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, data.len(), k).iter().map(|i| data.row(i)).collect()
        }
        Init::Given { params, .. } => params.means.clone(),
    };
    let (mut labels, inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter.max(1) {
        iterations += 1;
        update_centers(points, &mut labels, &mut centers);
        let (next, inertia) = assign(points, &centers);
        history.push(inertia);
        let same = next == labels;
        labels = next;
        if same {
            converged = true;
            break;
        }
    }
    let objective = *history.last().expect("nonempty history");
    let run = ClusterRun {
        method: Method::Kmeans,
        init: init.kind(),
        iterations,
        objective,
        assignments: labels,
        misclassification: None,
        history,
        converged,
    };
    with_labels(run, data, k)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Responsibilities (row-major `n x k`) and total log-likelihood.
fn e_step(points: &DMatrix<f64>, p: &GmmParams, variances: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let (n, dim) = points.shape();
    let k = p.k();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let consts: Vec<f64> = (0..k)
        .map(|c| {
            let logdet: f64 = variances[c].iter().map(|v| v.ln()).sum();
            p.weights[c].max(1e-300).ln() - 0.5 * (dim as f64 * ln2pi + logdet)
        })
        .collect();
    let mut resp = vec![0.0; n * k];
    let mut ll = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            let q: f64 = (0..dim).map(|j| (points[(i, j)] - p.means[c][j]).powi(2) / variances[c][j]).sum();
            row[c] = consts[c] - 0.5 * q;
        }
        let lse = log_sum_exp(&row);
        ll += lse;
        for c in 0..k {
            resp[i * k + c] = (row[c] - lse).exp();
        }
    }
    (resp, ll)
}

fn m_step(points: &DMatrix<f64>, resp: &[f64], k: usize) -> GmmParams {
    let (n, dim) = points.shape();
    let mut nk = vec![0.0; k];
    let mut means = vec![vec![0.0; dim]; k];
    for i in 0..n {
        for c in 0..k {
            let r = resp[i * k + c];
            nk[c] += r;
            for j in 0..dim {
                means[c][j] += r * points[(i, j)];
            }
        }
    }
    for c in 0..k {
        let s = nk[c].max(1e-300);
        means[c].iter_mut().for_each(|m| *m /= s);
    }
    let mut vars = vec![vec![0.0; dim]; k];
    for i in 0..n {
        for c in 0..k {
            let r = resp[i * k + c];
            for j in 0..dim {
                vars[c][j] += r * (points[(i, j)] - means[c][j]).powi(2);
            }
        }
    }
    for c in 0..k {
        let s = nk[c].max(1e-300);
        vars[c].iter_mut().for_each(|v| *v = (*v / s).max(VARIANCE_FLOOR));
    }
    GmmParams { weights: nk.iter().map(|w| w / n as f64).collect(), means, variances: Some(vars) }
}

fn data_variances(points: &DMatrix<f64>) -> Vec<f64> {
    let n = points.nrows() as f64;
    points
        .column_iter()
        .map(|c| {
            let m = c.mean();
            (c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Diagonal-covariance EM. One iteration is an M-step followed by the E-step
/// that scores it; stops once the relative log-likelihood change drops below `tol`.
pub fn em_gmm(data: &Dataset, k: usize, init: &Init, max_iter: usize, tol: f64, seed: u64) -> Result<ClusterRun> {
    check_k(data, k)?;
    check_init(data, k, init)?;
    let points = &data.points;
    let mut params = match init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut resp: Vec<f64> = (0..data.len() * k).map(|_| rng.gen::<f64>()).collect();
            for row in resp.chunks_mut(k) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|r| *r /= s);
            }
            m_step(points, &resp, k)
        }
        Init::Given { params, .. } => {
            let mut p = params.clone();
            let total: f64 = p.weights.iter().sum();
            p.weights.iter_mut().for_each(|w| *w /= total);
            let vars = match p.variances.take() {
                Some(v) => v.into_iter().map(|row| row.into_iter().map(|x| x.max(VARIANCE_FLOOR)).collect()).collect(),
                None => vec![data_variances(points); k],
            };
            p.variances = Some(vars);
            p
        }
    };
    let (mut resp, mut ll) = e_step(points, &params, params.variances.as_ref().expect("variances set"));
    let mut history = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter.max(1) {
        iterations += 1;
        params = m_step(points, &resp, k);
        let (r, next) = e_step(points, &params, params.variances.as_ref().expect("variances set"));
        resp = r;
        history.push(next);
        let change = (next - ll).abs() / ll.abs().max(1e-300);
        ll = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    let assignments = resp
        .chunks(k)
        .map(|row| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(c, _)| c).expect("k >= 1"))
        .collect();
    let run = ClusterRun {
        method: Method::Em,
        init: init.kind(),
        iterations,
        objective: ll,
        assignments,
        misclassification: None,
        history,
        converged,
    };
    with_labels(run, data, k)
}

/// Fraction of points misassigned under the best matching of cluster ids to labels.
pub fn misclassification(assignments: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: assignments.len() });
    }
    if assignments.is_empty() {
        return Err(Error::Cluster("no labeled points".into()));
    }
    let m = assignments.iter().chain(labels).copied().max().unwrap_or(0).max(k.saturating_sub(1)) + 1;
    let mut agree = vec![vec![0.0; m]; m];
    for (&a, &l) in assignments.iter().zip(labels) {
        agree[a][l] += 1.0;
    }
    let best = if m <= 10 { best_permutation(&agree) } else { hungarian_max(&agree) };
    Ok(1.0 - best / assignments.len() as f64)
}

/// Largest `sum_i w[i][perm(i)]` by exhaustive search.
fn best_permutation(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == w.len() {
            *best = best.max(acc);
            return;
        }
        for c in 0..w.len() {
            if !used[c] {
                used[c] = true;
                go(w, row + 1, used, acc + w[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(w, 0, &mut vec![false; w.len()], 0.0, &mut best);
    best
}

/// Largest `sum_i w[i][perm(i)]` by the O(n^3) potentials method.
fn hungarian_max(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    let cost = |i: usize, j: usize| -w[i - 1][j - 1];
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let (mut p, mut way) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| w[p[j] - 1][j - 1]).sum()
}

/// `K` initial components from an extracted measure: the `K` heaviest atoms
/// with non-negligible weight, means clamped to the data range, padded with
/// data points farthest from the chosen means when fewer were found.
pub fn init_from_measure(
    measure: &AtomicMeasure,
    family: &ParametricFamily,
    data: &Dataset,
    k: usize,
) -> Result<GmmParams> {
    check_k(data, k)?;
    let top = measure.top_k(k);
    let means = top.atoms.iter().map(|t| family.mean(t)).collect();
    let vars =
        top.atoms.iter().map(|t| family.std_dev(t).iter().map(|s| (s * s).max(VARIANCE_FLOOR)).collect()).collect();
    Ok(complete_init(data, k, means, vars, top.weights))
}

/// As [`init_from_measure`] for atoms holding means only; variances start at
/// the data variance.
pub fn init_from_means(measure: &AtomicMeasure, data: &Dataset, k: usize) -> Result<GmmParams> {
    check_k(data, k)?;
    if measure.atoms.iter().any(|a| a.len() != data.dim()) {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: measure.atoms[0].len() });
    }
    let top = measure.top_k(k);
    let vars = vec![data_variances(&data.points); top.len()];
    Ok(complete_init(data, k, top.atoms, vars, top.weights))
}

/// Atoms below this weight carry no information from a non-flat solution.
const NEGLIGIBLE_WEIGHT: f64 = 1e-3;

fn complete_init(
    data: &Dataset,
    k: usize,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    weights: Vec<f64>,
) -> GmmParams {
    let fallback = data_variances(&data.points);
    let bounds: Vec<(f64, f64)> = data.points.column_iter().map(|c| (c.min(), c.max())).collect();
    let kept: Vec<usize> = (0..means.len()).filter(|&i| weights[i] > NEGLIGIBLE_WEIGHT).collect();
    // approximate extraction can leave atoms outside the data range
    let mut means: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| means[i].iter().zip(&bounds).map(|(x, (lo, hi))| x.clamp(*lo, *hi)).collect())
        .collect();
    let mut vars: Vec<Vec<f64>> = kept.iter().map(|&i| vars[i].clone()).collect();
    let mut weights: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
    while means.len() < k {
        let far = (0..data.len())
            .max_by(|&a, &b| {
                let da = means.iter().map(|m| sq_dist(&data.points, a, m)).fold(f64::INFINITY, f64::min);
                let db = means.iter().map(|m| sq_dist(&data.points, b, m)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .expect("nonempty data");
        means.push(data.row(far));
        vars.push(fallback.clone());
        weights.push(1.0 / k as f64);
    }
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let weights = if total > 0.0 {
        weights.iter().map(|w| w.max(0.0) / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    GmmParams { weights, means, variances: Some(vars) }
}

/// Settings of the initialization benchmark (everything except seeds).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub k: usize,
    pub dim: usize,
    pub samples: usize,
    pub separability: f64,
    pub eccentricity: f64,
    pub reciprocal_eccentricity: bool,
    /// Range of the largest per-component standard deviation of the generator.
    pub sigma_range: (f64, f64),
    /// Standard-deviation bounds of the parameter box (means range over `[0,1]`).
    pub sigma_bounds: (f64, f64),
    pub order: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub repeats: usize,
    pub kmeans_max_iter: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            k: 2,
            dim: 2,
            samples: 1000,
            separability: 5.0,
            eccentricity: 0.25,
            reciprocal_eccentricity: false,
            sigma_range: (0.03, 0.06),
            sigma_bounds: (0.05, 1.0),
            order: 4,
            epsilon: 1e-3,
            tol: 1e-2,
            repeats: 100,
            kmeans_max_iter: 300,
            em_max_iter: 100,
            em_tol: 1e-5,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Cluster("repeats must be at least one".into()));
        }
        if self.k == 0 || self.dim == 0 || self.samples < self.k {
            return Err(Error::Cluster("need 1 <= k <= samples and dim >= 1".into()));
        }
        if !(self.sigma_bounds.0 < self.sigma_bounds.1) || self.sigma_bounds.0 < 0.0 {
            return Err(Error::Cluster("invalid standard-deviation bounds".into()));
        }
        Ok(())
    }

    /// Gaussian relaxation on normalized data with means in `[0,1]^dim`.
    pub fn relaxation(&self, dim: usize, distance: Distance) -> Result<RelaxationSpec> {
        let family = Arc::new(ParametricFamily::gaussian(dim));
        let lowers: Vec<f64> = std::iter::repeat(0.0).take(dim).chain(std::iter::repeat(self.sigma_bounds.0).take(dim)).collect();
        let uppers: Vec<f64> = std::iter::repeat(1.0).take(dim).chain(std::iter::repeat(self.sigma_bounds.1).take(dim)).collect();
        let set = box_set(&lowers, &uppers)?;
        let reg = if self.epsilon > 0.0 {
            Regularizer::trace(2 * dim, self.order, self.epsilon)?
        } else {
            Regularizer::none(2 * dim)
        };
        RelaxationSpec::new(distance, self.order, family, set, reg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtractedFit {
    pub init: InitKind,
    pub status: FitStatus,
    pub khat: usize,
    pub objective: f64,
    pub duality_gap: Option<f64>,
    pub seconds: f64,
    pub measure: Option<AtomicMeasure>,
    /// Mean atoms used to initialize the clustering when `khat` fell short of
    /// `K`: `K` atoms read off the location-parameter moment matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reextracted: Option<AtomicMeasure>,
}

/// One CSV row of the benchmark.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub mixture: usize,
    pub seed: u64,
    pub method: Method,
    pub init: InitKind,
    pub repeat: usize,
    pub iterations: usize,
    pub objective: f64,
    pub misclassification: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len();
        if n == 0 {
            return Stats { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = finite.iter().sum::<f64>() / n as f64;
        let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Stats { mean, std: var.sqrt(), count: n }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodComparison {
    pub random_iterations: Stats,
    pub random_misclassification: Option<Stats>,
    pub w2_iterations: Option<usize>,
    pub tv_iterations: Option<usize>,
    pub w2_misclassification: Option<f64>,
    pub tv_misclassification: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureResult {
    pub index: usize,
    pub seed: u64,
    pub k: usize,
    pub fits: Vec<ExtractedFit>,
    pub kmeans: MethodComparison,
    pub em: MethodComparison,
    pub runs: Vec<RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<MixtureSpec>,
}

impl MixtureResult {
    fn comparison(&self, method: Method) -> &MethodComparison {
        match method {
            Method::Kmeans => &self.kmeans,
            Method::Em => &self.em,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Improvement {
    /// Fraction of mixtures where the extracted init needs strictly fewer
    /// iterations than the random mean.
    pub fraction_better: f64,
    /// `100 * (random mean - extracted) / random mean`, averaged over mixtures.
    pub mean_percent_fewer_iterations: f64,
    pub mixtures: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub kmeans_w2: Improvement,
    pub kmeans_tv: Improvement,
    pub em_w2: Improvement,
    pub em_tv: Improvement,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    /// Sorted by the W2-initialized k-means iteration count.
    pub mixtures: Vec<MixtureResult>,
    pub summary: BenchmarkSummary,
}

impl BenchmarkReport {
    /// Sorts by the W2-initialized k-means iteration count and summarizes.
    pub fn from_mixtures(config: BenchmarkConfig, mut mixtures: Vec<MixtureResult>) -> Self {
        mixtures.sort_by_key(|m| (m.kmeans.w2_iterations.unwrap_or(usize::MAX), m.index));
        let summary = summarize(&mixtures);
        BenchmarkReport { config, mixtures, summary }
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.mixtures.iter().flat_map(|m| m.runs.iter())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in self.records() {
            w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::Data(e.to_string()))
    }
}

fn summarize(mixtures: &[MixtureResult]) -> BenchmarkSummary {
    let improvement = |method: Method, init: InitKind| {
        let mut better = 0usize;
        let mut pct = Vec::new();
        for m in mixtures {
            let c = m.comparison(method);
            let ext = match init {
                InitKind::ExtractedW2 => c.w2_iterations,
                _ => c.tv_iterations,
            };
            if let Some(it) = ext {
                if (it as f64) < c.random_iterations.mean {
                    better += 1;
                }
                if c.random_iterations.mean > 0.0 {
                    pct.push(100.0 * (c.random_iterations.mean - it as f64) / c.random_iterations.mean);
                }
            }
        }
        let n = mixtures.len();
        Improvement {
            fraction_better: if n > 0 { better as f64 / n as f64 } else { 0.0 },
            mean_percent_fewer_iterations: Stats::of(&pct).mean,
            mixtures: n,
        }
    };
    BenchmarkSummary {
        kmeans_w2: improvement(Method::Kmeans, InitKind::ExtractedW2),
        kmeans_tv: improvement(Method::Kmeans, InitKind::ExtractedTv),
        em_w2: improvement(Method::Em, InitKind::ExtractedW2),
        em_tv: improvement(Method::Em, InitKind::ExtractedTv),
    }
}

/// Seed of run `index` within a benchmark seeded by `seed`.
pub fn run_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.gen()
}

/// Extracted W2 and TV fits, then k-means and EM from each fit and from
/// `repeats` random starts, on one (already normalized) dataset.
pub fn benchmark_dataset(
    data: &Dataset,
    k: usize,
    config: &BenchmarkConfig,
    index: usize,
    seed: u64,
) -> Result<MixtureResult> {
    config.validate()?;
    let mu = empirical_moments(data, 2 * config.order)?;
    let mut fits = Vec::new();
    let mut inits = Vec::new();
    for distance in [Distance::W2, Distance::Tv] {
        let spec = config.relaxation(data.dim(), distance)?;
        let opts = Algorithm1Options {
            tol: config.tol,
            max_order: config.order,
            seed: run_seed(seed, 1),
            ..Default::default()
        };
        let started = Instant::now();
        let report = run_algorithm1(&mu, &spec, &opts)?;
        let kind = InitKind::from_distance(distance);
        // Too few atoms: the energy rule drops light components, so read K
        // means off the top-K eigenspace of the location block before padding.
        let reextracted = match &report.phi {
            Some(phi) if report.khat < k => phi
                .marginal(&spec.family.location_params())
                .and_then(|means| extract_measure(&means, report.order, k, opts.seed))
                .ok()
                .filter(|m| m.len() == k),
            _ => None,
        };
        let params = match (&reextracted, &report.measure) {
            (Some(means), _) => Some(init_from_means(means, data, k)?),
            (None, Some(measure)) => Some(init_from_measure(measure, &spec.family, data, k)?),
            (None, None) => None,
        };
        if let Some(params) = params {
            inits.push(Init::Given { kind, params });
        }
        fits.push(ExtractedFit {
            init: kind,
            status: report.status,
            khat: report.khat,
            objective: report.objective,
            duality_gap: report.duality_gap,
            seconds: started.elapsed().as_secs_f64(),
            measure: report.measure,
            reextracted,
        });
    }

    let mut runs = Vec::new();
    let mut record = |run: &ClusterRun, repeat: usize| {
        runs.push(RunRecord {
            mixture: index,
            seed,
            method: run.method,
            init: run.init,
            repeat,
            iterations: run.iterations,
            objective: run.objective,
            misclassification: run.misclassification,
            converged: run.converged,
        })
    };
    for init in &inits {
        record(&kmeans(data, k, init, config.kmeans_max_iter, 0)?, 0);
        record(&em_gmm(data, k, init, config.em_max_iter, config.em_tol, 0)?, 0);
    }
    for r in 0..config.repeats {
        let s = run_seed(seed, 2 + r as u64);
        record(&kmeans(data, k, &Init::Random, config.kmeans_max_iter, s)?, r);
        record(&em_gmm(data, k, &Init::Random, config.em_max_iter, config.em_tol, s)?, r);
    }

    let compare = |method: Method| {
        let pick = |init: InitKind| runs.iter().find(|r| r.method == method && r.init == init);
        let random: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method && r.init == InitKind::Random).collect();
        let mis: Vec<f64> = random.iter().filter_map(|r| r.misclassification).collect();
        MethodComparison {
            random_iterations: Stats::of(&random.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()),
            random_misclassification: (!mis.is_empty()).then(|| Stats::of(&mis)),
            w2_iterations: pick(InitKind::ExtractedW2).map(|r| r.iterations),
            tv_iterations: pick(InitKind::ExtractedTv).map(|r| r.iterations),
            w2_misclassification: pick(InitKind::ExtractedW2).and_then(|r| r.misclassification),
            tv_misclassification: pick(InitKind::ExtractedTv).and_then(|r| r.misclassification),
        }
    };
    let (km, em) = (compare(Method::Kmeans), compare(Method::Em));
    Ok(MixtureResult { index, seed, k, fits, kmeans: km, em, runs, truth: None })
}

/// One planted mixture per seed, sampled, normalized and benchmarked.
pub fn run_benchmark(config: &BenchmarkConfig, seeds: &[u64]) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut mixtures = Vec::with_capacity(seeds.len());
    for (index, &seed) in seeds.iter().enumerate() {
        let truth = MixtureSpec::random(
            config.k,
            config.dim,
            config.separability,
            config.eccentricity,
            config.reciprocal_eccentricity,
            config.sigma_range,
            seed,
        )?;
        let data = normalize(&sample_gmm(&truth, config.samples, run_seed(seed, 0))?)?;
        let mut result = benchmark_dataset(&data, config.k, config, index, seed)?;
        result.truth = Some(truth);
        log::info!(
            "mixture {index}: k-means w2 {:?} tv {:?} random {:.1}; em w2 {:?} tv {:?} random {:.1}",
            result.kmeans.w2_iterations,
            result.kmeans.tv_iterations,
            result.kmeans.random_iterations.mean,
            result.em.w2_iterations,
            result.em.tv_iterations,
            result.em.random_iterations.mean
        );
        mixtures.push(result);
    }
    Ok(BenchmarkReport::from_mixtures(config.clone(), mixtures))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BicPoint {
    pub k: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

/// `-2 log L + (K - 1 + 2 n K) log N` of the best of `restarts` random EM runs, per K.
pub fn bic_sweep(data: &Dataset, ks: std::ops::RangeInclusive<usize>, restarts: usize, seed: u64) -> Result<Vec<BicPoint>> {
    let n = data.len() as f64;
    let dim = data.dim();
    ks.filter(|&k| k <= data.len())
        .map(|k| {
            let mut best = f64::NEG_INFINITY;
            for r in 0..restarts.max(1) {
                let run = em_gmm(data, k, &Init::Random, 100, 1e-5, run_seed(seed, (k * 1000 + r) as u64))?;
                best = best.max(run.objective);
            }
            let params = (k - 1 + 2 * dim * k) as f64;
            Ok(BicPoint { k, log_likelihood: best, bic: -2.0 * best + params * n.ln() })
        })
        .collect()
}
