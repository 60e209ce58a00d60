//! Datasets: CSV ingestion, affine normalization to the unit cube, empirical
//! moments, PCA reduction and synthetic Gaussian mixtures.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sorted_symmetric_eigen;
use crate::polybasis::{enumerate_basis, MultiIndex, PseudoMomentSequence};

/// `x -> (x - lower) / scale`; constant columns map to `0.5`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub lower: f64,
    pub scale: f64,
    pub constant: bool,
}

impl AffineMap {
    pub fn identity() -> Self {
        AffineMap { lower: 0.0, scale: 1.0, constant: false }
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.constant {
            0.5
        } else {
            (x - self.lower) / self.scale
        }
    }

    pub fn invert(&self, u: f64) -> f64 {
        if self.constant {
            self.lower
        } else {
            self.lower + u * self.scale
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// One row per sample.
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<usize>>,
    /// Maps taking the original coordinates to the stored ones.
    pub maps: Vec<AffineMap>,
}

impl Dataset {
    pub fn new(points: DMatrix<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.nrows() {
                return Err(Error::DimensionMismatch { expected: points.nrows(), got: l.len() });
            }
        }
        let maps = vec![AffineMap::identity(); points.ncols()];
        Ok(Dataset { points, labels, maps })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Data("rows of unequal length".into()));
        }
        Dataset::new(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]), labels)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// Flags of constant columns met during normalization.
    pub fn constant_columns(&self) -> Vec<usize> {
        self.maps.iter().enumerate().filter(|(_, m)| m.constant).map(|(i, _)| i).collect()
    }

    /// Original-scale point from stored coordinates.
    pub fn denormalize_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.maps).map(|(v, m)| m.invert(*v)).collect()
    }

    /// Original-scale standard deviations from stored-scale ones.
    pub fn denormalize_scale(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.maps).map(|(v, m)| if m.constant { 0.0 } else { v * m.scale }).collect()
    }

    /// Single coordinate as a one-dimensional dataset.
    pub fn column(&self, j: usize) -> Dataset {
        Dataset {
            points: DMatrix::from_column_slice(self.len(), 1, self.points.column(j).as_slice()),
            labels: self.labels.clone(),
            maps: vec![self.maps[j].clone()],
        }
    }
}

/// Reads comma-separated rows, optionally skipping a header line and taking
/// the last column as an integer label.
pub fn read_csv_from<R: Read>(reader: R, has_header: bool, label_column: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("record {}: {e}", i + 1)))?;
        let mut vals: Vec<&str> = rec.iter().collect();
        if label_column {
            let l = vals.pop().ok_or_else(|| Error::Parse(format!("record {}: empty row", i + 1)))?;
            let lab: usize = l
                .parse::<usize>()
                .or_else(|_| l.parse::<f64>().map(|f| f as usize))
                .map_err(|_| Error::Parse(format!("record {}: bad label '{l}'", i + 1)))?;
            labels.push(lab);
        }
        let row: Vec<f64> = vals
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("record {}: bad number '{v}'", i + 1))))
            .collect::<Result<_>>()?;
        if row.is_empty() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("record {}: empty or non-finite row", i + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Parse("rows of unequal length".into()));
    }
    Dataset::from_rows(&rows, label_column.then_some(labels))
}

pub fn read_csv(path: &Path, has_header: bool, label_column: bool) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_csv_from(f, has_header, label_column)
}

/// Writes the stored points (labels as a trailing column when present).
pub fn write_csv_to<W: Write>(data: &Dataset, writer: W, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Data(e.to_string());
    if header {
        let mut names: Vec<String> = (0..data.dim()).map(|j| format!("x{}", j + 1)).collect();
        if data.labels.is_some() {
            names.push("label".into());
        }
        w.write_record(&names).map_err(io)?;
    }
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.points.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &data.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

/// Maps every column onto `[0, 1]`; constant columns become `0.5` and are flagged.
pub fn normalize(data: &Dataset) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let maps = (0..data.dim())
        .map(|j| {
            let col = data.points.column(j);
            range_map(col.min(), col.max())
        })
        .collect();
    Ok(apply_maps(data, maps))
}

/// One common map of the global range onto `[0, 1]`, so that coordinates keep
/// their relative spread; a coordinate with little variation stays concentrated.
pub fn normalize_joint(data: &Dataset) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let map = range_map(data.points.min(), data.points.max());
    Ok(apply_maps(data, vec![map; data.dim()]))
}

fn range_map(lo: f64, hi: f64) -> AffineMap {
    if hi > lo {
        AffineMap { lower: lo, scale: hi - lo, constant: false }
    } else {
        AffineMap { lower: lo, scale: 1.0, constant: true }
    }
}

fn apply_maps(data: &Dataset, maps: Vec<AffineMap>) -> Dataset {
    let mut points = data.points.clone();
    let mut composed = Vec::with_capacity(maps.len());
    for (j, map) in maps.into_iter().enumerate() {
        for i in 0..data.len() {
            points[(i, j)] = map.apply(data.points[(i, j)]);
        }
        // compose with the maps already applied to `data`
        let prev = &data.maps[j];
        composed.push(AffineMap {
            lower: prev.invert(map.lower),
            scale: prev.scale * map.scale,
            constant: map.constant || prev.constant,
        });
    }
    Dataset { points, labels: data.labels.clone(), maps: composed }
}

/// `mu_alpha = (1/N) sum_i x_i^alpha` for `|alpha| <= maxdeg`.
pub fn empirical_moments(data: &Dataset, maxdeg: usize) -> Result<PseudoMomentSequence> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let n = data.dim();
    let basis = std::sync::Arc::new(enumerate_basis(n, maxdeg)?);
    // each monomial is a parent monomial times one variable
    let parents: Vec<(usize, usize)> = basis
        .monomials()
        .iter()
        .skip(1)
        .map(|a| {
            let var = a.exps().iter().position(|&e| e > 0).expect("nonconstant monomial");
            let mut e = a.exps().to_vec();
            e[var] -= 1;
            (basis.position(&MultiIndex::new(e)).expect("parent in basis"), var)
        })
        .collect();
    let mut acc = vec![0.0; basis.len()];
    let mut vals = vec![0.0; basis.len()];
    for i in 0..data.len() {
        vals[0] = 1.0;
        for (k, &(parent, var)) in parents.iter().enumerate() {
            vals[k + 1] = vals[parent] * data.points[(i, var)];
        }
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += v;
        }
    }
    let inv = 1.0 / data.len() as f64;
    PseudoMomentSequence::new(basis, acc.into_iter().map(|v| v * inv).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    /// `k` rows, each a unit principal direction.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub retained_ratio: f64,
}

impl Projection {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, zk) in self.components.iter().zip(z) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += zk * ci;
            }
        }
        x
    }
}

/// Scores on the top `k` principal components (before normalization) and
/// the normalized reduced dataset.
pub fn pca_reduce(data: &Dataset, k: usize) -> Result<(Dataset, Projection)> {
    let n = data.dim();
    if k == 0 || k > n {
        return Err(Error::Data(format!("cannot keep {k} of {n} components")));
    }
    if data.len() < 2 {
        return Err(Error::Data("need at least two samples".into()));
    }
    let nn = data.len() as f64;
    let mean: DVector<f64> = data.points.row_mean().transpose();
    let mut centered = data.points.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.tr_mul(&centered) / (nn - 1.0);
    let (vals, vecs) = sorted_symmetric_eigen(&cov);
    let total: f64 = vals.iter().map(|v| v.max(0.0)).sum();
    let kept: Vec<f64> = vals.iter().take(k).map(|v| v.max(0.0)).collect();
    let proj = Projection {
        mean: mean.iter().copied().collect(),
        components: (0..k).map(|j| vecs.column(j).iter().copied().collect()).collect(),
        retained_ratio: if total > 0.0 { kept.iter().sum::<f64>() / total } else { 1.0 },
        explained_variance: kept,
    };
    let w = vecs.columns(0, k).into_owned();
    let scores = centered * w;
    let reduced = Dataset::new(scores, data.labels.clone())?;
    Ok((normalize(&reduced)?, proj))
}

/// Diagonal Gaussian mixture with geometric controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Minimal pairwise mean distance in units of the largest component standard deviation.
    pub separability: f64,
    /// `sigma_min^2 / sigma_max^2` per component (or its reciprocal, see below).
    pub eccentricity: f64,
    /// Interpret `eccentricity` as `sigma_max^2 / sigma_min^2`.
    pub reciprocal_eccentricity: bool,
}

impl MixtureSpec {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    /// Gaussian parameter vectors `(m_1..m_n, sigma_1..sigma_n)`.
    pub fn thetas(&self) -> Vec<Vec<f64>> {
        self.means.iter().zip(&self.sigmas).map(|(m, s)| m.iter().chain(s).copied().collect()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.sigmas.len() != k || self.weights.len() != k {
            return Err(Error::Data("mixture components and weights differ in number".into()));
        }
        let n = self.dim();
        if self.means.iter().chain(&self.sigmas).any(|v| v.len() != n) {
            return Err(Error::Data("component dimensions differ".into()));
        }
        if self.sigmas.iter().flatten().any(|s| !(*s > 0.0)) {
            return Err(Error::Data("standard deviations must be positive".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data("weights must be nonnegative and sum to one".into()));
        }
        Ok(())
    }

    /// Random configuration in `[0,1]^dim`: each component draws its largest
    /// standard deviation from `sigma_range`, the smaller ones follow the
    /// eccentricity, the long axis is picked at random, and means are placed by
    /// sequential rejection so that every pair is at least
    /// `separability * max_k sigma_max,k` apart.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        k: usize,
        dim: usize,
        separability: f64,
        eccentricity: f64,
        reciprocal_eccentricity: bool,
        sigma_range: (f64, f64),
        seed: u64,
    ) -> Result<MixtureSpec> {
        if k == 0 || dim == 0 {
            return Err(Error::Data("need at least one component and one dimension".into()));
        }
        if !(eccentricity > 0.0) || !(separability >= 0.0) || !(sigma_range.0 > 0.0 && sigma_range.0 <= sigma_range.1) {
            return Err(Error::Data("invalid geometry parameters".into()));
        }
        let ratio = if reciprocal_eccentricity { 1.0 / eccentricity } else { eccentricity };
        if ratio > 1.0 {
            return Err(Error::Data(format!("eccentricity ratio {ratio} exceeds one under the chosen convention")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sigmas = Vec::with_capacity(k);
        let mut largest = 0.0f64;
        for _ in 0..k {
            let smax = rng.gen_range(sigma_range.0..=sigma_range.1);
            largest = largest.max(smax);
            let mut s = vec![smax * ratio.sqrt(); dim];
            s[rng.gen_range(0..dim)] = smax;
            sigmas.push(s);
        }
        let min_dist = separability * largest;
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut attempts = 0;
        while means.len() < k {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::InfeasibleGeometry(format!(
                    "could not place {k} means at distance {min_dist:.4} in the unit cube"
                )));
            }
            let cand: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
            let ok = means
                .iter()
                .all(|m| m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist);
            if ok {
                means.push(cand);
            }
        }
        let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let spec = MixtureSpec { means, sigmas, weights, separability, eccentricity, reciprocal_eccentricity };
        spec.validate()?;
        Ok(spec)
    }
}

/// `n` labeled samples; deterministic per seed.
pub fn sample_gmm(spec: &MixtureSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&spec.weights).map_err(|e| Error::Data(e.to_string()))?;
    let dim = spec.dim();
    let mut labels: Vec<usize> = (0..n).map(|_| pick.sample(&mut rng)).collect();
    labels.shuffle(&mut rng);
    let mut points = DMatrix::zeros(n, dim);
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..dim {
            let dist = Normal::new(spec.means[l][j], spec.sigmas[l][j]).map_err(|e| Error::Data(e.to_string()))?;
            points[(i, j)] = dist.sample(&mut rng);
        }
    }
    Dataset::new(points, Some(labels))
}
