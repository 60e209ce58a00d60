//! Resolved run configurations. Every report echoes one of these in full.

use std::path::PathBuf;

use mixmoment::families::FamilyKind;
use mixmoment::relax::Distance;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataInput {
    pub path: PathBuf,
    pub header: bool,
    /// Last column holds integer class labels.
    pub labels: bool,
}

impl Default for DataInput {
    fn default() -> Self {
        DataInput { path: PathBuf::new(), header: false, labels: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataInput,
    pub family: FamilyKind,
    pub distance: Distance,
    pub order: usize,
    /// Highest order tried when the first one is not flat.
    pub max_order: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub seed: u64,
    /// Map every coordinate onto `[0,1]` before fitting (Gaussian family only).
    pub normalize: bool,
    /// Parameter box; family defaults apply when absent.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Rank test on the location-parameter block only.
    pub principal_submatrix: bool,
    pub density_csv: Option<PathBuf>,
    pub density_points: usize,
    pub out: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            data: DataInput::default(),
            family: FamilyKind::GaussianDiagonal,
            distance: Distance::W2,
            order: 4,
            max_order: 4,
            epsilon: 1e-3,
            tol: 1e-2,
            seed: 0,
            normalize: true,
            lower: None,
            upper: None,
            principal_submatrix: false,
            density_csv: None,
            density_points: 200,
            out: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.order == 0 {
            return Err(CliError::input("order must be at least 1"));
        }
        if self.max_order < self.order {
            return Err(CliError::input("max_order below order"));
        }
        check_nonneg("epsilon", self.epsilon)?;
        check_pos("tol", self.tol)?;
        if self.normalize && self.family != FamilyKind::GaussianDiagonal {
            return Err(CliError::input(format!(
                "normalization is an affine change of variables and does not preserve the {} family",
                self.family
            )));
        }
        if self.lower.is_some() != self.upper.is_some() {
            return Err(CliError::input("lower and upper bounds must be given together"));
        }
        Ok(())
    }
}

/// How coordinates are mapped onto `[0,1]` before the univariate fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// One map for all coordinates; low-variation coordinates stay concentrated.
    Joint,
    /// Every coordinate stretched to its own range.
    PerCoordinate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub data: DataInput,
    pub scaling: Scaling,
    pub distance: Distance,
    pub order: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub seed: u64,
    /// Standard-deviation bounds of the univariate box (means range over `[0,1]`).
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub out: Option<PathBuf>,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            data: DataInput::default(),
            scaling: Scaling::Joint,
            distance: Distance::W2,
            order: 4,
            epsilon: 0.1,
            tol: 1e-6,
            seed: 0,
            sigma_lower: 0.05,
            sigma_upper: 1.0,
            out: None,
        }
    }
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.order == 0 {
            return Err(CliError::input("order must be at least 1"));
        }
        check_nonneg("epsilon", self.epsilon)?;
        check_pos("tol", self.tol)?;
        if !(self.sigma_lower >= 0.0 && self.sigma_lower < self.sigma_upper) {
            return Err(CliError::input("need 0 <= sigma_lower < sigma_upper"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Labeled CSV to benchmark on; planted mixtures are generated when absent.
    pub data: Option<DataInput>,
    /// Keep this many principal components of `data` before normalizing.
    pub pca: Option<usize>,
    pub k: usize,
    pub dim: usize,
    pub samples: usize,
    pub mixtures: usize,
    pub separability: f64,
    pub eccentricity: f64,
    pub reciprocal_eccentricity: bool,
    pub sigma_range: (f64, f64),
    pub sigma_bounds: (f64, f64),
    pub order: usize,
    pub epsilon: f64,
    pub tol: f64,
    pub repeats: usize,
    pub seed: u64,
    pub kmeans_max_iter: usize,
    pub em_max_iter: usize,
    pub em_tol: f64,
    pub out: Option<PathBuf>,
    pub runs_csv: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let b = mixmoment::cluster::BenchmarkConfig::default();
        BenchConfig {
            data: None,
            pca: None,
            k: b.k,
            dim: b.dim,
            samples: b.samples,
            mixtures: 10,
            separability: b.separability,
            eccentricity: b.eccentricity,
            reciprocal_eccentricity: b.reciprocal_eccentricity,
            sigma_range: b.sigma_range,
            sigma_bounds: b.sigma_bounds,
            order: b.order,
            epsilon: b.epsilon,
            tol: b.tol,
            repeats: b.repeats,
            seed: 0,
            kmeans_max_iter: b.kmeans_max_iter,
            em_max_iter: b.em_max_iter,
            em_tol: b.em_tol,
            out: None,
            runs_csv: None,
        }
    }
}

impl BenchConfig {
    pub fn benchmark(&self) -> mixmoment::cluster::BenchmarkConfig {
        mixmoment::cluster::BenchmarkConfig {
            k: self.k,
            dim: self.dim,
            samples: self.samples,
            separability: self.separability,
            eccentricity: self.eccentricity,
            reciprocal_eccentricity: self.reciprocal_eccentricity,
            sigma_range: self.sigma_range,
            sigma_bounds: self.sigma_bounds,
            order: self.order,
            epsilon: self.epsilon,
            tol: self.tol,
            repeats: self.repeats,
            kmeans_max_iter: self.kmeans_max_iter,
            em_max_iter: self.em_max_iter,
            em_tol: self.em_tol,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repeats == 0 {
            return Err(CliError::input("repeats must be at least 1"));
        }
        if self.k == 0 {
            return Err(CliError::input("k must be at least 1"));
        }
        if self.data.is_none() && self.mixtures == 0 {
            return Err(CliError::input("mixtures must be at least 1"));
        }
        if self.pca == Some(0) {
            return Err(CliError::input("pca must keep at least one component"));
        }
        check_nonneg("epsilon", self.epsilon)?;
        check_pos("tol", self.tol)?;
        self.benchmark().validate().map_err(CliError::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub k: usize,
    pub dim: usize,
    pub samples: usize,
    pub separability: f64,
    pub eccentricity: f64,
    pub reciprocal_eccentricity: bool,
    pub sigma_range: (f64, f64),
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            k: 2,
            dim: 2,
            samples: 1000,
            separability: 5.0,
            eccentricity: 0.25,
            reciprocal_eccentricity: false,
            sigma_range: (0.03, 0.06),
            seed: 0,
            out: PathBuf::from("mixture.csv"),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.k == 0 || self.dim == 0 || self.samples == 0 {
            return Err(CliError::input("k, dim and samples must be positive"));
        }
        Ok(())
    }
}

fn check_pos(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::input(format!("{name} must be positive and finite")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::input(format!("{name} must be nonnegative and finite")))
    }
}
