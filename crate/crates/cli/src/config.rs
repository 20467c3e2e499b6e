//! Per-command configuration files (TOML) and their defaults.
//!
//! Every key is optional; command-line flags override file values. Unknown
//! keys are rejected with the offending line and field.

use batchbias::problem::{FamilyId, ProblemConfig};
use batchbias::sweep::{SweepAxis, SweepConfig, SweepTask};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    path.map_or_else(|| Ok(T::default()), load_file)
}

pub fn load_file<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyFile {
    pub seed: Option<u64>,
    pub only: Option<Vec<batchbias::verify::Suite>>,
    pub c1_offset: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoeffsFile {
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl Default for CoeffsFile {
    fn default() -> Self {
        let grid = vec![0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999];
        Self {
            beta1: grid.clone(),
            beta2: grid,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeFile {
    pub n: Option<usize>,
    pub b: Option<usize>,
    pub b_simple: Option<f64>,
}

/// A problem and the point at which to evaluate it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub problem: ProblemConfig,
    /// Defaults to the origin.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithms {
    Adam,
    Sgdm,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosenessFile {
    pub problem: ProblemConfig,
    pub theta0: Vec<f64>,
    pub batch_size: usize,
    pub eta: Vec<f64>,
    pub horizon: f64,
    pub algorithm: Algorithms,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for ClosenessFile {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::new(FamilyId::RandomPsdQuadratic, 4, 3, 5),
            theta0: vec![10.0, -8.0, 6.0],
            batch_size: 1,
            eta: batchbias::verify::ETA_LADDER.to_vec(),
            horizon: 1.0,
            algorithm: Algorithms::Both,
            beta1: 0.5,
            beta2: 0.6,
            eps: 1e-6,
            momentum: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpectFile {
    pub problem: ProblemConfig,
    pub theta: Vec<f64>,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub method: ExpectMethod,
    pub samples: usize,
    pub seed: Option<u64>,
}

impl Default for ExpectFile {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::new(FamilyId::RandomPsdQuadratic, 8, 3, 4),
            theta: vec![4.0, -3.0, 2.5],
            batch_size: 2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            method: ExpectMethod::Exact,
            samples: 20_000,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepFile {
    pub task: SweepTask,
    pub axis: SweepAxis,
    pub batch_sizes: Vec<usize>,
    pub eta: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: Option<u64>,
    pub n_seeds: usize,
}

impl Default for SweepFile {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            task: d.task,
            axis: d.axis,
            batch_sizes: d.batch_sizes,
            eta: d.eta,
            eps: d.eps,
            epochs: d.epochs,
            seed: None,
            n_seeds: 3,
        }
    }
}

impl SweepFile {
    pub fn into_config(self, seed: u64) -> SweepConfig {
        SweepConfig {
            task: self.task,
            axis: self.axis,
            batch_sizes: self.batch_sizes,
            eta: self.eta,
            eps: self.eps,
            epochs: self.epochs,
            seeds: Vec::new(),
        }
        .with_seeds(seed, self.n_seeds)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseScaleFile {
    pub problem: ProblemConfig,
    pub batch_size: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Record every `every`-th epoch end.
    pub every: usize,
    pub seed: Option<u64>,
}

impl Default for NoiseScaleFile {
    fn default() -> Self {
        let mut problem = ProblemConfig::new(FamilyId::TeacherStudentMlp, 64, 3, 0);
        problem.hidden = Some(8);
        Self {
            problem,
            batch_size: 8,
            eta: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 50,
            every: 5,
            seed: None,
        }
    }
}
