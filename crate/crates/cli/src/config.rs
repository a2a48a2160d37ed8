//! Run configuration, read from a TOML file and overridable from the command
//! line. Paths inside the file resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clvae_core::anomaly::{DEFAULT_FLAG_FRACTION, DEFAULT_LOF_NEIGHBORS, DEFAULT_SUBSAMPLE, DEFAULT_TREES, HIGHLIGHT_COUNT};
use clvae_core::clustering::ClusterAlgo;
use clvae_core::datasets::{ColumnSpec, TabularSchema};
use clvae_core::emmv::DEFAULT_MC_SAMPLES;
use clvae_core::nn::TrainConfig;
use clvae_core::vae::ReconKind;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub detector: DetectorSettings,
    #[serde(default)]
    pub emmv: EmmvSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_train_limit")]
        train_limit: usize,
        #[serde(default = "default_test_limit")]
        test_limit: usize,
    },
    Synthetic {
        classes: usize,
        #[serde(default = "default_synthetic_dim")]
        dim: usize,
        per_class: usize,
        #[serde(default = "default_spacing")]
        spacing: f64,
        #[serde(default = "default_scale")]
        scale: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Tabular {
        path: PathBuf,
        label_column: String,
        columns: Vec<ColumnSpec>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_train_limit() -> usize {
    10_000
}
fn default_test_limit() -> usize {
    2_000
}
fn default_synthetic_dim() -> usize {
    8
}
fn default_spacing() -> f64 {
    6.0
}
fn default_scale() -> f64 {
    1.0
}
fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn tabular_schema(columns: &[ColumnSpec]) -> TabularSchema {
        TabularSchema {
            columns: columns.to_vec(),
        }
    }

    /// Files the dataset reads, in a fixed order.
    pub fn input_files(&self) -> Vec<&Path> {
        match self {
            DatasetConfig::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetConfig::Synthetic { .. } => vec![],
            DatasetConfig::Tabular { path, .. } => vec![path],
        }
        .into_iter()
        .map(PathBuf::as_path)
        .collect()
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DatasetConfig::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetConfig::Synthetic { .. } => vec![],
            DatasetConfig::Tabular { path, .. } => vec![path],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ae,
    Vae,
    Clvae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default = "default_recon")]
    pub recon: ReconKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_one")]
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub beta: f64,
    #[serde(default = "default_mean_init")]
    pub mean_init_scale: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![256]
}
fn default_latent() -> usize {
    2
}
fn default_recon() -> ReconKind {
    ReconKind::Bernoulli
}
fn default_epochs() -> usize {
    TrainConfig::default().epochs
}
fn default_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_lr() -> f64 {
    TrainConfig::default().learning_rate
}
fn default_one() -> f64 {
    1.0
}
fn default_mean_init() -> f64 {
    3.0
}

impl ModelConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub algo: ClusterAlgo,
    pub k_min: usize,
    pub k_max: usize,
    /// Cluster count for the final assignment; the sweep optimum when unset.
    #[serde(default)]
    pub k: Option<usize>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            algo: ClusterAlgo::Em,
            k_min: 2,
            k_max: 20,
            k: None,
        }
    }
}

impl ClusteringConfig {
    /// Sweep range clipped to the number of points.
    pub fn k_range(&self, n: usize) -> Vec<usize> {
        (self.k_min..=self.k_max.min(n)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub k_neighbors: usize,
    pub n_trees: usize,
    pub subsample: usize,
    pub flag_fraction: f64,
    pub highlight: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_LOF_NEIGHBORS,
            n_trees: DEFAULT_TREES,
            subsample: DEFAULT_SUBSAMPLE,
            flag_fraction: DEFAULT_FLAG_FRACTION,
            highlight: HIGHLIGHT_COUNT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmmvSettings {
    pub enabled: bool,
    pub n_mc: usize,
}

impl Default for EmmvSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            n_mc: DEFAULT_MC_SAMPLES,
        }
    }
}

/// The file form: seed and output directory may come from the command line.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    dataset: DatasetConfig,
    model: ModelConfig,
    #[serde(default)]
    clustering: ClusteringConfig,
    #[serde(default)]
    detector: DetectorSettings,
    #[serde(default)]
    emmv: EmmvSettings,
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub n_mc: Option<usize>,
}

impl RunConfig {
    /// Parses TOML text; relative dataset paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let seed = overrides
            .seed
            .or(file.seed)
            .ok_or_else(|| CliError::Config("a seed is required (--seed)".into()))?;
        let output_dir = overrides
            .output_dir
            .clone()
            .or(file.output_dir.map(|p| base_dir.join(p)))
            .ok_or_else(|| CliError::Config("an output directory is required (--out)".into()))?;
        let mut config = RunConfig {
            seed,
            output_dir,
            dataset: file.dataset,
            model: file.model,
            clustering: file.clustering,
            detector: file.detector,
            emmv: file.emmv,
        };
        for p in config.dataset.paths_mut() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(e) = overrides.epochs {
            config.model.epochs = e;
        }
        if let Some(n) = overrides.n_mc {
            config.emmv.n_mc = n;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")), overrides)
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<(), CliError> {
        for p in self.dataset.input_files() {
            if !p.is_file() {
                return Err(CliError::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        let m = &self.model;
        if m.latent_dim == 0 || m.epochs == 0 || m.batch_size == 0 || !(m.learning_rate > 0.0) {
            return Err(CliError::Config(
                "model needs latent_dim, epochs, batch_size and learning_rate > 0".into(),
            ));
        }
        if !(m.gamma >= 0.0 && m.beta >= 0.0) {
            return Err(CliError::Config("gamma and beta must be non-negative".into()));
        }
        let c = &self.clustering;
        if c.k_min == 0 || c.k_min > c.k_max || c.k == Some(0) {
            return Err(CliError::Config(format!("bad cluster range {}..={}", c.k_min, c.k_max)));
        }
        let d = &self.detector;
        if !(0.0..=1.0).contains(&d.flag_fraction) || d.k_neighbors == 0 || d.n_trees == 0 || d.subsample == 0 {
            return Err(CliError::Config("bad detector settings".into()));
        }
        if self.emmv.enabled && self.emmv.n_mc == 0 {
            return Err(CliError::Config("emmv.n_mc must be positive".into()));
        }
        match &self.dataset {
            DatasetConfig::Synthetic { classes, dim, per_class, test_fraction, .. } => {
                if *classes < 2 || *dim == 0 || *per_class < 2 || !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(CliError::Config("bad synthetic dataset settings".into()));
                }
            }
            DatasetConfig::Tabular { test_fraction, .. } => {
                if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return Err(CliError::Config("test_fraction must be in (0, 1)".into()));
                }
            }
            DatasetConfig::Mnist { train_limit, test_limit, .. } => {
                if *train_limit == 0 || *test_limit == 0 {
                    return Err(CliError::Config("MNIST limits must be positive".into()));
                }
            }
        }
        Ok(())
    }
}
