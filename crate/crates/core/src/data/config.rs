//! Experiment configuration (single JSON document, unknown keys rejected)
//! and dataset ingestion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::kernels;
use crate::linalg::Matrix;

use super::split::{make_split, Split, SplitSpec};
use super::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Binary,
}

/// A named kernel or distance table on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSource {
    pub name: String,
    pub path: PathBuf,
    pub format: TableFormat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum SynthSpec {
    Blobs {
        classes: usize,
        n_per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Rings {
        n_per_ring: usize,
        radii: Vec<f64>,
        #[serde(default = "default_sigma")]
        noise: f64,
    },
    Multiview {
        n_per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        /// Uninformative extra coordinates appended to every view.
        #[serde(default)]
        noise_dim: usize,
    },
}

fn default_dim() -> usize {
    2
}
fn default_separation() -> f64 {
    3.0
}
fn default_sigma() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub per_class: Option<usize>,
    #[serde(default = "default_true")]
    pub stratify: bool,
}

fn default_true() -> bool {
    true
}

impl SplitConfig {
    pub fn spec(&self) -> Result<SplitSpec> {
        match (self.fraction, self.per_class) {
            (Some(f), None) => Ok(SplitSpec::Fraction(f)),
            (None, Some(k)) => Ok(SplitSpec::PerClass(k)),
            _ => Err(Error::Config(
                "split needs exactly one of `fraction` or `per_class`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub features_format: Option<TableFormat>,
    #[serde(default)]
    pub kernels: Vec<TableSource>,
    #[serde(default)]
    pub distances: Vec<TableSource>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum GammaConfig {
    Auto,
    Fixed(f64),
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig::Auto
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Bandwidth for RBF kernels built from features, or for converting
    /// declared distance tables via exp(-gamma d).
    #[serde(default)]
    pub gamma: GammaConfig,
    /// Normalize every kernel to unit diagonal before use.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            gamma: GammaConfig::Auto,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "plan", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    /// Random column subsets; omitted schedule uses the built-in default.
    Conventional {
        #[serde(default)]
        schedule: Option<Vec<(usize, usize)>>,
    },
    /// Cluster-center landmarks, one member per clustering method.
    Clustered {
        rank: usize,
        #[serde(default)]
        spectral_k_neighbors: Option<usize>,
    },
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Clustered {
            rank: 20,
            spectral_k_neighbors: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Merge {
    Concat,
    Sum,
    Average,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_widths")]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_dropout")]
    pub kernel_dropout: f64,
    #[serde(default = "default_merge")]
    pub merge: Merge,
    /// Extra dense widths after the global fusion layer (multi-kernel only).
    #[serde(default)]
    pub post_merge_widths: Vec<usize>,
}

fn default_widths() -> Vec<usize> {
    vec![256, 512, 256, 128]
}
fn default_dropout() -> f64 {
    0.5
}
fn default_merge() -> Merge {
    Merge::Sum
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_widths: default_widths(),
            dropout: default_dropout(),
            kernel_dropout: default_dropout(),
            merge: default_merge(),
            post_merge_widths: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Fine-tune epoch cap for the multi-kernel phase.
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
}

fn default_lr() -> f64 {
    0.001
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_finetune_epochs() -> usize {
    100
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            val_fraction: default_val_fraction(),
            finetune_epochs: default_finetune_epochs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Ingestion {
            file: path.as_ref().display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let has_files =
            d.features.is_some() || !d.kernels.is_empty() || !d.distances.is_empty();
        if d.synth.is_some() && has_files {
            return Err(Error::Config(
                "`synth` cannot be combined with file-based data sources".into(),
            ));
        }
        if !has_files && d.synth.is_none() {
            return Err(Error::Config(
                "need features, kernels, distances, or a synth block".into(),
            ));
        }
        if has_files && d.labels.is_none() {
            return Err(Error::Config("file-based data needs a labels file".into()));
        }
        d.split.spec()?;
        if !(0.0..1.0).contains(&self.model.dropout)
            || !(0.0..1.0).contains(&self.model.kernel_dropout)
        {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.model.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.training.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if let GammaConfig::Fixed(g) = self.kernel.gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config(format!("gamma {} must be positive", g)));
            }
        }
        if let EmbeddingConfig::Clustered { rank, .. } = self.embedding {
            if rank == 0 {
                return Err(Error::Config("embedding rank must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Validated in-memory dataset: one or more named tables plus labels and
/// a train/test split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<(String, Matrix)>,
    pub kernels: Vec<(String, Matrix)>,
    pub distances: Vec<(String, Matrix)>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Total number of named sources across features/kernels/distances.
    pub fn source_count(&self) -> usize {
        self.features.len() + self.kernels.len() + self.distances.len()
    }
}

fn read_table(path: &Path, format: TableFormat) -> Result<Matrix> {
    match format {
        TableFormat::Csv => io::read_csv_matrix(path),
        TableFormat::Binary => io::read_kernel_binary(path),
    }
}

/// Loads and validates every source named in the config. Kernel tables
/// must pass symmetry/diagonal checks; distance tables must have a zero
/// diagonal and non-negative entries.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    let d = &config.data;
    let (features, labels): (Vec<(String, Matrix)>, Vec<usize>) = match &d.synth {
        Some(spec) => {
            let (views, labels) = run_synth(spec, config.seed)?;
            (views, labels)
        }
        None => {
            let labels_path = d.labels.as_ref().expect("validated");
            let labels = io::read_labels(labels_path)?;
            let mut feats = Vec::new();
            if let Some(fpath) = &d.features {
                let format = d.features_format.unwrap_or(TableFormat::Csv);
                let m = match format {
                    TableFormat::Csv => io::read_csv_matrix(fpath)?,
                    TableFormat::Binary => io::read_embedding_binary(fpath)?,
                };
                feats.push(("features".to_string(), m));
            }
            (feats, labels)
        }
    };
    let n = labels.len();
    for (name, m) in &features {
        if m.rows() != n {
            return Err(Error::Ingestion {
                file: name.clone(),
                message: format!("{} rows but {} labels", m.rows(), n),
            });
        }
    }

    let mut kernel_tables = Vec::new();
    for src in &d.kernels {
        let m = read_table(&src.path, src.format)?;
        check_square(&m, n, &src.path)?;
        kernels::KernelMatrix::new(m.clone(), src.name.clone()).map_err(|e| Error::Ingestion {
            file: src.path.display().to_string(),
            message: e.to_string(),
        })?;
        kernel_tables.push((src.name.clone(), m));
    }
    let mut distance_tables = Vec::new();
    for src in &d.distances {
        let m = read_table(&src.path, src.format)?;
        check_square(&m, n, &src.path)?;
        kernels::DistanceMatrix::new(m.clone()).map_err(|e| Error::Ingestion {
            file: src.path.display().to_string(),
            message: e.to_string(),
        })?;
        distance_tables.push((src.name.clone(), m));
    }

    let labels_max = *labels.iter().max().expect("non-empty");
    let split = make_split(&labels, d.split.spec()?, d.split.stratify, config.seed)?;
    Ok(Dataset {
        features,
        kernels: kernel_tables,
        distances: distance_tables,
        labels,
        n_classes: labels_max + 1,
        split,
    })
}

fn run_synth(spec: &SynthSpec, seed: u64) -> Result<(Vec<(String, Matrix)>, Vec<usize>)> {
    match *spec {
        SynthSpec::Blobs {
            classes,
            n_per_class,
            dim,
            separation,
            sigma,
        } => {
            let (x, labels) = synth::blobs(classes, n_per_class, dim, separation, sigma, seed)?;
            Ok((vec![("blobs".to_string(), x)], labels))
        }
        SynthSpec::Rings {
            n_per_ring,
            ref radii,
            noise,
        } => {
            let (x, labels) = synth::rings(n_per_ring, radii, noise, seed)?;
            Ok((vec![("rings".to_string(), x)], labels))
        }
        SynthSpec::Multiview {
            n_per_class,
            separation,
            sigma,
            noise_dim,
        } => {
            let (views, labels) =
                synth::multiview_complementary(n_per_class, separation, sigma, noise_dim, seed)?;
            Ok((
                views
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| (format!("view{}", i), v))
                    .collect(),
                labels,
            ))
        }
    }
}

fn check_square(m: &Matrix, n: usize, path: &Path) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::Ingestion {
            file: path.display().to_string(),
            message: format!("{}x{} table for {} samples", m.rows(), m.cols(), n),
        });
    }
    Ok(())
}
