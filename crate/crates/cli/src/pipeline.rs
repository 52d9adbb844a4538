//! Shared plumbing between subcommands: turning a validated dataset into
//! per-source training inputs and test queries, and writing run artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dkm_core::data::{load_dataset, Dataset, EmbeddingConfig, ExperimentConfig, GammaConfig};
use dkm_core::dkmo::EpochRecord;
use dkm_core::kernels::{
    estimate_gamma, estimate_gamma_features, exp_distance_kernel, normalize_kernel, rbf_cross,
    rbf_kernel, DistanceMatrix, KernelMatrix,
};
use dkm_core::mdkmo::{MkInput, MkQuery};
use dkm_core::metrics::Metrics;
use dkm_core::util::sha256_hex;
use dkm_core::{Error, Matrix, Result};

/// How a trained model expects out-of-sample inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    /// Raw feature rows with the training dimensionality.
    Features,
    /// Rows of the normalized kernel between new samples and the
    /// training rows, in training order.
    KernelRows,
}

/// Every data source resolved against the train/test split: training
/// inputs for model building plus matching test-row queries, in source
/// order (features, then kernels, then distances).
pub struct Prepared {
    pub dataset: Dataset,
    pub names: Vec<String>,
    pub kinds: Vec<QueryKind>,
    pub inputs: Vec<MkInput>,
    pub test_queries: Vec<MkQuery>,
}

impl Prepared {
    pub fn train_labels(&self) -> Vec<usize> {
        select(&self.dataset.labels, &self.dataset.split.train)
    }

    pub fn test_labels(&self) -> Vec<usize> {
        select(&self.dataset.labels, &self.dataset.split.test)
    }

    pub fn source_entries(&self) -> Vec<SourceEntry> {
        self.names
            .iter()
            .zip(&self.kinds)
            .map(|(name, &kind)| SourceEntry {
                name: name.clone(),
                kind,
            })
            .collect()
    }

    fn push(&mut self, name: String, kind: QueryKind, input: MkInput, query: MkQuery) {
        self.names.push(name);
        self.kinds.push(kind);
        self.inputs.push(input);
        self.test_queries.push(query);
    }
}

fn select(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Rows `rows` by columns `cols` block of a square table.
fn block(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), cols.len());
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            out.set(i, j, m.get(r, c));
        }
    }
    out
}

fn resolve_feature_gamma(cfg: &ExperimentConfig, x_train: &Matrix) -> Result<f64> {
    match cfg.kernel.gamma {
        GammaConfig::Fixed(g) => Ok(g),
        GammaConfig::Auto => estimate_gamma_features(x_train),
    }
}

/// Loads the dataset and resolves every source into a train-row input and
/// a test-row query. Precomputed kernels are unit-diagonal normalized on
/// the full table so train and test rows share scaling; bandwidths are
/// estimated from training rows only.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let dataset = load_dataset(cfg)?;
    let train = dataset.split.train.clone();
    let test = dataset.split.test.clone();
    let mut prepared = Prepared {
        dataset,
        names: Vec::new(),
        kinds: Vec::new(),
        inputs: Vec::new(),
        test_queries: Vec::new(),
    };

    let features = prepared.dataset.features.clone();
    for (name, x) in &features {
        let x_train = x.select_rows(&train);
        let x_test = x.select_rows(&test);
        let gamma = resolve_feature_gamma(cfg, &x_train)?;
        let (kind, query) = match cfg.embedding {
            EmbeddingConfig::Clustered { .. } => (QueryKind::Features, MkQuery::Features(x_test)),
            EmbeddingConfig::Conventional { .. } => (
                QueryKind::KernelRows,
                MkQuery::KernelRows(rbf_cross(&x_test, &x_train, gamma)?),
            ),
        };
        prepared.push(
            name.clone(),
            kind,
            MkInput::Features {
                name: name.clone(),
                x: x_train,
                gamma: Some(gamma),
            },
            query,
        );
    }

    let kernels = prepared.dataset.kernels.clone();
    for (name, k) in &kernels {
        let km = KernelMatrix::new(k.clone(), name.clone())?;
        let (input, query) = kernel_source(name, &km, &train, &test)?;
        prepared.push(name.clone(), QueryKind::KernelRows, input, query);
    }

    let distances = prepared.dataset.distances.clone();
    for (name, d) in &distances {
        let dm = DistanceMatrix::new(d.clone())?;
        let gamma = match cfg.kernel.gamma {
            GammaConfig::Fixed(g) => g,
            GammaConfig::Auto => estimate_gamma(&DistanceMatrix::new(block(d, &train, &train))?)?,
        };
        let km = exp_distance_kernel(&dm, gamma, name.clone())?;
        let (input, query) = kernel_source(name, &km, &train, &test)?;
        prepared.push(name.clone(), QueryKind::KernelRows, input, query);
    }

    if prepared.inputs.is_empty() {
        return Err(Error::Config("no usable data sources".into()));
    }
    Ok(prepared)
}

fn kernel_source(
    name: &str,
    km: &KernelMatrix,
    train: &[usize],
    test: &[usize],
) -> Result<(MkInput, MkQuery)> {
    let kn = normalize_kernel(km)?;
    let k_train = kn.values().select_square(train);
    let rows = block(kn.values(), test, train);
    Ok((
        MkInput::Kernel(KernelMatrix::new(k_train, name.to_string())?),
        MkQuery::KernelRows(rows),
    ))
}

/// Full n-by-n normalized kernel per source, for the spectral baselines.
/// Feature sources go through an RBF kernel; declared distances through
/// the exponential map. Bandwidths come from training rows only.
pub fn full_kernels(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<KernelMatrix>> {
    let train = &dataset.split.train;
    let mut out = Vec::new();
    for (name, x) in &dataset.features {
        let gamma = resolve_feature_gamma(cfg, &x.select_rows(train))?;
        out.push(normalize_kernel(&rbf_kernel(x, gamma, name.clone())?)?);
    }
    for (name, k) in &dataset.kernels {
        out.push(normalize_kernel(&KernelMatrix::new(
            k.clone(),
            name.clone(),
        )?)?);
    }
    for (name, d) in &dataset.distances {
        let dm = DistanceMatrix::new(d.clone())?;
        let gamma = match cfg.kernel.gamma {
            GammaConfig::Fixed(g) => g,
            GammaConfig::Auto => estimate_gamma(&DistanceMatrix::new(block(d, train, train))?)?,
        };
        out.push(normalize_kernel(&exp_distance_kernel(&dm, gamma, name.clone())?)?);
    }
    if out.is_empty() {
        return Err(Error::Config("no usable data sources".into()));
    }
    Ok(out)
}

/// Stable fingerprint of a resolved configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

/// metrics.json payload: evaluation results plus run provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn write_log_csv(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for rec in log {
        text.push_str(&format!(
            "{},{:?},{:?},{:?},{:?}\n",
            rec.epoch, rec.train_loss, rec.train_acc, rec.val_loss, rec.val_acc
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Model bundle manifest: what kind of model a directory holds and the
/// input every source expects at prediction time.
#[derive(Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub kind: BundleKind,
    pub sources: Vec<SourceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub method: String,
    /// Spectral rank actually kept by the decomposition.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    SingleKernel,
    MultiKernel,
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceEntry {
    pub name: String,
    pub kind: QueryKind,
}

pub fn write_bundle(dir: &Path, manifest: &BundleManifest, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("bundle.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<(BundleManifest, ExperimentConfig)> {
    let manifest: BundleManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bundle.json"))?)?;
    let cfg = ExperimentConfig::from_file(dir.join("config.json"))?;
    Ok((manifest, cfg))
}
