//! Single-kernel model: an ensemble of dense kernel embeddings, one
//! representation network per ensemble member, a fusion layer with
//! branch-level dropout, and a softmax classifier head.

mod baseline;
mod train;

pub use baseline::{decomp_embedding, decomp_features, softmax_baseline, BaselineResult, DecompEmbedding};
pub use train::{dkmo_train, train_network, EpochRecord};

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Merge, ModelConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    hidden_block, load_checkpoint, save_checkpoint, softmax, Cache, LayerSpec, Mode, Network,
};
use crate::nystroem::{load_ensemble, save_ensemble, EmbeddingEnsemble};
use crate::util::derive_seed;

/// Independent Bernoulli retention per branch with keep probability
/// 1 - rate. An all-dropped draw force-retains one uniformly chosen
/// branch, so the retained set is never empty.
pub fn kernel_dropout_mask(p: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    debug_assert!(p >= 1 && (0.0..1.0).contains(&rate));
    let mut mask: Vec<bool> = (0..p).map(|_| rng.gen::<f64>() >= rate).collect();
    if mask.iter().all(|&m| !m) {
        mask[rng.gen_range(0..p)] = true;
    }
    mask
}

/// Merges branch outputs. Concat keeps a fixed width across masks by
/// zero-filling dropped slots; sum rescales by P/|retained| in train mode
/// so eval-mode magnitudes match train-mode expectations; average takes
/// the mean over retained branches. Eval mode always uses every branch
/// with no rescaling.
pub fn fuse(h: &[Matrix], retained: &[bool], merge: Merge, mode: Mode) -> Result<Matrix> {
    if h.is_empty() || h.len() != retained.len() {
        return Err(Error::Shape("branch outputs and mask length mismatch".into()));
    }
    let p = h.len();
    let rows = h[0].rows();
    if h.iter().any(|m| m.rows() != rows) {
        return Err(Error::Shape("branch outputs disagree on batch size".into()));
    }
    let use_all = mode == Mode::Eval;
    let kept: Vec<usize> = (0..p).filter(|&i| use_all || retained[i]).collect();
    if kept.is_empty() {
        return Err(Error::Input("retained set must be non-empty".into()));
    }
    match merge {
        Merge::Concat => {
            let total: usize = h.iter().map(|m| m.cols()).sum();
            let mut out = Matrix::zeros(rows, total);
            let mut offset = 0;
            for (i, m) in h.iter().enumerate() {
                if use_all || retained[i] {
                    for r in 0..rows {
                        out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
                    }
                }
                offset += m.cols();
            }
            Ok(out)
        }
        Merge::Sum | Merge::Average => {
            let width = h[0].cols();
            if h.iter().any(|m| m.cols() != width) {
                return Err(Error::Shape(
                    "sum/average merging needs equal branch widths".into(),
                ));
            }
            let mut out = Matrix::zeros(rows, width);
            for &i in &kept {
                for (o, v) in out.data_mut().iter_mut().zip(h[i].data()) {
                    *o += v;
                }
            }
            let scale = match (merge, mode) {
                (Merge::Sum, Mode::Train) => p as f64 / kept.len() as f64,
                (Merge::Sum, Mode::Eval) => 1.0,
                (Merge::Average, Mode::Train) => 1.0 / kept.len() as f64,
                (Merge::Average, Mode::Eval) => 1.0 / p as f64,
                _ => unreachable!(),
            };
            if scale != 1.0 {
                for v in out.data_mut() {
                    *v *= scale;
                }
            }
            Ok(out)
        }
    }
}

/// Gradient of `fuse` with respect to each branch output. Dropped
/// branches receive zero gradients.
pub fn fuse_backward(
    dfused: &Matrix,
    widths: &[usize],
    retained: &[bool],
    merge: Merge,
    mode: Mode,
) -> Result<Vec<Matrix>> {
    let p = widths.len();
    let rows = dfused.rows();
    let use_all = mode == Mode::Eval;
    let kept: Vec<usize> = (0..p).filter(|&i| use_all || retained[i]).collect();
    let mut out = Vec::with_capacity(p);
    match merge {
        Merge::Concat => {
            let mut offset = 0;
            for (i, &w) in widths.iter().enumerate() {
                let mut d = Matrix::zeros(rows, w);
                if use_all || retained[i] {
                    for r in 0..rows {
                        d.row_mut(r).copy_from_slice(&dfused.row(r)[offset..offset + w]);
                    }
                }
                out.push(d);
                offset += w;
            }
        }
        Merge::Sum | Merge::Average => {
            let scale = match (merge, mode) {
                (Merge::Sum, Mode::Train) => p as f64 / kept.len() as f64,
                (Merge::Sum, Mode::Eval) => 1.0,
                (Merge::Average, Mode::Train) => 1.0 / kept.len() as f64,
                (Merge::Average, Mode::Eval) => 1.0 / p as f64,
                _ => unreachable!(),
            };
            for (i, &w) in widths.iter().enumerate() {
                if use_all || retained[i] {
                    let mut d = dfused.clone();
                    if scale != 1.0 {
                        for v in d.data_mut() {
                            *v *= scale;
                        }
                    }
                    out.push(d);
                } else {
                    out.push(Matrix::zeros(rows, w));
                }
            }
        }
    }
    Ok(out)
}

pub struct ForwardTrace {
    pub(crate) branch_caches: Vec<Cache>,
    pub(crate) head_cache: Cache,
    pub(crate) mask: Vec<bool>,
    pub(crate) mode: Mode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    merge: Merge,
    kernel_dropout: f64,
    n_classes: usize,
    branch_count: usize,
}

/// The trained single-kernel model: embedding ensemble binding, one
/// network per branch, and a dense softmax head over the fused output.
#[derive(Debug, Clone)]
pub struct DkmoModel {
    pub ensemble: EmbeddingEnsemble,
    pub branches: Vec<Network>,
    pub head: Network,
    pub merge: Merge,
    pub kernel_dropout: f64,
    pub n_classes: usize,
}

impl DkmoModel {
    pub fn new(
        ensemble: EmbeddingEnsemble,
        n_classes: usize,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::Input("ensemble must have at least one member".into()));
        }
        if n_classes < 2 {
            return Err(Error::Label("need at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&cfg.kernel_dropout) {
            return Err(Error::Config("kernel dropout rate must lie in [0, 1)".into()));
        }
        let mut branches = Vec::with_capacity(ensemble.len());
        for (p, member) in ensemble.members().iter().enumerate() {
            let mut specs = Vec::new();
            for &w in &cfg.hidden_widths {
                specs.extend(hidden_block(w, cfg.dropout));
            }
            branches.push(Network::new(
                member.rank(),
                &specs,
                derive_seed(seed, p as u64),
            )?);
        }
        let widths: Vec<usize> = branches.iter().map(|b| b.output_width()).collect();
        if matches!(cfg.merge, Merge::Sum | Merge::Average)
            && widths.windows(2).any(|w| w[0] != w[1])
        {
            return Err(Error::Config(
                "sum/average merging needs equal branch output widths".into(),
            ));
        }
        let fused_width = match cfg.merge {
            Merge::Concat => widths.iter().sum(),
            _ => widths[0],
        };
        let head = Network::new(
            fused_width,
            &[LayerSpec::Dense { width: n_classes }],
            derive_seed(seed, 0xFFFF),
        )?;
        Ok(DkmoModel {
            ensemble,
            branches,
            head,
            merge: cfg.merge,
            kernel_dropout: cfg.kernel_dropout,
            n_classes,
        })
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.output_width()).collect()
    }

    /// Forward pass over pre-embedded per-branch inputs. `mask` overrides
    /// the dropout draw (used by the multi-kernel fine-tuner and tests);
    /// eval mode always retains every branch.
    pub fn forward_embedded(
        &self,
        inputs: &[Matrix],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
        mask: Option<Vec<bool>>,
    ) -> Result<(Matrix, ForwardTrace)> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "{} inputs for {} branches",
                inputs.len(),
                self.branches.len()
            )));
        }
        let p = self.branches.len();
        let mask = match mask {
            Some(m) => {
                if m.len() != p {
                    return Err(Error::Shape("mask length mismatch".into()));
                }
                m
            }
            None => match mode {
                Mode::Eval => vec![true; p],
                Mode::Train => {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::Input("train-mode forward needs an rng".into())
                    })?;
                    kernel_dropout_mask(p, self.kernel_dropout, rng)
                }
            },
        };
        let mut outputs = Vec::with_capacity(p);
        let mut branch_caches = Vec::with_capacity(p);
        for (branch, x) in self.branches.iter().zip(inputs) {
            let (h, cache) = branch.forward(x, mode, rng.as_deref_mut())?;
            outputs.push(h);
            branch_caches.push(cache);
        }
        let fused = fuse(&outputs, &mask, self.merge, mode)?;
        let (logits, head_cache) = self.head.forward(&fused, mode, rng)?;
        Ok((
            logits,
            ForwardTrace {
                branch_caches,
                head_cache,
                mask,
                mode,
            },
        ))
    }

    /// Flat gradient in `params_flat` layout: branches in order, then the
    /// head. Dropped branches contribute zero gradients.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &Matrix) -> Result<Vec<f64>> {
        let (head_grads, dfused) = self.head.backward(&trace.head_cache, dlogits)?;
        let widths = self.branch_widths();
        let deltas = fuse_backward(&dfused, &widths, &trace.mask, self.merge, trace.mode)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for (i, branch) in self.branches.iter().enumerate() {
            if trace.mode == Mode::Train && !trace.mask[i] {
                flat.extend(std::iter::repeat(0.0).take(branch.param_count()));
            } else {
                let (g, _) = branch.backward(&trace.branch_caches[i], &deltas[i])?;
                flat.extend(g);
            }
        }
        flat.extend(head_grads);
        Ok(flat)
    }

    pub fn update_running_stats(&mut self, trace: &ForwardTrace) {
        for (branch, cache) in self.branches.iter_mut().zip(&trace.branch_caches) {
            branch.update_running_stats(cache);
        }
        self.head.update_running_stats(&trace.head_cache);
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.param_count()).sum::<usize>() + self.head.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.branches {
            out.extend(b.params_flat());
        }
        out.extend(self.head.params_flat());
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for b in &mut self.branches {
            let len = b.param_count();
            b.set_params_flat(&params[offset..offset + len])?;
            offset += len;
        }
        self.head.set_params_flat(&params[offset..])
    }

    /// Class probabilities for pre-embedded inputs (eval mode).
    pub fn predict_embedded(&self, inputs: &[Matrix]) -> Result<Matrix> {
        let (logits, _) = self.forward_embedded(inputs, Mode::Eval, None, None)?;
        Ok(softmax(&logits))
    }

    /// Class probabilities for stored training rows.
    pub fn predict_indices(&self, idx: &[usize]) -> Result<Matrix> {
        let n = self.ensemble.n();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("row {} out of range for n={}", bad, n)));
        }
        let inputs: Vec<Matrix> = self
            .ensemble
            .members()
            .iter()
            .map(|m| m.values.select_rows(idx))
            .collect();
        self.predict_embedded(&inputs)
    }

    /// Class probabilities for out-of-sample rows of the full training
    /// kernel (one row of length n per new sample).
    pub fn predict_kernel_rows(&self, rows: &Matrix) -> Result<Matrix> {
        let inputs: Vec<Matrix> = self
            .ensemble
            .members()
            .iter()
            .map(|m| m.embed_kernel_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        self.predict_embedded(&inputs)
    }

    /// Class probabilities for raw feature rows (clustered ensembles only).
    pub fn predict_features(&self, x: &Matrix) -> Result<Matrix> {
        let inputs: Vec<Matrix> = self
            .ensemble
            .members()
            .iter()
            .map(|m| m.embed_features(x))
            .collect::<Result<Vec<_>>>()?;
        self.predict_embedded(&inputs)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_ensemble(&dir.join("ensemble"), &self.ensemble)?;
        for (i, b) in self.branches.iter().enumerate() {
            save_checkpoint(dir.join(format!("branch_{:03}.dkmc", i)), b)?;
        }
        save_checkpoint(dir.join("head.dkmc"), &self.head)?;
        let manifest = ModelManifest {
            merge: self.merge,
            kernel_dropout: self.kernel_dropout,
            n_classes: self.n_classes,
            branch_count: self.branches.len(),
        };
        std::fs::write(
            dir.join("model.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let ensemble = load_ensemble(&dir.join("ensemble"))?;
        if ensemble.len() != manifest.branch_count {
            return Err(Error::Binding(format!(
                "{} ensemble members for {} branches",
                ensemble.len(),
                manifest.branch_count
            )));
        }
        let mut branches = Vec::with_capacity(manifest.branch_count);
        for i in 0..manifest.branch_count {
            branches.push(load_checkpoint(dir.join(format!("branch_{:03}.dkmc", i)))?);
        }
        let head = load_checkpoint(dir.join("head.dkmc"))?;
        Ok(DkmoModel {
            ensemble,
            branches,
            head,
            merge: manifest.merge,
            kernel_dropout: manifest.kernel_dropout,
            n_classes: manifest.n_classes,
        })
    }
}
