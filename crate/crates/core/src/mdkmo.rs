//! Multiple-kernel pipeline: train one single-kernel model per kernel,
//! strip the softmax heads, join the bodies through a global fusion
//! layer with kernel-level dropout, and fine-tune end to end.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingConfig, Merge, ModelConfig, TrainingConfig};
use crate::dkmo::{
    dkmo_train, fuse, fuse_backward, kernel_dropout_mask, DkmoModel, EpochRecord,
};
use crate::error::{Error, Result};
use crate::kernels::{estimate_gamma_features, normalize_kernel, KernelMatrix};
use crate::linalg::Matrix;
use crate::nn::{
    hidden_block, load_checkpoint, predict_labels, save_checkpoint, softmax,
    softmax_cross_entropy, Adam, Cache, LayerSpec, Mode, Network,
};
use crate::clustering::EnsembleParams;
use crate::nystroem::{
    clustered_ensemble, default_schedule, load_ensemble, save_ensemble, varied_ensemble,
    EmbeddingEnsemble, FeatureKernel,
};
use crate::util::{derive_seed, derive_seed_named};

/// One input kernel for the multi-kernel pipeline.
pub enum MkInput {
    /// A precomputed kernel table; embedded by column sampling.
    Kernel(KernelMatrix),
    /// Raw feature rows; an RBF kernel is built (gamma estimated from the
    /// mean pairwise squared distance when absent) and embedded with
    /// cluster-center landmarks.
    Features {
        name: String,
        x: Matrix,
        gamma: Option<f64>,
    },
}

impl MkInput {
    pub fn name(&self) -> &str {
        match self {
            MkInput::Kernel(k) => k.name(),
            MkInput::Features { name, .. } => name,
        }
    }
}

/// Builds the embedding ensemble for one input: precomputed kernels are
/// unit-diagonal normalized and column-sampled; feature inputs go through
/// an RBF kernel with clustered landmarks or column sampling per the plan.
pub fn build_ensemble(
    input: &MkInput,
    embedding: &EmbeddingConfig,
    seed: u64,
) -> Result<EmbeddingEnsemble> {
    match input {
        MkInput::Kernel(k) => {
            let k = normalize_kernel(k)?;
            let schedule = match embedding {
                EmbeddingConfig::Conventional { schedule: Some(s) } => s.clone(),
                EmbeddingConfig::Conventional { schedule: None } => default_schedule(k.n()),
                EmbeddingConfig::Clustered { .. } => {
                    return Err(Error::Config(
                        "clustered embeddings need feature inputs, not a precomputed kernel"
                            .into(),
                    ))
                }
            };
            varied_ensemble(&k, &schedule, seed)
        }
        MkInput::Features { name, x, gamma } => {
            let gamma = match gamma {
                Some(g) => *g,
                None => estimate_gamma_features(x)?,
            };
            match embedding {
                EmbeddingConfig::Clustered {
                    rank,
                    spectral_k_neighbors,
                } => clustered_ensemble(
                    x,
                    *rank,
                    FeatureKernel::Rbf { gamma },
                    name,
                    seed,
                    &EnsembleParams {
                        spectral_k_neighbors: *spectral_k_neighbors,
                    },
                ),
                EmbeddingConfig::Conventional { schedule } => {
                    let k = crate::kernels::rbf_kernel(x, gamma, name.clone())?;
                    let schedule = schedule
                        .clone()
                        .unwrap_or_else(|| default_schedule(k.n()));
                    varied_ensemble(&k, &schedule, seed)
                }
            }
        }
    }
}

pub struct PretrainedKernel {
    pub name: String,
    pub model: DkmoModel,
    pub log: Vec<EpochRecord>,
}

/// Trains one single-kernel model per input, independently. Kernels are
/// unit-diagonal normalized before embedding. The per-kernel seed is
/// derived from the kernel name, not its list position, so reordering
/// inputs cannot change any individual model.
pub fn pretrain_all(
    inputs: &[MkInput],
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainingConfig,
    embedding: &EmbeddingConfig,
    seed: u64,
    threads: usize,
) -> Result<Vec<PretrainedKernel>> {
    if inputs.is_empty() {
        return Err(Error::Input("no kernels to pretrain".into()));
    }
    // Per-kernel runs are independent, so they fan out over threads; the
    // name-derived seeds keep every result independent of scheduling.
    let runs = crate::util::parallel_map(inputs.iter().collect(), threads, |input| {
        let name = input.name().to_string();
        let kseed = derive_seed_named(seed, &name);
        let outcome = build_ensemble(input, embedding, kseed)
            .and_then(|ensemble| dkmo_train(ensemble, labels, model_cfg, train_cfg, kseed));
        (name, outcome)
    });
    let mut out = Vec::with_capacity(inputs.len());
    for (name, outcome) in runs {
        let (model, log) = outcome.map_err(|e| {
            Error::Divergence(format!("pretraining kernel {} failed: {}", name, e))
        })?;
        out.push(PretrainedKernel { name, model, log });
    }
    Ok(out)
}

/// A pretrained single-kernel body with its softmax head removed: the
/// embedding ensemble, the branch networks, and the per-kernel merge.
#[derive(Debug, Clone)]
pub struct KernelBody {
    pub name: String,
    pub ensemble: EmbeddingEnsemble,
    pub branches: Vec<Network>,
    pub merge: Merge,
}

pub struct BodyTrace {
    branch_caches: Vec<Cache>,
    mode: Mode,
}

impl KernelBody {
    fn from_pretrained(p: &PretrainedKernel) -> Self {
        KernelBody {
            name: p.name.clone(),
            ensemble: p.model.ensemble.clone(),
            branches: p.model.branches.clone(),
            merge: p.model.merge,
        }
    }

    pub fn output_width(&self) -> usize {
        match self.merge {
            Merge::Concat => self.branches.iter().map(|b| b.output_width()).sum(),
            _ => self.branches[0].output_width(),
        }
    }

    /// All branches retained: body-level dropout is never applied inside
    /// the multi-kernel model — masks operate over whole kernels only.
    fn forward(
        &self,
        inputs: &[Matrix],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Matrix, BodyTrace)> {
        let mut outputs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for (branch, x) in self.branches.iter().zip(inputs) {
            let (h, c) = branch.forward(x, mode, rng.as_deref_mut())?;
            outputs.push(h);
            caches.push(c);
        }
        let retained = vec![true; outputs.len()];
        let fused = fuse(&outputs, &retained, self.merge, mode)?;
        Ok((fused, BodyTrace { branch_caches: caches, mode }))
    }

    fn backward(&self, trace: &BodyTrace, dout: &Matrix) -> Result<Vec<f64>> {
        let widths: Vec<usize> = self.branches.iter().map(|b| b.output_width()).collect();
        let retained = vec![true; widths.len()];
        let deltas = fuse_backward(dout, &widths, &retained, self.merge, trace.mode)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for (branch, (cache, delta)) in self
            .branches
            .iter()
            .zip(trace.branch_caches.iter().zip(&deltas))
        {
            let (g, _) = branch.backward(cache, delta)?;
            flat.extend(g);
        }
        Ok(flat)
    }

    fn update_running_stats(&mut self, trace: &BodyTrace) {
        for (b, c) in self.branches.iter_mut().zip(&trace.branch_caches) {
            b.update_running_stats(c);
        }
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.param_count()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.branches {
            out.extend(b.params_flat());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let mut offset = 0;
        for b in &mut self.branches {
            let len = b.param_count();
            b.set_params_flat(&params[offset..offset + len])?;
            offset += len;
        }
        if offset != params.len() {
            return Err(Error::Shape("body parameter length mismatch".into()));
        }
        Ok(())
    }

    /// Embeds query rows for every branch of this body.
    pub fn embed_query(&self, query: &MkQuery) -> Result<Vec<Matrix>> {
        match query {
            MkQuery::KernelRows(rows) => self
                .ensemble
                .members()
                .iter()
                .map(|m| m.embed_kernel_rows(rows))
                .collect(),
            MkQuery::Features(x) => self
                .ensemble
                .members()
                .iter()
                .map(|m| m.embed_features(x))
                .collect(),
            MkQuery::Indices(idx) => Ok(self
                .ensemble
                .members()
                .iter()
                .map(|m| m.values.select_rows(idx))
                .collect()),
        }
    }
}

/// Per-kernel inputs for inference on new samples.
pub enum MkQuery {
    /// Rows of the (normalized) kernel between new samples and the
    /// training set, one row per sample.
    KernelRows(Matrix),
    /// Raw feature rows, for clustered (landmark) bodies.
    Features(Matrix),
    /// Stored training rows by index.
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FusionManifest {
    merge: Merge,
    kernel_dropout: f64,
    n_classes: usize,
    kernel_names: Vec<String>,
    body_merges: Vec<Merge>,
}

/// The joined multi-kernel model.
#[derive(Debug, Clone)]
pub struct MdkmoModel {
    pub bodies: Vec<KernelBody>,
    pub global_head: Network,
    pub merge: Merge,
    pub kernel_dropout: f64,
    pub n_classes: usize,
}

impl MdkmoModel {
    pub fn param_count(&self) -> usize {
        self.bodies.iter().map(|b| b.param_count()).sum::<usize>()
            + self.global_head.param_count()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.bodies {
            out.extend(b.params_flat());
        }
        out.extend(self.global_head.params_flat());
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
        for b in &mut self.bodies {
            let len = b.param_count();
            b.set_params_flat(&params[offset..offset + len])?;
            offset += len;
        }
        self.global_head.set_params_flat(&params[offset..])
    }

    fn forward(
        &self,
        per_body_inputs: &[Vec<Matrix>],
        mode: Mode,
        mut rng: Option<&mut ChaCha8Rng>,
        mask: Option<Vec<bool>>,
    ) -> Result<(Matrix, MdkmoTrace)> {
        let m = self.bodies.len();
        if per_body_inputs.len() != m {
            return Err(Error::Shape(format!(
                "{} input groups for {} kernels",
                per_body_inputs.len(),
                m
            )));
        }
        let mask = match mask {
            Some(v) => v,
            None => match mode {
                Mode::Eval => vec![true; m],
                Mode::Train => {
                    let rng = rng.as_deref_mut().ok_or_else(|| {
                        Error::Input("train-mode forward needs an rng".into())
                    })?;
                    kernel_dropout_mask(m, self.kernel_dropout, rng)
                }
            },
        };
        let mut reps = Vec::with_capacity(m);
        let mut traces = Vec::with_capacity(m);
        for (body, inputs) in self.bodies.iter().zip(per_body_inputs) {
            let (h, t) = body.forward(inputs, mode, rng.as_deref_mut())?;
            reps.push(h);
            traces.push(t);
        }
        let fused = fuse(&reps, &mask, self.merge, mode)?;
        let (logits, head_cache) = self.global_head.forward(&fused, mode, rng)?;
        Ok((
            logits,
            MdkmoTrace {
                body_traces: traces,
                head_cache,
                mask,
                mode,
            },
        ))
    }

    fn backward(&self, trace: &MdkmoTrace, dlogits: &Matrix) -> Result<Vec<f64>> {
        let (head_grads, dfused) = self.global_head.backward(&trace.head_cache, dlogits)?;
        let widths: Vec<usize> = self.bodies.iter().map(|b| b.output_width()).collect();
        let deltas = fuse_backward(&dfused, &widths, &trace.mask, self.merge, trace.mode)?;
        let mut flat = Vec::with_capacity(self.param_count());
        for (i, body) in self.bodies.iter().enumerate() {
            if trace.mode == Mode::Train && !trace.mask[i] {
                flat.extend(std::iter::repeat(0.0).take(body.param_count()));
            } else {
                flat.extend(body.backward(&trace.body_traces[i], &deltas[i])?);
            }
        }
        flat.extend(head_grads);
        Ok(flat)
    }

    fn update_running_stats(&mut self, trace: &MdkmoTrace) {
        for (b, t) in self.bodies.iter_mut().zip(&trace.body_traces) {
            b.update_running_stats(t);
        }
        self.global_head.update_running_stats(&trace.head_cache);
    }

    /// Class probabilities for new samples, one query per kernel in body
    /// order. Eval mode: every kernel representation is used.
    pub fn predict(&self, queries: &[MkQuery]) -> Result<Matrix> {
        if queries.len() != self.bodies.len() {
            return Err(Error::Binding(format!(
                "{} kernel inputs for {} bodies",
                queries.len(),
                self.bodies.len()
            )));
        }
        let per_body: Vec<Vec<Matrix>> = self
            .bodies
            .iter()
            .zip(queries)
            .map(|(b, q)| b.embed_query(q))
            .collect::<Result<Vec<_>>>()?;
        let (logits, _) = self.forward(&per_body, Mode::Eval, None, None)?;
        Ok(softmax(&logits))
    }

    /// Class probabilities for stored training rows.
    pub fn predict_indices(&self, idx: &[usize]) -> Result<Matrix> {
        let queries: Vec<MkQuery> = self
            .bodies
            .iter()
            .map(|_| MkQuery::Indices(idx.to_vec()))
            .collect();
        self.predict(&queries)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, body) in self.bodies.iter().enumerate() {
            let bdir = dir.join(format!("body_{:03}", i));
            std::fs::create_dir_all(&bdir)?;
            save_ensemble(&bdir.join("ensemble"), &body.ensemble)?;
            for (j, branch) in body.branches.iter().enumerate() {
                save_checkpoint(bdir.join(format!("branch_{:03}.dkmc", j)), branch)?;
            }
        }
        save_checkpoint(dir.join("global_head.dkmc"), &self.global_head)?;
        let manifest = FusionManifest {
            merge: self.merge,
            kernel_dropout: self.kernel_dropout,
            n_classes: self.n_classes,
            kernel_names: self.bodies.iter().map(|b| b.name.clone()).collect(),
            body_merges: self.bodies.iter().map(|b| b.merge).collect(),
        };
        std::fs::write(
            dir.join("fusion.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: FusionManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("fusion.json"))?)?;
        let mut bodies = Vec::with_capacity(manifest.kernel_names.len());
        for (i, (name, merge)) in manifest
            .kernel_names
            .iter()
            .zip(&manifest.body_merges)
            .enumerate()
        {
            let bdir = dir.join(format!("body_{:03}", i));
            let ensemble = load_ensemble(&bdir.join("ensemble"))?;
            let mut branches = Vec::with_capacity(ensemble.len());
            for j in 0..ensemble.len() {
                branches.push(load_checkpoint(bdir.join(format!("branch_{:03}.dkmc", j)))?);
            }
            bodies.push(KernelBody {
                name: name.clone(),
                ensemble,
                branches,
                merge: *merge,
            });
        }
        let global_head = load_checkpoint(dir.join("global_head.dkmc"))?;
        Ok(MdkmoModel {
            bodies,
            global_head,
            merge: manifest.merge,
            kernel_dropout: manifest.kernel_dropout,
            n_classes: manifest.n_classes,
        })
    }
}

pub struct MdkmoTrace {
    body_traces: Vec<BodyTrace>,
    head_cache: Cache,
    mask: Vec<bool>,
    mode: Mode,
}

/// Joins pretrained bodies under a fresh global fusion layer and head.
/// Body parameters are carried over bitwise. `post_merge_widths` adds
/// optional dense blocks between the fusion layer and the classifier.
pub fn build_mdkmo(
    pretrained: &[PretrainedKernel],
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<MdkmoModel> {
    if pretrained.len() < 2 {
        return Err(Error::Config(
            "multi-kernel fusion needs at least 2 pretrained kernels".into(),
        ));
    }
    let n_classes = pretrained[0].model.n_classes;
    if pretrained.iter().any(|p| p.model.n_classes != n_classes) {
        return Err(Error::Config("pretrained models disagree on class count".into()));
    }
    let bodies: Vec<KernelBody> = pretrained.iter().map(KernelBody::from_pretrained).collect();
    let widths: Vec<usize> = bodies.iter().map(|b| b.output_width()).collect();
    if matches!(model_cfg.merge, Merge::Sum | Merge::Average)
        && widths.windows(2).any(|w| w[0] != w[1])
    {
        return Err(Error::Config(
            "sum/average global merging needs equal body output widths".into(),
        ));
    }
    let fused_width = match model_cfg.merge {
        Merge::Concat => widths.iter().sum(),
        _ => widths[0],
    };
    let mut head_spec = Vec::new();
    for &w in &model_cfg.post_merge_widths {
        head_spec.extend(hidden_block(w, model_cfg.dropout));
    }
    head_spec.push(LayerSpec::Dense { width: n_classes });
    let global_head = Network::new(fused_width, &head_spec, derive_seed(seed, 0x61FE))?;
    Ok(MdkmoModel {
        bodies,
        global_head,
        merge: model_cfg.merge,
        kernel_dropout: model_cfg.kernel_dropout,
        n_classes,
    })
}

const STREAM_SHUFFLE: u64 = 0x11AD;
const STREAM_MASK: u64 = 0x77E2;
const STREAM_DROPOUT: u64 = 0x9B01;

/// End-to-end fine-tuning over the joint parameter set (all bodies plus
/// the global head). Zero epochs is an exact no-op. Uses the same
/// holdout and early-stop rules as single-kernel training, capped at
/// `train_cfg.finetune_epochs`.
pub fn finetune(
    mut model: MdkmoModel,
    labels: &[usize],
    train_cfg: &TrainingConfig,
    seed: u64,
) -> Result<(MdkmoModel, Vec<EpochRecord>)> {
    let n = model.bodies[0].ensemble.n();
    if model.bodies.iter().any(|b| b.ensemble.n() != n) {
        return Err(Error::Shape("bodies disagree on sample count".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            n
        )));
    }
    if train_cfg.finetune_epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let all: Vec<usize> = (0..n).collect();
    let inputs: Vec<Vec<Matrix>> = model
        .bodies
        .iter()
        .map(|b| b.embed_query(&MkQuery::Indices(all.clone())))
        .collect::<Result<Vec<_>>>()?;
    let select = |idx: &[usize]| -> Vec<Vec<Matrix>> {
        inputs
            .iter()
            .map(|group| group.iter().map(|m| m.select_rows(idx)).collect())
            .collect()
    };

    let split = crate::data::make_split(
        labels,
        crate::data::SplitSpec::Fraction(1.0 - train_cfg.val_fraction),
        true,
        derive_seed(seed, 0x5113),
    )?;
    let (train_idx, val_idx) = if train_cfg.val_fraction > 0.0 {
        (split.train, split.test)
    } else {
        ((0..n).collect(), Vec::new())
    };
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE));
    let mut rng_mask = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MASK));
    let mut rng_dropout = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT));

    let m = model.bodies.len();
    let mut params = model.params_flat();
    let mut opt = Adam::new(params.len(), train_cfg.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(f64, MdkmoModel)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..train_cfg.finetune_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_shuffle);
        for batch in order.chunks(train_cfg.batch_size) {
            let bx = select(batch);
            let by: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mask = kernel_dropout_mask(m, model.kernel_dropout, &mut rng_mask);
            let (logits, trace) =
                model.forward(&bx, Mode::Train, Some(&mut rng_dropout), Some(mask))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &by)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite fine-tune loss at epoch {}",
                    epoch
                )));
            }
            let grads = model.backward(&trace, &dlogits)?;
            opt.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
            model.update_running_stats(&trace);
        }

        let (train_logits, _) = model.forward(&select(&train_idx), Mode::Eval, None, None)?;
        let (train_loss, train_acc) = loss_acc(&train_logits, &train_labels)?;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (train_loss, train_acc)
        } else {
            let (val_logits, _) = model.forward(&select(&val_idx), Mode::Eval, None, None)?;
            loss_acc(&val_logits, &val_labels)?
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= train_cfg.patience {
                break;
            }
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, log))
}

fn loss_acc(logits: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
    let (loss, _) = softmax_cross_entropy(logits, labels)?;
    let pred = predict_labels(logits);
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;

    fn small_model_cfg() -> ModelConfig {
        ModelConfig {
            hidden_widths: vec![16, 16],
            dropout: 0.2,
            kernel_dropout: 0.5,
            merge: Merge::Sum,
            post_merge_widths: Vec::new(),
        }
    }

    fn fast_train_cfg() -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.005,
            batch_size: 32,
            max_epochs: 40,
            patience: 15,
            val_fraction: 0.1,
            finetune_epochs: 25,
        }
    }

    fn multiview_inputs(n_per_class: usize, seed: u64) -> (Vec<MkInput>, Vec<usize>) {
        let (views, labels) =
            synth::multiview_complementary(n_per_class, 3.0, 0.3, 0, seed).unwrap();
        let inputs = views
            .into_iter()
            .enumerate()
            .map(|(i, x)| MkInput::Features {
                name: format!("view{}", i),
                x,
                gamma: None,
            })
            .collect();
        (inputs, labels)
    }

    #[test]
    fn pretraining_is_deterministic_and_name_seeded() {
        let (inputs, labels) = multiview_inputs(12, 3);
        let cfg = small_model_cfg();
        let tc = TrainingConfig {
            max_epochs: 5,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 6,
            spectral_k_neighbors: None,
        };
        let a = pretrain_all(&inputs, &labels, &cfg, &tc, &emb, 7, 1).unwrap();
        let b = pretrain_all(&inputs, &labels, &cfg, &tc, &emb, 7, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.model.params_flat(), y.model.params_flat());
        }
        // Reversing the input order must not change any individual model.
        let (mut rev_inputs, _) = multiview_inputs(12, 3);
        rev_inputs.reverse();
        let c = pretrain_all(&rev_inputs, &labels, &cfg, &tc, &emb, 7, 1).unwrap();
        assert_eq!(c[0].name, "view2");
        assert_eq!(
            c[2].model.params_flat(),
            a[0].model.params_flat(),
        );
    }

    #[test]
    fn fusion_constructor_rejects_single_kernel() {
        let (inputs, labels) = multiview_inputs(8, 5);
        let tc = TrainingConfig {
            max_epochs: 2,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 4,
            spectral_k_neighbors: None,
        };
        let one = pretrain_all(&inputs[..1], &labels, &small_model_cfg(), &tc, &emb, 1, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!(build_mdkmo(&one, &small_model_cfg(), 1).is_err());
    }

    #[test]
    fn build_preserves_body_parameters_bitwise() {
        let (inputs, labels) = multiview_inputs(10, 8);
        let tc = TrainingConfig {
            max_epochs: 3,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 5,
            spectral_k_neighbors: None,
        };
        let pre = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 2, 1).unwrap();
        let model = build_mdkmo(&pre, &small_model_cfg(), 2).unwrap();
        for (body, p) in model.bodies.iter().zip(&pre) {
            let mut expected = Vec::new();
            for b in &p.model.branches {
                expected.extend(b.params_flat());
            }
            assert_eq!(body.params_flat(), expected);
        }
        // Concat head width = sum of body widths.
        let cfg = ModelConfig {
            merge: Merge::Concat,
            ..small_model_cfg()
        };
        let model = build_mdkmo(&pre, &cfg, 2).unwrap();
        assert_eq!(model.global_head.input_width(), 16 * 3);
    }

    #[test]
    fn zero_finetune_epochs_is_identity() {
        let (inputs, labels) = multiview_inputs(10, 4);
        let tc = TrainingConfig {
            max_epochs: 3,
            finetune_epochs: 0,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 5,
            spectral_k_neighbors: None,
        };
        let pre = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 6, 1).unwrap();
        let model = build_mdkmo(&pre, &small_model_cfg(), 6).unwrap();
        let before = model.params_flat();
        let (tuned, log) = finetune(model, &labels, &tc, 6).unwrap();
        assert!(log.is_empty());
        assert_eq!(tuned.params_flat(), before);
    }

    #[test]
    fn predictions_are_probability_rows_and_replay_consistently() {
        let (inputs, labels) = multiview_inputs(10, 9);
        let tc = TrainingConfig {
            max_epochs: 4,
            finetune_epochs: 3,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 5,
            spectral_k_neighbors: None,
        };
        let pre = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 10, 1).unwrap();
        let model = build_mdkmo(&pre, &small_model_cfg(), 10).unwrap();
        let (model, _) = finetune(model, &labels, &tc, 10).unwrap();
        let idx: Vec<usize> = (0..labels.len()).collect();
        let p1 = model.predict_indices(&idx).unwrap();
        for i in 0..p1.rows() {
            let s: f64 = p1.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Replaying the stored training features gives the same output.
        let queries: Vec<MkQuery> = inputs
            .iter()
            .map(|inp| match inp {
                MkInput::Features { x, .. } => MkQuery::Features(x.clone()),
                _ => unreachable!(),
            })
            .collect();
        let p2 = model.predict(&queries).unwrap();
        for (a, b) in p1.data().iter().zip(p2.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kernel_order_does_not_change_sum_merge_predictions() {
        let (inputs, labels) = multiview_inputs(10, 14);
        let tc = TrainingConfig {
            max_epochs: 3,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 5,
            spectral_k_neighbors: None,
        };
        let pre_fwd = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 11, 1).unwrap();
        let (mut rev, _) = multiview_inputs(10, 14);
        rev.reverse();
        let pre_rev = pretrain_all(&rev, &labels, &small_model_cfg(), &tc, &emb, 11, 1).unwrap();
        let a = build_mdkmo(&pre_fwd, &small_model_cfg(), 11).unwrap();
        let b = build_mdkmo(&pre_rev, &small_model_cfg(), 11).unwrap();
        let idx: Vec<usize> = (0..20).collect();
        let pa = a.predict_indices(&idx).unwrap();
        let pb = b.predict_indices(&idx).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn model_round_trips_through_disk() {
        use tempfile::tempdir;
        let (inputs, labels) = multiview_inputs(8, 20);
        let tc = TrainingConfig {
            max_epochs: 2,
            ..fast_train_cfg()
        };
        let emb = EmbeddingConfig::Clustered {
            rank: 4,
            spectral_k_neighbors: None,
        };
        let pre = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 30, 1).unwrap();
        let model = build_mdkmo(&pre, &small_model_cfg(), 30).unwrap();
        let dir = tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let restored = MdkmoModel::load(dir.path()).unwrap();
        assert_eq!(restored.params_flat(), model.params_flat());
        let idx: Vec<usize> = (0..8).collect();
        assert_eq!(
            restored.predict_indices(&idx).unwrap(),
            model.predict_indices(&idx).unwrap()
        );
    }

    #[test]
    fn finetuning_improves_on_single_kernel_models() {
        // Each view only separates one binary partition of the 4 classes,
        // so a single-kernel model is capped near 50%; the fused model
        // sees all partitions.
        let (inputs, labels) = multiview_inputs(25, 42);
        let tc = fast_train_cfg();
        let emb = EmbeddingConfig::Clustered {
            rank: 8,
            spectral_k_neighbors: None,
        };
        let pre = pretrain_all(&inputs, &labels, &small_model_cfg(), &tc, &emb, 42, 1).unwrap();
        let idx: Vec<usize> = (0..labels.len()).collect();
        let mut best_single = 0.0f64;
        for p in &pre {
            let probs = p.model.predict_indices(&idx).unwrap();
            let pred = predict_labels(&probs);
            let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64
                / labels.len() as f64;
            best_single = best_single.max(acc);
        }
        let model = build_mdkmo(&pre, &small_model_cfg(), 42).unwrap();
        let (model, _) = finetune(model, &labels, &tc, 42).unwrap();
        let probs = model.predict_indices(&idx).unwrap();
        let pred = predict_labels(&probs);
        let fused_acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64
            / labels.len() as f64;
        assert!(
            fused_acc >= best_single + 0.05,
            "fused {} vs best single {}",
            fused_acc,
            best_single
        );
        assert!(fused_acc >= 0.9, "fused accuracy {}", fused_acc);
    }
}
