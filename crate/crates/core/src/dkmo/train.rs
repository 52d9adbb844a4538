//! Training loops: the multi-branch model trainer and a generic
//! single-network trainer shared by the baselines.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_split, ModelConfig, SplitSpec, TrainingConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{predict_labels, softmax_cross_entropy, Adam, Mode, Network};
use crate::nystroem::EmbeddingEnsemble;
use crate::util::derive_seed;

use super::DkmoModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

// Seed streams so shuffling, branch masks, and activation dropout draw
// from independent generators.
const STREAM_VAL_SPLIT: u64 = 0x5113;
const STREAM_SHUFFLE: u64 = 0x54FF;
const STREAM_MASK: u64 = 0x3A5C;
const STREAM_DROPOUT: u64 = 0xD409;

fn holdout(labels: &[usize], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if val_fraction <= 0.0 {
        return Ok(((0..labels.len()).collect(), Vec::new()));
    }
    let split = make_split(
        labels,
        SplitSpec::Fraction(1.0 - val_fraction),
        true,
        derive_seed(seed, STREAM_VAL_SPLIT),
    )?;
    Ok((split.train, split.test))
}

fn subset(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

fn eval_loss_acc(logits: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
    let (loss, _) = softmax_cross_entropy(logits, labels)?;
    let pred = predict_labels(logits);
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

/// Trains a multi-branch model end to end on the stored ensemble
/// embeddings. Holds out `val_fraction` of the samples (stratified) for
/// early stopping with the configured patience; restores the best
/// validation-loss parameters on exit. Deterministic per seed.
pub fn dkmo_train(
    ensemble: EmbeddingEnsemble,
    labels: &[usize],
    model_cfg: &ModelConfig,
    train_cfg: &TrainingConfig,
    seed: u64,
) -> Result<(DkmoModel, Vec<EpochRecord>)> {
    if ensemble.n() != labels.len() {
        return Err(Error::Shape(format!(
            "ensemble over {} samples but {} labels",
            ensemble.n(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::Label("need at least 2 classes".into()));
    }
    let inputs: Vec<Matrix> = ensemble.members().iter().map(|m| m.values.clone()).collect();
    let mut model = DkmoModel::new(ensemble, n_classes, model_cfg, seed)?;
    let p = model.branches.len();

    let (train_idx, val_idx) = holdout(labels, train_cfg.val_fraction, seed)?;
    let train_labels = subset(labels, &train_idx);
    let val_labels = subset(labels, &val_idx);

    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE));
    let mut rng_mask = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_MASK));
    let mut rng_dropout = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT));

    let mut params = model.params_flat();
    let mut opt = Adam::new(params.len(), train_cfg.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(f64, DkmoModel)> = None;
    let mut epochs_since_best = 0usize;

    let select = |idx: &[usize]| -> Vec<Matrix> {
        inputs.iter().map(|m| m.select_rows(idx)).collect()
    };

    for epoch in 0..train_cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_shuffle);
        for batch in order.chunks(train_cfg.batch_size) {
            let batch_inputs = select(batch);
            let batch_labels = subset(labels, batch);
            let mask = super::kernel_dropout_mask(p, model.kernel_dropout, &mut rng_mask);
            let (logits, trace) = model.forward_embedded(
                &batch_inputs,
                Mode::Train,
                Some(&mut rng_dropout),
                Some(mask),
            )?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {}",
                    epoch
                )));
            }
            let grads = model.backward(&trace, &dlogits)?;
            opt.step(&mut params, &grads)?;
            model.set_params_flat(&params)?;
            model.update_running_stats(&trace);
        }

        let (train_logits, _) =
            model.forward_embedded(&select(&train_idx), Mode::Eval, None, None)?;
        let (train_loss, train_acc) = eval_loss_acc(&train_logits, &train_labels)?;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (train_loss, train_acc)
        } else {
            let (val_logits, _) =
                model.forward_embedded(&select(&val_idx), Mode::Eval, None, None)?;
            eval_loss_acc(&val_logits, &val_labels)?
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

/// Trains a plain network on a feature matrix with the same holdout /
/// early-stop rules as `dkmo_train`.
pub fn train_network(
    mut net: Network,
    x: &Matrix,
    labels: &[usize],
    train_cfg: &TrainingConfig,
    seed: u64,
) -> Result<(Network, Vec<EpochRecord>)> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    let (train_idx, val_idx) = holdout(labels, train_cfg.val_fraction, seed)?;
    let train_labels = subset(labels, &train_idx);
    let val_labels = subset(labels, &val_idx);

    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE));
    let mut rng_dropout = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_DROPOUT));

    let mut params = net.params_flat();
    let mut opt = Adam::new(params.len(), train_cfg.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(f64, Network)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_shuffle);
        for batch in order.chunks(train_cfg.batch_size) {
            let bx = x.select_rows(batch);
            let by = subset(labels, batch);
            let (logits, cache) = net.forward(&bx, Mode::Train, Some(&mut rng_dropout))?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &by)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {}",
                    epoch
                )));
            }
            let (grads, _) = net.backward(&cache, &dlogits)?;
            opt.step(&mut params, &grads)?;
            net.set_params_flat(&params)?;
            net.update_running_stats(&cache);
        }

        let (train_logits, _) = net.forward(&x.select_rows(&train_idx), Mode::Eval, None)?;
        let (train_loss, train_acc) = eval_loss_acc(&train_logits, &train_labels)?;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (train_loss, train_acc)
        } else {
            let (val_logits, _) = net.forward(&x.select_rows(&val_idx), Mode::Eval, None)?;
            eval_loss_acc(&val_logits, &val_labels)?
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });

        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, net.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= train_cfg.patience {
                break;
            }
        }
    }
    let net = best.map(|(_, n)| n).unwrap_or(net);
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth, Merge};
    use crate::kernels::rbf_kernel;
    use crate::nystroem::{clustered_ensemble, FeatureKernel};

    fn small_model_cfg(merge: Merge, kernel_dropout: f64) -> ModelConfig {
        ModelConfig {
            hidden_widths: vec![16, 16],
            dropout: 0.2,
            kernel_dropout,
            merge,
            post_merge_widths: Vec::new(),
        }
    }

    fn fast_train_cfg(max_epochs: usize) -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.005,
            batch_size: 32,
            max_epochs,
            patience: 20,
            val_fraction: 0.1,
            finetune_epochs: 20,
        }
    }

    #[test]
    fn separable_blobs_reach_high_train_accuracy() {
        let (x, labels) = synth::blobs(2, 60, 2, 3.0, 0.3, 5).unwrap();
        let ensemble = clustered_ensemble(
            &x,
            10,
            FeatureKernel::Rbf { gamma: 0.5 },
            "blobs-rbf",
            5,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(ensemble.len(), 5);
        let (model, log) = dkmo_train(
            ensemble,
            &labels,
            &small_model_cfg(Merge::Sum, 0.5),
            &fast_train_cfg(100),
            5,
        )
        .unwrap();
        let final_train_acc = log.last().unwrap().train_acc;
        assert!(
            final_train_acc >= 0.99,
            "train accuracy {} after {} epochs",
            final_train_acc,
            log.len()
        );
        let probs = model.predict_features(&x).unwrap();
        let pred = predict_labels(&probs);
        let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64
            / labels.len() as f64;
        assert!(acc >= 0.95, "full-set accuracy {}", acc);
    }

    #[test]
    fn shuffled_labels_memorize_but_do_not_generalize() {
        let (x, labels) = synth::blobs(2, 25, 2, 3.0, 0.3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        // A very local kernel and a generous landmark budget give the
        // model enough capacity to shatter the random labels.
        let ensemble = clustered_ensemble(
            &x,
            25,
            FeatureKernel::Rbf { gamma: 8.0 },
            "blobs-rbf",
            8,
            &Default::default(),
        )
        .unwrap();
        let cfg = ModelConfig {
            hidden_widths: vec![48],
            dropout: 0.0,
            kernel_dropout: 0.0,
            merge: Merge::Concat,
            post_merge_widths: Vec::new(),
        };
        let tc = TrainingConfig {
            learning_rate: 0.01,
            batch_size: 16,
            max_epochs: 200,
            patience: 200,
            val_fraction: 0.1,
            finetune_epochs: 20,
        };
        let (_, log) = dkmo_train(ensemble, &shuffled, &cfg, &tc, 8).unwrap();
        let last = log.last().unwrap();
        assert!(last.train_acc >= 0.9, "memorization accuracy {}", last.train_acc);
        // Validation stays near chance: memorized noise carries no signal.
        assert!(
            last.val_acc <= last.train_acc - 0.2,
            "val {} vs train {}",
            last.val_acc,
            last.train_acc
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (x, labels) = synth::blobs(3, 20, 2, 3.0, 0.3, 4).unwrap();
        let run = || {
            let ensemble = clustered_ensemble(
                &x,
                8,
                FeatureKernel::Rbf { gamma: 0.5 },
                "blobs-rbf",
                4,
                &Default::default(),
            )
            .unwrap();
            let (model, log) = dkmo_train(
                ensemble,
                &labels,
                &small_model_cfg(Merge::Sum, 0.5),
                &fast_train_cfg(10),
                4,
            )
            .unwrap();
            (model.params_flat(), log.len())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn mismatched_label_count_rejected() {
        let (x, labels) = synth::blobs(2, 10, 2, 3.0, 0.3, 1).unwrap();
        let ensemble = clustered_ensemble(
            &x,
            4,
            FeatureKernel::Rbf { gamma: 0.5 },
            "k",
            1,
            &Default::default(),
        )
        .unwrap();
        assert!(dkmo_train(
            ensemble,
            &labels[..labels.len() - 1],
            &small_model_cfg(Merge::Sum, 0.5),
            &fast_train_cfg(5),
            1,
        )
        .is_err());
    }

    #[test]
    fn conventional_ensemble_trains_from_kernel_rows() {
        // Out-of-sample predictions through stored kernel columns.
        let (x, labels) = synth::blobs(2, 40, 2, 3.0, 0.3, 6).unwrap();
        let k = rbf_kernel(&x, 0.5, "blobs").unwrap();
        let split = make_split(&labels, SplitSpec::Fraction(0.75), true, 6).unwrap();
        let ktrain = crate::kernels::KernelMatrix::new(
            k.values().select_square(&split.train),
            "blobs-train",
        )
        .unwrap();
        let train_labels = subset(&labels, &split.train);
        let ensemble = crate::nystroem::conventional_ensemble(&ktrain, 4, 12, 6, 6).unwrap();
        let (model, _) = dkmo_train(
            ensemble,
            &train_labels,
            &small_model_cfg(Merge::Sum, 0.5),
            &fast_train_cfg(60),
            6,
        )
        .unwrap();
        // Kernel rows between test points and the training set.
        let xtest = x.select_rows(&split.test);
        let xtrain = x.select_rows(&split.train);
        let rows = crate::kernels::rbf_cross(&xtest, &xtrain, 0.5).unwrap();
        let probs = model.predict_kernel_rows(&rows).unwrap();
        let pred = predict_labels(&probs);
        let test_labels = subset(&labels, &split.test);
        let acc = pred.iter().zip(&test_labels).filter(|(a, b)| a == b).count() as f64
            / test_labels.len() as f64;
        assert!(acc >= 0.9, "test accuracy {}", acc);
    }
}
