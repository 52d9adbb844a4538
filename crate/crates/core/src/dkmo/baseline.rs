//! Reference baselines: truncated-decomposition kernel features and a
//! linear softmax classifier.

use crate::data::TrainingConfig;
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{sym_eig, Matrix};
use crate::nn::{predict_labels, LayerSpec, Mode, Network};

use super::train::{train_network, EpochRecord};

/// Top-r spectral features U_r diag(sqrt(lambda_r)) of a kernel matrix,
/// so the feature Gram matrix is the best rank-r approximation of K.
/// Eigenvalues below zero (round-off) are clamped.
pub fn decomp_features(k: &KernelMatrix, r: usize) -> Result<Matrix> {
    let n = k.n();
    if r == 0 || r > n {
        return Err(Error::Rank(format!("rank {} out of range for n={}", r, n)));
    }
    let eig = sym_eig(k.values())?;
    let mut out = Matrix::zeros(n, r);
    for j in 0..r {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            out.set(i, j, eig.eigenvectors.get(i, j) * s);
        }
    }
    Ok(out)
}

/// Top-r spectral features of a training kernel together with the
/// projection that embeds out-of-sample points. For a query with kernel
/// rows K_q against the training set, its features are K_q * map.
#[derive(Debug)]
pub struct DecompEmbedding {
    pub features: Matrix,
    /// n x r projection U_r diag(1/sqrt(lambda_r)).
    pub map: Matrix,
}

/// Like [`decomp_features`] but also returns the out-of-sample map.
/// The rank is truncated to the eigenvalues large enough to invert
/// stably, so the result may be narrower than requested.
pub fn decomp_embedding(k: &KernelMatrix, r: usize) -> Result<DecompEmbedding> {
    let n = k.n();
    if r == 0 || r > n {
        return Err(Error::Rank(format!("rank {} out of range for n={}", r, n)));
    }
    let eig = sym_eig(k.values())?;
    let floor = eig.eigenvalues[0].abs().max(1.0) * 1e-12;
    let kept = eig.eigenvalues[..r].iter().take_while(|&&l| l > floor).count();
    if kept == 0 {
        return Err(Error::Rank(
            "kernel has no eigenvalue above the inversion floor".into(),
        ));
    }
    let mut features = Matrix::zeros(n, kept);
    let mut map = Matrix::zeros(n, kept);
    for j in 0..kept {
        let s = eig.eigenvalues[j].sqrt();
        for i in 0..n {
            features.set(i, j, eig.eigenvectors.get(i, j) * s);
            map.set(i, j, eig.eigenvectors.get(i, j) / s);
        }
    }
    Ok(DecompEmbedding { features, map })
}

#[derive(Debug)]
pub struct BaselineResult {
    pub network: Network,
    pub log: Vec<EpochRecord>,
    /// Eval-mode accuracy over the full provided set.
    pub accuracy: f64,
}

/// Multinomial logistic regression: a single dense layer trained with
/// the shared training loop.
pub fn softmax_baseline(
    features: &Matrix,
    labels: &[usize],
    train_cfg: &TrainingConfig,
    seed: u64,
) -> Result<BaselineResult> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    if n_classes < 2 {
        return Err(Error::Label("need at least 2 classes".into()));
    }
    let net = Network::new(
        features.cols(),
        &[LayerSpec::Dense { width: n_classes }],
        seed,
    )?;
    let (net, log) = train_network(net, features, labels, train_cfg, seed)?;
    let (logits, _) = net.forward(features, Mode::Eval, None)?;
    let pred = predict_labels(&logits);
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(BaselineResult {
        network: net,
        log,
        accuracy: correct as f64 / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth;
    use crate::kernels::rbf_kernel;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn baseline_cfg() -> TrainingConfig {
        TrainingConfig {
            learning_rate: 0.02,
            batch_size: 32,
            max_epochs: 150,
            patience: 30,
            val_fraction: 0.1,
            finetune_epochs: 0,
        }
    }

    #[test]
    fn identity_kernel_features_are_orthonormal() {
        let k = KernelMatrix::new(Matrix::identity(6), "id").unwrap();
        let f = decomp_features(&k, 6).unwrap();
        let gram = f.matmul_transposed(&f);
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram.get(i, j) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn exact_rank_recovers_kernel() {
        // Rank-2 PSD kernel: G Gᵀ for a random 7x2 G.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Matrix::zeros(7, 2);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let k = KernelMatrix::new(g.matmul_transposed(&g), "rank2").unwrap();
        let f = decomp_features(&k, 2).unwrap();
        let gram = f.matmul_transposed(&f);
        let err = gram.sub(k.values()).frobenius_norm();
        assert!(err < 1e-8, "reconstruction error {}", err);
    }

    #[test]
    fn truncated_features_give_best_rank_r_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Matrix::zeros(12, 12);
        for v in g.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let k = KernelMatrix::new(g.matmul_transposed(&g), "psd").unwrap();
        let f = decomp_features(&k, 5).unwrap();
        let gram = f.matmul_transposed(&f);
        // Oracle: truncate the full eigendecomposition directly.
        let eig = sym_eig(k.values()).unwrap();
        let mut oracle = Matrix::zeros(12, 12);
        for j in 0..5 {
            for a in 0..12 {
                for b in 0..12 {
                    let v = oracle.get(a, b)
                        + eig.eigenvalues[j] * eig.eigenvectors.get(a, j) * eig.eigenvectors.get(b, j);
                    oracle.set(a, b, v);
                }
            }
        }
        let err = gram.sub(&oracle).frobenius_norm();
        assert!(err < 1e-8, "gap to optimal rank-5 gram {}", err);
    }

    #[test]
    fn rank_out_of_range_rejected() {
        let k = KernelMatrix::new(Matrix::identity(4), "id").unwrap();
        assert!(decomp_features(&k, 0).is_err());
        assert!(decomp_features(&k, 5).is_err());
    }

    #[test]
    fn separable_blobs_classified_linearly() {
        let (x, labels) = synth::blobs(2, 60, 2, 3.0, 0.3, 7).unwrap();
        let r = softmax_baseline(&x, &labels, &baseline_cfg(), 7).unwrap();
        assert!(r.accuracy >= 0.99, "accuracy {}", r.accuracy);
    }

    #[test]
    fn constant_features_hit_majority_rate() {
        let mut labels = vec![0usize; 70];
        labels.extend(std::iter::repeat(1).take(30));
        let x = Matrix::from_vec(100, 2, vec![1.0; 200]).unwrap();
        let r = softmax_baseline(&x, &labels, &baseline_cfg(), 11).unwrap();
        assert!((r.accuracy - 0.7).abs() <= 0.02, "accuracy {}", r.accuracy);
    }

    #[test]
    fn rings_are_not_linearly_separable() {
        let (x, labels) = synth::rings(200, &[1.0, 2.0], 0.1, 13).unwrap();
        let r = softmax_baseline(&x, &labels, &baseline_cfg(), 13).unwrap();
        assert!(r.accuracy < 0.7, "linear accuracy {}", r.accuracy);
    }

    #[test]
    fn out_of_sample_map_reproduces_training_features() {
        let (x, _) = synth::blobs(3, 20, 2, 3.0, 0.3, 19).unwrap();
        let k = rbf_kernel(&x, 0.5, "blobs").unwrap();
        let emb = decomp_embedding(&k, 8).unwrap();
        // Training rows are their own kernel queries: K * map == features.
        let replay = k.values().matmul(&emb.map);
        for i in 0..replay.rows() {
            for j in 0..replay.cols() {
                assert!(
                    (replay.get(i, j) - emb.features.get(i, j)).abs() < 1e-8,
                    "mismatch at ({}, {})",
                    i,
                    j
                );
            }
        }
    }

    #[test]
    fn decomp_features_match_raw_features_on_blobs() {
        let (x, labels) = synth::blobs(2, 50, 2, 3.0, 0.3, 17).unwrap();
        let raw = softmax_baseline(&x, &labels, &baseline_cfg(), 17).unwrap();
        let k = rbf_kernel(&x, 0.5, "blobs").unwrap();
        let f = decomp_features(&k, 10).unwrap();
        let dec = softmax_baseline(&f, &labels, &baseline_cfg(), 17).unwrap();
        assert!(
            dec.accuracy >= raw.accuracy - 0.02,
            "decomp {} vs raw {}",
            dec.accuracy,
            raw.accuracy
        );
    }
}
