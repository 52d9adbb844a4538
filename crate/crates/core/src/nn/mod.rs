//! Feed-forward networks: dense / batch norm / relu / dropout layers,
//! softmax cross-entropy, Adam, finite-difference gradient validation,
//! and a binary checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod network;

pub use adam::{Adam, DEFAULT_LEARNING_RATE};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{
    check_gradient, compare_gradients, finite_difference_gradient, GradCheckReport,
};
pub use loss::{predict_labels, softmax, softmax_cross_entropy};
pub use network::{
    hidden_block, Cache, LayerSpec, Mode, Network, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn empty_network_is_identity() {
        let net = Network::new(3, &[], 0).unwrap();
        let x = random_batch(4, 3, 1);
        let (y, _) = net.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn uniform_logits_give_log_class_count_loss() {
        let logits = Matrix::zeros(5, 4);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 2, 3, 0]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let logits = random_batch(6, 5, 2);
        let p = softmax(&logits);
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(p.row(i).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let logits = Matrix::zeros(2, 3);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
    }

    #[test]
    fn single_dense_layer_gradient_matches_closed_form() {
        let net = Network::new(3, &[LayerSpec::Dense { width: 2 }], 11).unwrap();
        let x = random_batch(5, 3, 3);
        let labels = vec![0usize, 1, 0, 1, 1];
        let (logits, cache) = net.forward(&x, Mode::Train, None).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (grads, dx) = net.backward(&cache, &dlogits).unwrap();
        // dW = xᵀ · dlogits, db = column sums, dx = dlogits · Wᵀ.
        let dw = x.transposed_matmul(&dlogits);
        for (g, e) in grads.iter().take(6).zip(dw.data()) {
            assert!((g - e).abs() < 1e-14);
        }
        let mut db = [0.0f64; 2];
        for i in 0..5 {
            db[0] += dlogits.get(i, 0);
            db[1] += dlogits.get(i, 1);
        }
        assert!((grads[6] - db[0]).abs() < 1e-14);
        assert!((grads[7] - db[1]).abs() < 1e-14);
        assert_eq!(dx.rows(), 5);
        assert_eq!(dx.cols(), 3);
    }

    /// Analytic gradients against central differences for a deep block
    /// with batch norm and dropout. Dropout masks are frozen by reseeding
    /// the rng identically for every loss evaluation.
    #[test]
    fn finite_differences_agree_with_backprop() {
        let mut specs = hidden_block(8, 0.3);
        specs.extend(hidden_block(6, 0.3));
        specs.push(LayerSpec::Dense { width: 3 });
        let net = Network::new(5, &specs, 42).unwrap();
        let x = random_batch(12, 5, 7);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();

        let params = net.params_flat();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (logits, cache) = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (analytic, _) = net.backward(&cache, &dlogits).unwrap();

        let loss_at = |p: &[f64]| {
            let mut probe = net.clone();
            probe.set_params_flat(p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let (logits, _) = probe.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        };
        let report = check_gradient(loss_at, &params, &analytic, 1e-6);
        assert!(
            report.passes(1e-4),
            "max deviation {} at parameter {}",
            report.max_deviation,
            report.worst_index
        );
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let net = Network::new(4, &[LayerSpec::BatchNorm], 0).unwrap();
        let x = random_batch(64, 4, 5);
        let (y, _) = net.forward(&x, Mode::Train, None).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..64).map(|i| y.get(i, j)).collect();
            let mean: f64 = col.iter().sum::<f64>() / 64.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut net = Network::new(2, &[LayerSpec::BatchNorm], 0).unwrap();
        let x = random_batch(32, 2, 9);
        // Fresh running stats are mean 0 / var 1, so eval is a near-identity.
        let (y0, _) = net.forward(&x, Mode::Eval, None).unwrap();
        for (a, b) in y0.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        let (_, cache) = net.forward(&x, Mode::Train, None).unwrap();
        net.update_running_stats(&cache);
        let (y1, _) = net.forward(&x, Mode::Eval, None).unwrap();
        assert_ne!(y0, y1);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let net = Network::new(1, &[LayerSpec::Dropout { rate: 0.4 }], 0).unwrap();
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let trials = 20_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let (y, _) = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
            sum += y.get(0, 0);
        }
        let mean = sum / trials as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {}", mean);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = vec![1.0];
        let mut opt = Adam::new(1, 0.001);
        opt.step(&mut params, &[2.0]).unwrap();
        // Bias-corrected first step is lr * g / (|g| + eps) ≈ lr.
        assert!((params[0] - (1.0 - 0.001)).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut params = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            opt.step(&mut params, &grads).unwrap();
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3));
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut params = vec![1.0];
        let mut opt = Adam::new(1, 0.001);
        assert!(matches!(
            opt.step(&mut params, &[f64::NAN]),
            Err(crate::Error::Divergence(_))
        ));
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let mut specs = hidden_block(6, 0.5);
        specs.push(LayerSpec::Dense { width: 3 });
        let net = Network::new(4, &specs, 17).unwrap();
        let params = net.params_flat();
        assert_eq!(params.len(), net.param_count());
        let mut other = Network::new(4, &specs, 18).unwrap();
        other.set_params_flat(&params).unwrap();
        assert_eq!(other.params_flat(), params);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        use tempfile::tempdir;
        let mut specs = hidden_block(8, 0.5);
        specs.push(LayerSpec::Dense { width: 3 });
        let mut net = Network::new(5, &specs, 21).unwrap();
        // Touch running stats and parameters so nothing is at its default.
        let x = random_batch(16, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (logits, cache) = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
        net.update_running_stats(&cache);
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
        let (grads, _) = net.backward(&cache, &dlogits).unwrap();
        let mut params = net.params_flat();
        let mut opt = Adam::new(params.len(), 0.001);
        opt.step(&mut params, &grads).unwrap();
        net.set_params_flat(&params).unwrap();

        let dir = tempdir().unwrap();
        let path = dir.path().join("net.dkmc");
        save_checkpoint(&path, &net).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored, net);
        // Identical forward behavior in both modes.
        let (a, _) = net.forward(&x, Mode::Eval, None).unwrap();
        let (b, _) = restored.forward(&x, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        use tempfile::tempdir;
        let dir = tempdir().unwrap();
        let path = dir.path().join("bogus.dkmc");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let mut specs = hidden_block(8, 0.5);
        specs.push(LayerSpec::Dense { width: 2 });
        let net = Network::new(3, &specs, 33).unwrap();
        let x = random_batch(10, 3, 6);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let (a, _) = net.forward(&x, Mode::Train, Some(&mut r1)).unwrap();
        let (b, _) = net.forward(&x, Mode::Train, Some(&mut r2)).unwrap();
        assert_eq!(a, b);
    }
}
