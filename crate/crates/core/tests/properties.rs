//! Randomized invariant checks over the public API.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dkm_core::data::{make_split, Merge, SplitSpec};
use dkm_core::dkmo::{fuse, kernel_dropout_mask};
use dkm_core::kernels::{normalize_kernel, KernelMatrix};
use dkm_core::linalg::psd_clip;
use dkm_core::nn::{softmax, Mode};
use dkm_core::Matrix;

fn random_psd(n: usize, seed: u64) -> Matrix {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Matrix::zeros(n, n);
    for v in g.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    // G Gᵀ + I keeps the diagonal strictly positive.
    let mut k = g.matmul_transposed(&g);
    for i in 0..n {
        k.set(i, i, k.get(i, i) + 1.0);
    }
    k
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalize_is_idempotent_with_unit_diagonal(seed in 0u64..1000, n in 2usize..12) {
        let k = KernelMatrix::new(random_psd(n, seed), "k").unwrap();
        let once = normalize_kernel(&k).unwrap();
        for i in 0..n {
            prop_assert!((once.values().get(i, i) - 1.0).abs() < 1e-12);
        }
        let twice = normalize_kernel(&once).unwrap();
        for (a, b) in once.values().data().iter().zip(twice.values().data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn psd_clip_is_idempotent(seed in 0u64..1000, n in 2usize..10) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        let once = psd_clip(&m).unwrap();
        let twice = psd_clip(&once).unwrap();
        let diff = once.sub(&twice).frobenius_norm();
        prop_assert!(diff < 1e-10, "clip drift {}", diff);
    }

    #[test]
    fn splits_are_disjoint_and_covering(
        seed in 0u64..1000,
        n_per_class in 3usize..30,
        classes in 2usize..5,
        frac in 0.1f64..0.9,
    ) {
        let labels: Vec<usize> = (0..classes * n_per_class).map(|i| i % classes).collect();
        let s = make_split(&labels, SplitSpec::Fraction(frac), true, seed).unwrap();
        prop_assert!(s.is_disjoint_covering(labels.len()));
    }

    #[test]
    fn per_class_splits_hit_exact_counts(
        seed in 0u64..1000,
        n_per_class in 5usize..25,
        classes in 2usize..5,
    ) {
        let labels: Vec<usize> = (0..classes * n_per_class).map(|i| i % classes).collect();
        let k = n_per_class / 2;
        let s = make_split(&labels, SplitSpec::PerClass(k), true, seed).unwrap();
        prop_assert!(s.is_disjoint_covering(labels.len()));
        for c in 0..classes {
            let count = s.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert_eq!(count, k);
        }
    }

    #[test]
    fn dropout_masks_are_never_empty(seed in 0u64..1000, p in 1usize..10, rate in 0.0f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let mask = kernel_dropout_mask(p, rate, &mut rng);
            prop_assert_eq!(mask.len(), p);
            prop_assert!(mask.iter().any(|&m| m));
        }
    }

    #[test]
    fn concat_fusion_width_is_mask_independent(seed in 0u64..1000, p in 2usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<Matrix> = (0..p)
            .map(|_| {
                let mut m = Matrix::zeros(3, 4);
                for v in m.data_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                m
            })
            .collect();
        let mask = kernel_dropout_mask(p, 0.5, &mut rng);
        let fused = fuse(&h, &mask, Merge::Concat, Mode::Train).unwrap();
        prop_assert_eq!(fused.cols(), 4 * p);
    }

    #[test]
    fn softmax_rows_are_simplex_points(seed in 0u64..1000, rows in 1usize..8, cols in 2usize..8) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-30.0..30.0);
        }
        let p = softmax(&m);
        for i in 0..rows {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
