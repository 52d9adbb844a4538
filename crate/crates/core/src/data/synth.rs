//! Synthetic datasets with known generative structure, used throughout
//! the test suites and runnable from configs.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Gaussian blobs, one isotropic cluster per class. Class centers sit on
/// a circle of radius `separation` in the first two dimensions, so with
/// separation well above sigma the classes are essentially disjoint.
pub fn blobs(
    classes: usize,
    n_per_class: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> Result<(Matrix, Vec<usize>)> {
    if classes < 2 || n_per_class == 0 || dim < 2 {
        return Err(Error::Input(
            "blobs need >= 2 classes, >= 1 sample per class, dim >= 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * n_per_class;
    let mut x = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let center = [separation * angle.cos(), separation * angle.sin()];
        for s in 0..n_per_class {
            let i = c * n_per_class + s;
            for j in 0..dim {
                let noise: f64 = rng.sample(StandardNormal);
                let base = if j < 2 { center[j] } else { 0.0 };
                x.set(i, j, base + sigma * noise);
            }
            labels.push(c);
            let _ = s;
        }
    }
    Ok((x, labels))
}

/// Concentric 2D rings, one radius per class. Not linearly separable.
pub fn rings(
    n_per_ring: usize,
    radii: &[f64],
    noise: f64,
    seed: u64,
) -> Result<(Matrix, Vec<usize>)> {
    if radii.len() < 2 || n_per_ring == 0 {
        return Err(Error::Input("rings need >= 2 radii and >= 1 sample per ring".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = radii.len() * n_per_ring;
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for (c, &r) in radii.iter().enumerate() {
        for s in 0..n_per_ring {
            let i = c * n_per_ring + s;
            let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let dr: f64 = rng.sample(StandardNormal);
            let radius = r + noise * dr;
            x.set(i, 0, radius * theta.cos());
            x.set(i, 1, radius * theta.sin());
            labels.push(c);
        }
    }
    Ok((x, labels))
}

/// Four classes, three 2D views. Each view reveals only one binary
/// partition of the classes — view 0 splits {0,1}|{2,3}, view 1 splits
/// {0,2}|{1,3}, view 2 splits {0,3}|{1,2} — so no single view can tell
/// all four classes apart (per-view 4-way accuracy tops out near 0.5),
/// while any two of the three views jointly determine the class.
pub fn multiview_complementary(
    n_per_class: usize,
    separation: f64,
    sigma: f64,
    noise_dim: usize,
    seed: u64,
) -> Result<(Vec<Matrix>, Vec<usize>)> {
    if n_per_class == 0 {
        return Err(Error::Input("need >= 1 sample per class".into()));
    }
    const PARTITIONS: [[usize; 4]; 3] = [
        [0, 0, 1, 1], // view 0: class pairs {0,1} vs {2,3}
        [0, 1, 0, 1], // view 1: {0,2} vs {1,3}
        [0, 1, 1, 0], // view 2: {0,3} vs {1,2}
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 4 * n_per_class;
    // Nuisance coordinates carry no class signal; their spread is tied to
    // the separation so they genuinely dilute the informative axis.
    let noise_scale = separation / 2.0;
    let mut views = vec![Matrix::zeros(n, 2 + noise_dim); 3];
    let mut labels = Vec::with_capacity(n);
    for c in 0..4 {
        for s in 0..n_per_class {
            let i = c * n_per_class + s;
            for (v, partition) in PARTITIONS.iter().enumerate() {
                let side = if partition[c] == 0 { -1.0 } else { 1.0 };
                let n0: f64 = rng.sample(StandardNormal);
                let n1: f64 = rng.sample(StandardNormal);
                views[v].set(i, 0, side * separation + sigma * n0);
                views[v].set(i, 1, sigma * n1);
                for j in 0..noise_dim {
                    let nj: f64 = rng.sample(StandardNormal);
                    views[v].set(i, 2 + j, noise_scale * nj);
                }
            }
            labels.push(c);
            let _ = s;
        }
    }
    Ok((views, labels))
}
