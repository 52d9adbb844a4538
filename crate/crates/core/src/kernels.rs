//! Kernel matrix construction, validation, normalization and combination.

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, sym_eig, Matrix};

/// n x n symmetric similarity table.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    values: Matrix,
    name: String,
}

impl KernelMatrix {
    /// Validates symmetry (within 1e-8) and a strictly positive diagonal.
    pub fn new(values: Matrix, name: impl Into<String>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Shape(format!(
                "kernel must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Input("kernel contains non-finite values".into()));
        }
        let scale = values.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if values.max_asymmetry() > 1e-8 * scale {
            return Err(Error::Symmetry(format!(
                "kernel asymmetry {:.3e}",
                values.max_asymmetry()
            )));
        }
        for i in 0..values.rows() {
            if values.get(i, i) <= 0.0 {
                return Err(Error::Input(format!(
                    "kernel diagonal entry {} is {} (must be > 0)",
                    i,
                    values.get(i, i)
                )));
            }
        }
        Ok(KernelMatrix {
            values: values.symmetrize(),
            name: name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// n x n non-negative distance table with zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    values: Matrix,
}

impl DistanceMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Shape(format!(
                "distance matrix must be square, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.all_finite() {
            return Err(Error::Input("distance matrix contains non-finite values".into()));
        }
        let scale = values.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        if values.max_asymmetry() > 1e-8 * scale {
            return Err(Error::Symmetry(format!(
                "distance asymmetry {:.3e}",
                values.max_asymmetry()
            )));
        }
        let mut values = values.symmetrize();
        for i in 0..values.rows() {
            if values.get(i, i).abs() > 1e-12 {
                return Err(Error::Input(format!(
                    "distance diagonal entry {} is {} (must be 0)",
                    i,
                    values.get(i, i)
                )));
            }
            values.set(i, i, 0.0);
        }
        if values.data().iter().any(|v| *v < 0.0) {
            return Err(Error::Input("distance matrix has negative entries".into()));
        }
        Ok(DistanceMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }
}

/// exp(-gamma * ||x_i - x_j||^2) Gram matrix over the rows of `x`.
pub fn rbf_kernel(x: &Matrix, gamma: f64, name: impl Into<String>) -> Result<KernelMatrix> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Input(format!("gamma must be positive, got {}", gamma)));
    }
    if !x.all_finite() {
        return Err(Error::Input("feature matrix contains non-finite values".into()));
    }
    let n = x.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, 1.0);
        for j in (i + 1)..n {
            let v = (-gamma * squared_distance(x.row(i), x.row(j))).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    KernelMatrix::new(k, name)
}

/// Kernel row block between new samples and reference points:
/// out[i][j] = exp(-gamma * ||x_i - z_j||^2).
pub fn rbf_cross(x: &Matrix, z: &Matrix, gamma: f64) -> Result<Matrix> {
    if x.cols() != z.cols() {
        return Err(Error::Shape(format!(
            "feature dimension mismatch: {} vs {}",
            x.cols(),
            z.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), z.rows());
    for i in 0..x.rows() {
        for j in 0..z.rows() {
            out.set(i, j, (-gamma * squared_distance(x.row(i), z.row(j))).exp());
        }
    }
    Ok(out)
}

/// K_ij = exp(-gamma * l_ij), the exponential kernel over a precomputed
/// distance table.
pub fn exp_distance_kernel(
    d: &DistanceMatrix,
    gamma: f64,
    name: impl Into<String>,
) -> Result<KernelMatrix> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::Input(format!("gamma must be positive, got {}", gamma)));
    }
    let n = d.n();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k.set(i, j, (-gamma * d.values().get(i, j)).exp());
        }
    }
    KernelMatrix::new(k, name)
}

/// Inverse of the mean off-diagonal distance. The diagonal is excluded:
/// self-distances are identically zero and would bias the estimate.
pub fn estimate_gamma(d: &DistanceMatrix) -> Result<f64> {
    let n = d.n();
    if n < 2 {
        return Err(Error::Degenerate("need at least two samples".into()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += d.values().get(i, j);
            }
        }
    }
    let mean = sum / (n * (n - 1)) as f64;
    if mean <= 0.0 {
        return Err(Error::Degenerate("all pairwise distances are zero".into()));
    }
    Ok(1.0 / mean)
}

/// Bandwidth estimate for feature rows: inverse of the mean pairwise
/// squared distance.
pub fn estimate_gamma_features(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = crate::linalg::squared_distance(x.row(i), x.row(j));
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    estimate_gamma(&DistanceMatrix::new(d)?)
}

/// K_ij / sqrt(K_ii K_jj); unit diagonal, PSD preserved.
pub fn normalize_kernel(k: &KernelMatrix) -> Result<KernelMatrix> {
    let n = k.n();
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let d = k.values().get(i, i);
        if d <= 0.0 {
            return Err(Error::Input(format!(
                "cannot normalize: diagonal entry {} is {}",
                i, d
            )));
        }
        scale.push(1.0 / d.sqrt());
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, k.values().get(i, j) * scale[i] * scale[j]);
        }
        out.set(i, i, 1.0);
    }
    KernelMatrix::new(out, k.name().to_string())
}

/// Entrywise mean of same-sized kernels.
pub fn uniform_average(kernels: &[KernelMatrix], name: impl Into<String>) -> Result<KernelMatrix> {
    let first = kernels
        .first()
        .ok_or_else(|| Error::Input("uniform_average needs at least one kernel".into()))?;
    let n = first.n();
    let mut sum = Matrix::zeros(n, n);
    for k in kernels {
        if k.n() != n {
            return Err(Error::Shape(format!(
                "kernel {} has size {} but expected {}",
                k.name(),
                k.n(),
                n
            )));
        }
        sum = sum.add(k.values());
    }
    KernelMatrix::new(sum.scale(1.0 / kernels.len() as f64), name)
}

/// Report-only inspection of a candidate kernel table.
#[derive(Debug, Clone)]
pub struct KernelValidation {
    pub n: usize,
    pub max_asymmetry: f64,
    pub symmetric: bool,
    pub diag_min: f64,
    pub diag_max: f64,
    pub diag_positive: bool,
    pub min_eigenvalue: Option<f64>,
    pub max_eigenvalue: Option<f64>,
    pub psd: Option<bool>,
}

impl KernelValidation {
    pub fn passed(&self) -> bool {
        self.symmetric && self.diag_positive && self.psd.unwrap_or(true)
    }
}

/// Inspects symmetry, diagonal range and optionally the spectrum of a raw
/// square table. Never fails on violations; it reports them.
pub fn validate_kernel(values: &Matrix, check_psd: bool) -> Result<KernelValidation> {
    if !values.is_square() {
        return Err(Error::Shape(format!(
            "validation needs a square matrix, got {}x{}",
            values.rows(),
            values.cols()
        )));
    }
    let n = values.rows();
    let scale = values.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let max_asymmetry = values.max_asymmetry();
    let symmetric = max_asymmetry <= 1e-8 * scale;
    let mut diag_min = f64::INFINITY;
    let mut diag_max = f64::NEG_INFINITY;
    for i in 0..n {
        diag_min = diag_min.min(values.get(i, i));
        diag_max = diag_max.max(values.get(i, i));
    }
    let (min_eigenvalue, max_eigenvalue, psd) = if check_psd && symmetric {
        let eig = sym_eig(&values.symmetrize())?;
        let lo = *eig.eigenvalues.last().unwrap();
        let hi = eig.eigenvalues[0];
        // Floating-point spectra of genuinely PSD matrices dip slightly negative.
        (Some(lo), Some(hi), Some(lo >= -1e-6 * hi.abs().max(1e-300)))
    } else {
        (None, None, if check_psd { Some(false) } else { None })
    };
    Ok(KernelValidation {
        n,
        max_asymmetry,
        symmetric,
        diag_min,
        diag_max,
        diag_positive: diag_min > 0.0,
        min_eigenvalue,
        max_eigenvalue,
        psd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::psd_clip;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                m.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        m
    }

    fn random_psd_kernel(n: usize, seed: u64) -> KernelMatrix {
        let a = random_features(n, n, seed);
        let k = a.matmul_transposed(&a).add(&Matrix::identity(n));
        KernelMatrix::new(k, format!("psd-{}", seed)).unwrap()
    }

    #[test]
    fn rbf_unit_diagonal_and_closed_form() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let k = rbf_kernel(&x, 1.0, "rbf").unwrap();
        assert_eq!(k.values().get(0, 0), 1.0);
        assert!((k.values().get(0, 1) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rbf_matches_brute_force_loop() {
        let x = random_features(10, 3, 4);
        let gamma = 0.5;
        let k = rbf_kernel(&x, gamma, "rbf").unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let mut d2 = 0.0;
                for c in 0..3 {
                    let diff = x.get(i, c) - x.get(j, c);
                    d2 += diff * diff;
                }
                assert!((k.values().get(i, j) - (-gamma * d2).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rbf_rejects_bad_input() {
        let mut x = Matrix::zeros(2, 2);
        x.set(0, 0, f64::NAN);
        assert!(rbf_kernel(&x, 1.0, "bad").is_err());
        assert!(rbf_kernel(&Matrix::zeros(2, 2), 0.0, "bad").is_err());
    }

    #[test]
    fn exp_distance_kernel_examples() {
        let zero = DistanceMatrix::new(Matrix::zeros(3, 3)).unwrap();
        let k = exp_distance_kernel(&zero, 1.0, "exp").unwrap();
        assert!(k.values().data().iter().all(|v| (v - 1.0).abs() < 1e-14));

        let mut d = Matrix::zeros(2, 2);
        d.set(0, 1, 2.0);
        d.set(1, 0, 2.0);
        let d = DistanceMatrix::new(d).unwrap();
        let k = exp_distance_kernel(&d, 0.5, "exp").unwrap();
        assert!((k.values().get(0, 1) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn exp_distance_matches_elementwise_oracle() {
        let x = random_features(6, 2, 8);
        let mut d = Matrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    d.set(i, j, squared_distance(x.row(i), x.row(j)).sqrt());
                }
            }
        }
        let d = DistanceMatrix::new(d.symmetrize()).unwrap();
        let gamma = 0.7;
        let k = exp_distance_kernel(&d, gamma, "exp").unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expected = (-gamma * d.values().get(i, j)).exp();
                assert!((k.values().get(i, j) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn distance_matrix_rejects_negative_entries() {
        let mut d = Matrix::zeros(2, 2);
        d.set(0, 1, -1.0);
        d.set(1, 0, -1.0);
        assert!(DistanceMatrix::new(d).is_err());
    }

    #[test]
    fn gamma_constant_and_arithmetic_cases() {
        let mut d = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    d.set(i, j, 2.0);
                }
            }
        }
        let d = DistanceMatrix::new(d).unwrap();
        assert!((estimate_gamma(&d).unwrap() - 0.5).abs() < 1e-14);

        // Off-diagonal multiset {1,1,2,2,3,3} has mean 2.
        let d = Matrix::from_rows(&[
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 3.0],
            vec![2.0, 3.0, 0.0],
        ])
        .unwrap();
        let d = DistanceMatrix::new(d).unwrap();
        assert!((estimate_gamma(&d).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn gamma_matches_mean_then_invert_oracle() {
        let x = random_features(20, 4, 5);
        let mut d = Matrix::zeros(20, 20);
        let mut sum = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                if i != j {
                    let v = squared_distance(x.row(i), x.row(j)).sqrt();
                    d.set(i, j, v);
                    sum += v;
                }
            }
        }
        let oracle = 1.0 / (sum / (20.0 * 19.0));
        let d = DistanceMatrix::new(d.symmetrize()).unwrap();
        assert!((estimate_gamma(&d).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn gamma_degenerate_case() {
        let d = DistanceMatrix::new(Matrix::zeros(3, 3)).unwrap();
        assert!(matches!(estimate_gamma(&d), Err(Error::Degenerate(_))));
    }

    #[test]
    fn normalize_fixed_point_and_arithmetic() {
        let k = random_psd_kernel(5, 1);
        let unit = normalize_kernel(&k).unwrap();
        let twice = normalize_kernel(&unit).unwrap();
        assert!(
            unit.values().sub(twice.values()).frobenius_norm() < 1e-12,
            "normalize should be idempotent"
        );

        let k = KernelMatrix::new(
            Matrix::from_rows(&[vec![4.0, 3.0], vec![3.0, 9.0]]).unwrap(),
            "d",
        )
        .unwrap();
        let normed = normalize_kernel(&k).unwrap();
        assert!((normed.values().get(0, 1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn normalize_keeps_psd_and_unit_diagonal() {
        let k = random_psd_kernel(8, 2);
        let normed = normalize_kernel(&k).unwrap();
        for i in 0..8 {
            assert!((normed.values().get(i, i) - 1.0).abs() < 1e-12);
        }
        let eig = sym_eig(normed.values()).unwrap();
        assert!(*eig.eigenvalues.last().unwrap() >= -1e-10);
    }

    #[test]
    fn uniform_average_cases() {
        let k = random_psd_kernel(4, 3);
        let avg = uniform_average(std::slice::from_ref(&k), "avg").unwrap();
        assert!(avg.values().sub(k.values()).frobenius_norm() < 1e-14);

        let same = uniform_average(&[k.clone(), k.clone(), k.clone()], "avg").unwrap();
        assert!(same.values().sub(k.values()).frobenius_norm() < 1e-14);

        let others: Vec<KernelMatrix> = (0..3).map(|s| random_psd_kernel(6, 10 + s)).collect();
        let avg = uniform_average(&others, "avg").unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mean: f64 =
                    others.iter().map(|k| k.values().get(i, j)).sum::<f64>() / 3.0;
                assert!((avg.values().get(i, j) - mean).abs() < 1e-12);
            }
        }
        // Convexity keeps the mean PSD.
        let eig = sym_eig(avg.values()).unwrap();
        assert!(*eig.eigenvalues.last().unwrap() >= -1e-8);
    }

    #[test]
    fn uniform_average_shape_mismatch() {
        let a = random_psd_kernel(4, 1);
        let b = random_psd_kernel(5, 2);
        assert!(matches!(uniform_average(&[a, b], "avg"), Err(Error::Shape(_))));
    }

    #[test]
    fn validation_report_cases() {
        let report = validate_kernel(&Matrix::identity(4), true).unwrap();
        assert!(report.passed());
        assert_eq!(report.diag_min, 1.0);

        let mut skew = Matrix::identity(3);
        skew.set(0, 1, 1e-3);
        let report = validate_kernel(&skew, false).unwrap();
        assert!(!report.symmetric);
        assert!(!report.passed());

        // An indefinite matrix passes PSD validation after clipping.
        let indefinite = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.1],
            vec![0.9, 1.0, 0.9],
            vec![0.1, 0.9, 1.0],
        ])
        .unwrap();
        let before = validate_kernel(&indefinite, true).unwrap();
        assert_eq!(before.psd, Some(false));
        let clipped = psd_clip(&indefinite).unwrap();
        let after = validate_kernel(&clipped, true).unwrap();
        assert_eq!(after.psd, Some(true));
    }

    #[test]
    fn constructed_kernels_pass_validation() {
        let x = random_features(12, 3, 6);
        let k = rbf_kernel(&x, 0.3, "rbf").unwrap();
        let report = validate_kernel(k.values(), false).unwrap();
        assert!(report.symmetric && report.diag_positive);
    }
}
