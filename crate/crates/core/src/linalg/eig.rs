use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SYMMETRY_TOL: f64 = 1e-8;

/// Full spectrum of a symmetric matrix, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column i is the unit eigenvector paired with eigenvalues[i].
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// U diag(λ) Uᵀ.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for i in 0..n {
            for j in 0..n {
                scaled.set(i, j, u.get(i, j) * self.eigenvalues[j]);
            }
        }
        scaled.matmul_transposed(u)
    }
}

/// Cyclic Jacobi eigendecomposition for symmetric matrices.
///
/// Deterministic: fixed sweep order and a fixed sign convention (the
/// largest-magnitude entry of each eigenvector is positive, ties broken by
/// lowest index).
pub fn sym_eig(m: &Matrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "sym_eig needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let scale = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if m.max_asymmetry() > SYMMETRY_TOL * scale {
        return Err(Error::Symmetry(format!(
            "max |A_ij - A_ji| = {:.3e}",
            m.max_asymmetry()
        )));
    }

    let n = m.rows();
    let mut a = m.symmetrize();
    let mut v = Matrix::identity(n);

    let max_sweeps = 100;
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * scale * n as f64 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut pairs: Vec<(f64, usize)> = (0..n).map(|j| (a.get(j, j), j)).collect();
    // Descending by eigenvalue, original column order breaks ties.
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &(lambda, src)) in pairs.iter().enumerate() {
        eigenvalues.push(lambda);
        let mut col = v.column(src);
        let norm: f64 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in col.iter_mut() {
                *x /= norm;
            }
        }
        // Sign convention.
        let mut best = 0usize;
        for k in 1..n {
            if col[k].abs() > col[best].abs() {
                best = k;
            }
        }
        if col[best] < 0.0 {
            for x in col.iter_mut() {
                *x = -*x;
            }
        }
        for k in 0..n {
            eigenvectors.set(k, dst, col[k]);
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Top-r singular value decomposition via eigendecomposition of the smaller
/// Gram matrix.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, cols) = (m.rows(), m.cols());
    if r < 1 || r > rows.min(cols) {
        return Err(Error::Rank(format!(
            "rank {} outside [1, {}] for a {}x{} matrix",
            r,
            rows.min(cols),
            rows,
            cols
        )));
    }

    let tall = rows >= cols;
    // Eigendecompose the smaller of MᵀM and MMᵀ.
    let gram = if tall {
        m.transposed_matmul(m)
    } else {
        m.matmul_transposed(m)
    };
    let eig = sym_eig(&gram)?;

    let smax = eig.eigenvalues[0].max(0.0).sqrt();
    let floor = (1e-14 * smax.max(1.0)).max(1e-300);
    let mut singular = Vec::with_capacity(r);
    for i in 0..r {
        singular.push(eig.eigenvalues[i].max(0.0).sqrt());
    }

    let small_factor = {
        let k = gram.rows();
        let mut f = Matrix::zeros(k, r);
        for i in 0..k {
            for j in 0..r {
                f.set(i, j, eig.eigenvectors.get(i, j));
            }
        }
        f
    };
    // Recover the other factor: M v_i / σ_i (or Mᵀ u_i / σ_i).
    let other = {
        let prod = if tall {
            m.matmul(&small_factor)
        } else {
            m.transposed_matmul(&small_factor)
        };
        let mut f = prod;
        for j in 0..r {
            let s = singular[j].max(floor);
            for i in 0..f.rows() {
                f.set(i, j, f.get(i, j) / s);
            }
        }
        f
    };

    if tall {
        Ok((other, singular, small_factor))
    } else {
        Ok((small_factor, singular, other))
    }
}

/// U diag(max(λ, eps))^{-1/2} Uᵀ for a symmetric PSD matrix.
///
/// `eps` defaults to 1e-10 times the largest eigenvalue; it floors small and
/// zero eigenvalues so rank-deficient inputs stay invertible.
pub fn inverse_sqrt_psd(m: &Matrix, eps: Option<f64>) -> Result<Matrix> {
    let eig = sym_eig(m)?;
    let lambda_max = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if min < -1e-6 {
        return Err(Error::NotPsd(format!("min eigenvalue {:.3e}", min)));
    }
    let eps = eps.unwrap_or(1e-10 * lambda_max.max(1e-300));
    let n = m.rows();
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for j in 0..n {
        let inv_sqrt = 1.0 / eig.eigenvalues[j].max(eps).sqrt();
        for i in 0..n {
            scaled.set(i, j, u.get(i, j) * inv_sqrt);
        }
    }
    Ok(scaled.matmul_transposed(u).symmetrize())
}

/// Nearest PSD matrix in Frobenius norm: zero out negative eigenvalues.
pub fn psd_clip(m: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(m)?;
    let n = m.rows();
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for j in 0..n {
        let lambda = eig.eigenvalues[j].max(0.0);
        for i in 0..n {
            scaled.set(i, j, u.get(i, j) * lambda);
        }
    }
    Ok(scaled.matmul_transposed(u).symmetrize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        m
    }

    #[test]
    fn identity_spectrum() {
        let eig = sym_eig(&Matrix::identity(3)).unwrap();
        for lambda in &eig.eigenvalues {
            assert!((lambda - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_spectrum_and_vectors() {
        let eig = sym_eig(&Matrix::diagonal(&[5.0, 2.0, -1.0])).unwrap();
        assert!((eig.eigenvalues[0] - 5.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - 2.0).abs() < 1e-12);
        assert!((eig.eigenvalues[2] + 1.0).abs() < 1e-12);
        // Eigenvectors are permuted identity columns.
        for j in 0..3 {
            let col = eig.eigenvectors.column(j);
            let ones: usize = col.iter().filter(|v| (v.abs() - 1.0).abs() < 1e-10).count();
            let zeros: usize = col.iter().filter(|v| v.abs() < 1e-10).count();
            assert_eq!(ones, 1);
            assert_eq!(zeros, 2);
        }
    }

    #[test]
    fn reconstruction_of_random_symmetric() {
        let m = random_symmetric(6, 42);
        let eig = sym_eig(&m).unwrap();
        let err = eig.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-10, "reconstruction error {}", err);
    }

    #[test]
    fn eigenvalues_sorted_and_vectors_unit_norm() {
        let m = random_symmetric(12, 7);
        let eig = sym_eig(&m).unwrap();
        for w in eig.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for j in 0..12 {
            let norm: f64 = eig
                .eigenvectors
                .column(j)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&m), Err(Error::Symmetry(_))));
        let r = Matrix::zeros(2, 3);
        assert!(matches!(sym_eig(&r), Err(Error::Shape(_))));
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let m = random_symmetric(8, 3);
        let a = sym_eig(&m).unwrap();
        let b = sym_eig(&m).unwrap();
        assert_eq!(a.eigenvectors, b.eigenvectors);
        for j in 0..8 {
            let col = a.eigenvectors.column(j);
            let best = col
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
                .unwrap();
            assert!(*best.1 > 0.0);
        }
    }

    #[test]
    fn svd_rank_one_exact() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0];
        let mut m = Matrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                m.set(i, j, u[i] * v[j]);
            }
        }
        let (uu, s, vv) = truncated_svd(&m, 1).unwrap();
        let mut recon = Matrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                recon.set(i, j, uu.get(i, 0) * s[0] * vv.get(j, 0));
            }
        }
        assert!(recon.sub(&m).frobenius_norm() < 1e-10);
    }

    #[test]
    fn svd_diagonal_case() {
        let m = Matrix::diagonal(&[4.0, 3.0, 2.0, 1.0]);
        let (_, s, _) = truncated_svd(&m, 2).unwrap();
        assert!((s[0] - 4.0).abs() < 1e-10);
        assert!((s[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn svd_eckart_young_against_full_oracle() {
        let m = random_matrix(8, 5, 11);
        let r = 3;
        let (u, s, v) = truncated_svd(&m, r).unwrap();
        let mut recon = Matrix::zeros(8, 5);
        for i in 0..8 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..r {
                    acc += u.get(i, k) * s[k] * v.get(j, k);
                }
                recon.set(i, j, acc);
            }
        }
        let err = recon.sub(&m).frobenius_norm();
        // Full-decomposition oracle: tail singular values from the Gram spectrum.
        let gram = m.transposed_matmul(&m);
        let eig = sym_eig(&gram).unwrap();
        let expected: f64 = eig.eigenvalues[r..]
            .iter()
            .map(|l| l.max(0.0))
            .sum::<f64>()
            .sqrt();
        assert!(
            (err - expected).abs() < 1e-8,
            "err {} vs oracle {}",
            err,
            expected
        );
    }

    #[test]
    fn svd_factor_orthonormality() {
        let m = random_matrix(10, 7, 23);
        let (u, _, v) = truncated_svd(&m, 4).unwrap();
        let utu = u.transposed_matmul(&u);
        let vtv = v.transposed_matmul(&v);
        assert!(utu.sub(&Matrix::identity(4)).frobenius_norm() < 1e-8);
        assert!(vtv.sub(&Matrix::identity(4)).frobenius_norm() < 1e-8);
    }

    #[test]
    fn svd_rank_out_of_range() {
        let m = random_matrix(4, 3, 1);
        assert!(truncated_svd(&m, 0).is_err());
        assert!(truncated_svd(&m, 4).is_err());
    }

    #[test]
    fn inverse_sqrt_identity_and_diagonal() {
        let r = inverse_sqrt_psd(&Matrix::identity(4), None).unwrap();
        assert!(r.sub(&Matrix::identity(4)).frobenius_norm() < 1e-10);
        let r = inverse_sqrt_psd(&Matrix::diagonal(&[4.0, 1.0]), None).unwrap();
        assert!((r.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((r.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_multiply_back() {
        let a = random_matrix(5, 5, 9);
        let k = a.matmul_transposed(&a).add(&Matrix::identity(5));
        let r = inverse_sqrt_psd(&k, None).unwrap();
        let check = r.matmul(&k).matmul(&r);
        assert!(check.sub(&Matrix::identity(5)).frobenius_norm() < 1e-6);
    }

    #[test]
    fn inverse_sqrt_rejects_indefinite() {
        let m = Matrix::diagonal(&[1.0, -0.5]);
        assert!(matches!(inverse_sqrt_psd(&m, None), Err(Error::NotPsd(_))));
    }

    #[test]
    fn psd_clip_examples() {
        let a = random_matrix(4, 4, 5);
        let psd = a.matmul_transposed(&a);
        let clipped = psd_clip(&psd).unwrap();
        assert!(clipped.sub(&psd).frobenius_norm() < 1e-10 * psd.frobenius_norm().max(1.0));

        let clipped = psd_clip(&Matrix::diagonal(&[1.0, -2.0])).unwrap();
        assert!((clipped.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(clipped.get(1, 1).abs() < 1e-12);
    }

    #[test]
    fn psd_clip_matches_eigen_clip_oracle_and_is_idempotent() {
        // Correlation-style matrix with a negative eigenvalue.
        let m = Matrix::from_rows(&[
            vec![1.0, 0.9, 0.1],
            vec![0.9, 1.0, 0.9],
            vec![0.1, 0.9, 1.0],
        ])
        .unwrap();
        let eig = sym_eig(&m).unwrap();
        assert!(*eig.eigenvalues.last().unwrap() < 0.0);
        let clipped = psd_clip(&m).unwrap();
        // Oracle: reconstruct from explicitly clipped spectrum.
        let oracle = {
            let mut vals = eig.eigenvalues.clone();
            for v in vals.iter_mut() {
                *v = v.max(0.0);
            }
            EigenDecomposition {
                eigenvalues: vals,
                eigenvectors: eig.eigenvectors.clone(),
            }
            .reconstruct()
        };
        assert!(clipped.sub(&oracle).frobenius_norm() < 1e-10);
        let twice = psd_clip(&clipped).unwrap();
        assert!(twice.sub(&clipped).frobenius_norm() < 1e-10);
        let min = sym_eig(&clipped).unwrap().eigenvalues.last().copied().unwrap();
        assert!(min >= -1e-10);
    }
}
