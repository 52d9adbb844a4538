//! Dense embedding construction: conventional Nystrom on kernel columns and
//! clustered Nystrom on features plus landmarks. Each embedding L satisfies
//! K ~ L Lᵀ and stores the binding needed to embed unseen samples later.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{landmark_ensemble, ClusterMethod, EnsembleParams, LandmarkSet};
use crate::error::{Error, Result};
use crate::io;
use crate::kernels::{rbf_cross, KernelMatrix};
use crate::linalg::{inverse_sqrt_psd, sym_eig, Matrix};
use crate::util::derive_seed;

/// Kernel function usable on explicit features (clustered path).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKernel {
    Rbf { gamma: f64 },
}

impl FeatureKernel {
    pub fn cross(&self, x: &Matrix, z: &Matrix) -> Result<Matrix> {
        match self {
            FeatureKernel::Rbf { gamma } => rbf_cross(x, z, *gamma),
        }
    }

    pub fn gram(&self, z: &Matrix) -> Result<Matrix> {
        let g = self.cross(z, z)?;
        Ok(g.symmetrize())
    }
}

/// Provenance and out-of-sample binding of one dense embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Column-sampled Nystrom: stores the selected (global) column indices
    /// and the map M = U Λ^{-1/2}; a new sample with kernel row e against
    /// those columns embeds as e M.
    Conventional {
        columns: Vec<usize>,
        requested_rank: usize,
        effective_rank: usize,
        map: Matrix,
    },
    /// Landmark Nystrom: stores the landmarks and W_Z^{-1/2}; a new sample
    /// embeds as k(x, Z) W_Z^{-1/2}.
    Clustered {
        method: ClusterMethod,
        landmarks: Matrix,
        kernel: FeatureKernel,
        w_inv_sqrt: Matrix,
    },
}

/// n x r mapping of the training samples into Euclidean space.
#[derive(Debug, Clone)]
pub struct DenseEmbedding {
    pub values: Matrix,
    pub kernel_name: String,
    pub source: EmbeddingSource,
}

impl DenseEmbedding {
    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn rank(&self) -> usize {
        self.values.cols()
    }

    /// Embeds new samples given their kernel rows against all original
    /// samples (conventional path only).
    pub fn embed_kernel_rows(&self, rows: &Matrix) -> Result<Matrix> {
        match &self.source {
            EmbeddingSource::Conventional { columns, map, .. } => {
                let max = columns.iter().max().copied().unwrap_or(0);
                if rows.cols() <= max {
                    return Err(Error::Binding(format!(
                        "kernel rows have {} columns but the binding references column {}",
                        rows.cols(),
                        max
                    )));
                }
                Ok(rows.select_columns(columns).matmul(map))
            }
            EmbeddingSource::Clustered { .. } => Err(Error::Binding(
                "clustered embeddings embed features, not kernel rows".into(),
            )),
        }
    }

    /// Embeds new samples from their feature rows (clustered path only).
    pub fn embed_features(&self, x: &Matrix) -> Result<Matrix> {
        match &self.source {
            EmbeddingSource::Clustered {
                landmarks,
                kernel,
                w_inv_sqrt,
                ..
            } => {
                if x.cols() != landmarks.cols() {
                    return Err(Error::Binding(format!(
                        "feature dimension {} does not match landmark dimension {}",
                        x.cols(),
                        landmarks.cols()
                    )));
                }
                Ok(kernel.cross(x, landmarks)?.matmul(w_inv_sqrt))
            }
            EmbeddingSource::Conventional { .. } => Err(Error::Binding(
                "conventional embeddings embed kernel rows, not features".into(),
            )),
        }
    }
}

/// Ordered list of embeddings sharing row indexing; branch p of a DKMO
/// network is permanently bound to member p.
#[derive(Debug, Clone)]
pub struct EmbeddingEnsemble {
    members: Vec<DenseEmbedding>,
    n: usize,
}

impl EmbeddingEnsemble {
    pub fn new(members: Vec<DenseEmbedding>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Input("ensemble needs at least one member".into()))?;
        let n = first.n();
        for (i, m) in members.iter().enumerate() {
            if m.n() != n {
                return Err(Error::Shape(format!(
                    "member {} has {} rows, expected {}",
                    i,
                    m.n(),
                    n
                )));
            }
            if !m.values.all_finite() {
                return Err(Error::Input(format!("member {} has non-finite values", i)));
            }
        }
        Ok(EmbeddingEnsemble { members, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[DenseEmbedding] {
        &self.members
    }
}

/// Eigenvalue floor relative to the largest eigenvalue; keeps Λ^{-1/2}
/// finite on rank-deficient W.
fn eigen_floor(lambda_max: f64) -> f64 {
    1e-10 * lambda_max.max(1e-300)
}

/// Conventional Nystrom from an explicit column subset.
pub fn conventional_single(
    k: &KernelMatrix,
    cols: &[usize],
    r: usize,
) -> Result<DenseEmbedding> {
    let n = k.n();
    let s = cols.len();
    if s == 0 {
        return Err(Error::Index("empty column selection".into()));
    }
    let mut seen = vec![false; n];
    for &c in cols {
        if c >= n {
            return Err(Error::Index(format!("column {} out of range (n={})", c, n)));
        }
        if seen[c] {
            return Err(Error::Index(format!("duplicate column {}", c)));
        }
        seen[c] = true;
    }
    if r < 1 || r > s {
        return Err(Error::Rank(format!("rank {} outside [1, {}]", r, s)));
    }

    let e = k.values().select_columns(cols);
    let w = k.values().select_square(cols).symmetrize();
    let eig = sym_eig(&w)?;
    let floor = eigen_floor(eig.eigenvalues[0].max(0.0));
    let above = eig.eigenvalues.iter().take_while(|l| **l > floor).count();
    if above == 0 {
        return Err(Error::Degenerate(
            "W has no eigenvalues above the floor".into(),
        ));
    }
    let effective = r.min(above);
    let mut map = Matrix::zeros(s, effective);
    for j in 0..effective {
        let inv_sqrt = 1.0 / eig.eigenvalues[j].sqrt();
        for i in 0..s {
            map.set(i, j, eig.eigenvectors.get(i, j) * inv_sqrt);
        }
    }
    let values = e.matmul(&map);
    Ok(DenseEmbedding {
        values,
        kernel_name: k.name().to_string(),
        source: EmbeddingSource::Conventional {
            columns: cols.to_vec(),
            requested_rank: r,
            effective_rank: effective,
            map,
        },
    })
}

/// One global draw of s*P distinct columns partitioned into P groups.
pub fn conventional_ensemble(
    k: &KernelMatrix,
    p: usize,
    s: usize,
    r: usize,
    seed: u64,
) -> Result<EmbeddingEnsemble> {
    if p == 0 {
        return Err(Error::Input("ensemble size must be >= 1".into()));
    }
    if s * p > k.n() {
        return Err(Error::Sampling(format!(
            "cannot draw {} x {} distinct columns from n = {}",
            s,
            p,
            k.n()
        )));
    }
    let schedule = vec![(s, r); p];
    varied_ensemble(k, &schedule, seed)
}

/// Default conventional schedule when only a kernel is available: six
/// members with geometrically spread subset sizes, r capped at 128.
pub fn default_schedule(n: usize) -> Vec<(usize, usize)> {
    [16usize, 12, 8, 6, 4, 3]
        .iter()
        .map(|&div| {
            let s = ((n + div - 1) / div).clamp(1, n);
            (s, s.min(128))
        })
        .collect()
}

/// One member per (s, r) schedule entry. When the total subset size fits in
/// n, a single global draw keeps groups pairwise disjoint; otherwise each
/// group is drawn independently (never with replacement within a group).
pub fn varied_ensemble(
    k: &KernelMatrix,
    schedule: &[(usize, usize)],
    seed: u64,
) -> Result<EmbeddingEnsemble> {
    let n = k.n();
    if schedule.is_empty() {
        return Err(Error::Config("empty embedding schedule".into()));
    }
    for &(s, r) in schedule {
        if s < 1 || s > n {
            return Err(Error::Config(format!(
                "subset size {} outside [1, {}]",
                s, n
            )));
        }
        if r < 1 || r > s {
            return Err(Error::Config(format!(
                "rank {} outside [1, {}]",
                r, s
            )));
        }
    }
    let total: usize = schedule.iter().map(|&(s, _)| s).sum();
    let groups: Vec<Vec<usize>> = if total <= n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(&mut rng);
        let mut offset = 0usize;
        schedule
            .iter()
            .map(|&(s, _)| {
                let g = indices[offset..offset + s].to_vec();
                offset += s;
                g
            })
            .collect()
    } else {
        schedule
            .iter()
            .enumerate()
            .map(|(i, &(s, _))| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
                let mut indices: Vec<usize> = (0..n).collect();
                indices.shuffle(&mut rng);
                indices[..s].to_vec()
            })
            .collect()
    };
    let members = schedule
        .iter()
        .zip(groups.iter())
        .map(|(&(_, r), cols)| conventional_single(k, cols, r))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingEnsemble::new(members)
}

/// Clustered Nystrom: L_Z = E_Z W_Z^{-1/2} with (E_Z)_ij = k(x_i, z_j).
pub fn clustered_embed(
    x: &Matrix,
    z: &LandmarkSet,
    kfn: FeatureKernel,
    kernel_name: &str,
) -> Result<DenseEmbedding> {
    if x.cols() != z.points.cols() {
        return Err(Error::Shape(format!(
            "feature dimension {} does not match landmark dimension {}",
            x.cols(),
            z.points.cols()
        )));
    }
    let e_z = kfn.cross(x, &z.points)?;
    let w_z = kfn.gram(&z.points)?;
    let w_inv_sqrt = inverse_sqrt_psd(&w_z, None)?;
    let values = e_z.matmul(&w_inv_sqrt);
    Ok(DenseEmbedding {
        values,
        kernel_name: kernel_name.to_string(),
        source: EmbeddingSource::Clustered {
            method: z.method,
            landmarks: z.points.clone(),
            kernel: kfn,
            w_inv_sqrt,
        },
    })
}

/// Five clustered embeddings, one per landmark-clustering method.
pub fn clustered_ensemble(
    x: &Matrix,
    r: usize,
    kfn: FeatureKernel,
    kernel_name: &str,
    seed: u64,
    params: &EnsembleParams,
) -> Result<EmbeddingEnsemble> {
    let landmarks = landmark_ensemble(x, r, seed, params)?;
    let members = landmarks
        .iter()
        .map(|z| clustered_embed(x, z, kfn, kernel_name))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingEnsemble::new(members)
}

#[derive(Serialize, Deserialize)]
struct MemberMeta {
    kernel_name: String,
    source: EmbeddingSource,
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    n: usize,
    members: usize,
}

/// Persists an ensemble: one DKME table plus one JSON sidecar per member.
pub fn save_ensemble(dir: &Path, ensemble: &EmbeddingEnsemble) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = EnsembleManifest {
        n: ensemble.n(),
        members: ensemble.len(),
    };
    std::fs::write(
        dir.join("ensemble.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (i, m) in ensemble.members().iter().enumerate() {
        io::write_embedding_binary(dir.join(format!("member_{:03}.dkme", i)), &m.values)?;
        let meta = MemberMeta {
            kernel_name: m.kernel_name.clone(),
            source: m.source.clone(),
        };
        std::fs::write(
            dir.join(format!("member_{:03}.meta.json", i)),
            serde_json::to_string_pretty(&meta)?,
        )?;
    }
    Ok(())
}

pub fn load_ensemble(dir: &Path) -> Result<EmbeddingEnsemble> {
    let manifest: EnsembleManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("ensemble.json"))?)?;
    let mut members = Vec::with_capacity(manifest.members);
    for i in 0..manifest.members {
        let values = io::read_embedding_binary(dir.join(format!("member_{:03}.dkme", i)))?;
        let meta: MemberMeta = serde_json::from_str(&std::fs::read_to_string(
            dir.join(format!("member_{:03}.meta.json", i)),
        )?)?;
        members.push(DenseEmbedding {
            values,
            kernel_name: meta.kernel_name,
            source: meta.source,
        });
    }
    EmbeddingEnsemble::new(members)
}
