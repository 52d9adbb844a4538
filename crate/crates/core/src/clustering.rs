//! Landmark selection for clustered Nystrom embeddings: k-means, k-medians,
//! k-medoids, average-linkage agglomerative and kNN spectral clustering.
//!
//! All methods are deterministic given (input, seed): kmeans++-style seeding,
//! tie-breaking by lowest index, fixed iteration order.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l1_distance, squared_distance, sym_eig, Matrix};
use crate::util::derive_seed;

pub const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    KMeans,
    KMedians,
    KMedoids,
    Agglomerative,
    Spectral,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 5] = [
        ClusterMethod::KMeans,
        ClusterMethod::KMedians,
        ClusterMethod::KMedoids,
        ClusterMethod::Agglomerative,
        ClusterMethod::Spectral,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ClusterMethod::KMeans => "kmeans",
            ClusterMethod::KMedians => "kmedians",
            ClusterMethod::KMedoids => "kmedoids",
            ClusterMethod::Agglomerative => "agglomerative",
            ClusterMethod::Spectral => "spectral",
        }
    }
}

/// r landmark points in input space plus provenance.
#[derive(Debug, Clone)]
pub struct LandmarkSet {
    pub points: Matrix,
    pub method: ClusterMethod,
    pub seed: u64,
}

fn check_count(n: usize, r: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Count("cannot cluster an empty dataset".into()));
    }
    if r == 0 || r > n {
        return Err(Error::Count(format!(
            "landmark count {} outside [1, {}]",
            r, n
        )));
    }
    Ok(())
}

/// kmeans++-style seeding: first center uniform, the rest weighted by
/// distance to the closest chosen center. Returns row indices.
fn plus_plus_init<F>(x: &Matrix, r: usize, rng: &mut ChaCha8Rng, dist: F) -> Vec<usize>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let n = x.rows();
    let mut centers = Vec::with_capacity(r);
    centers.push(rng.gen_range(0..n));
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| dist(x.row(i), x.row(centers[0])))
        .collect();
    while centers.len() < r {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining weights zero (duplicates); take the lowest
            // index not yet chosen.
            (0..n).find(|i| !centers.contains(i)).unwrap_or(0)
        };
        centers.push(pick);
        for i in 0..n {
            let d = dist(x.row(i), x.row(pick));
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    centers
}

fn assign<F>(x: &Matrix, centers: &Matrix, dist: F) -> Vec<usize>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    (0..x.rows())
        .map(|i| {
            let mut best = 0usize;
            let mut best_d = dist(x.row(i), centers.row(0));
            for c in 1..centers.rows() {
                let d = dist(x.row(i), centers.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn objective<F>(x: &Matrix, centers: &Matrix, assignment: &[usize], dist: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| dist(x.row(i), centers.row(c)))
        .sum()
}

/// Reassign the point farthest from its centroid to repair an empty cluster.
fn repair_empty<F>(
    x: &Matrix,
    centers: &mut Matrix,
    assignment: &mut [usize],
    empty: usize,
    dist: &F,
) where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let mut worst = 0usize;
    let mut worst_d = -1.0;
    for i in 0..x.rows() {
        let d = dist(x.row(i), centers.row(assignment[i]));
        if d > worst_d {
            worst_d = d;
            worst = i;
        }
    }
    centers.row_mut(empty).copy_from_slice(x.row(worst));
    assignment[worst] = empty;
}

enum Update {
    Mean,
    Median,
}

fn lloyd_with_trace(
    x: &Matrix,
    r: usize,
    seed: u64,
    update: Update,
) -> Result<(Matrix, Vec<usize>, Vec<f64>)> {
    check_count(x.rows(), r)?;
    if !x.all_finite() {
        return Err(Error::Input("feature matrix contains non-finite values".into()));
    }
    let dist: fn(&[f64], &[f64]) -> f64 = match update {
        Update::Mean => squared_distance,
        Update::Median => l1_distance,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = plus_plus_init(x, r, &mut rng, dist);
    let mut centers = x.select_rows(&init);
    let mut assignment = assign(x, &centers, dist);
    let mut trace = vec![objective(x, &centers, &assignment, dist)];

    for _ in 0..MAX_ITERS {
        // Update representatives.
        let d = x.cols();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); r];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        for c in 0..r {
            if members[c].is_empty() {
                repair_empty(x, &mut centers, &mut assignment, c, &dist);
                continue;
            }
            match update {
                Update::Mean => {
                    let mut mean = vec![0.0; d];
                    for &i in &members[c] {
                        for (m, v) in mean.iter_mut().zip(x.row(i)) {
                            *m += v;
                        }
                    }
                    let inv = 1.0 / members[c].len() as f64;
                    for m in mean.iter_mut() {
                        *m *= inv;
                    }
                    centers.row_mut(c).copy_from_slice(&mean);
                }
                Update::Median => {
                    for j in 0..d {
                        let mut column: Vec<f64> =
                            members[c].iter().map(|&i| x.get(i, j)).collect();
                        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let m = column.len();
                        let median = if m % 2 == 1 {
                            column[m / 2]
                        } else {
                            0.5 * (column[m / 2 - 1] + column[m / 2])
                        };
                        centers.set(c, j, median);
                    }
                }
            }
        }
        let next = assign(x, &centers, dist);
        trace.push(objective(x, &centers, &next, dist));
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }
    Ok((centers, assignment, trace))
}

pub fn kmeans(x: &Matrix, r: usize, seed: u64) -> Result<LandmarkSet> {
    let (points, _, _) = lloyd_with_trace(x, r, seed, Update::Mean)?;
    Ok(LandmarkSet {
        points,
        method: ClusterMethod::KMeans,
        seed,
    })
}

pub fn kmeans_with_assignment(
    x: &Matrix,
    r: usize,
    seed: u64,
) -> Result<(Matrix, Vec<usize>, Vec<f64>)> {
    lloyd_with_trace(x, r, seed, Update::Mean)
}

pub fn kmedians(x: &Matrix, r: usize, seed: u64) -> Result<LandmarkSet> {
    let (points, _, _) = lloyd_with_trace(x, r, seed, Update::Median)?;
    Ok(LandmarkSet {
        points,
        method: ClusterMethod::KMedians,
        seed,
    })
}

/// PAM-style alternation: medoids are always dataset rows.
pub fn kmedoids(x: &Matrix, r: usize, seed: u64) -> Result<LandmarkSet> {
    check_count(x.rows(), r)?;
    if !x.all_finite() {
        return Err(Error::Input("feature matrix contains non-finite values".into()));
    }
    let n = x.rows();
    let dist = |a: &[f64], b: &[f64]| squared_distance(a, b).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = plus_plus_init(x, r, &mut rng, dist);
    medoids.sort_unstable();
    medoids.dedup();
    // kmeans++ can repeat an index only when duplicates exhaust the data;
    // pad with the lowest unused indices.
    let mut cursor = 0usize;
    while medoids.len() < r {
        if !medoids.contains(&cursor) {
            medoids.push(cursor);
        }
        cursor += 1;
    }

    for _ in 0..MAX_ITERS {
        let centers = x.select_rows(&medoids);
        let assignment = assign(x, &centers, dist);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); r];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        let mut next = medoids.clone();
        for c in 0..r {
            if members[c].is_empty() {
                // Point farthest from its medoid becomes the new medoid.
                let mut worst = 0usize;
                let mut worst_d = -1.0;
                for i in 0..n {
                    let d = dist(x.row(i), x.row(medoids[assignment[i]]));
                    if d > worst_d {
                        worst_d = d;
                        worst = i;
                    }
                }
                next[c] = worst;
                continue;
            }
            let mut best = members[c][0];
            let mut best_cost = f64::INFINITY;
            for &candidate in &members[c] {
                let cost: f64 = members[c]
                    .iter()
                    .map(|&i| dist(x.row(i), x.row(candidate)))
                    .sum();
                if cost < best_cost {
                    best_cost = cost;
                    best = candidate;
                }
            }
            next[c] = best;
        }
        if next == medoids {
            break;
        }
        medoids = next;
    }
    Ok(LandmarkSet {
        points: x.select_rows(&medoids),
        method: ClusterMethod::KMedoids,
        seed,
    })
}

/// Average-linkage bottom-up merging until r clusters remain; landmarks are
/// cluster means.
pub fn agglomerative(x: &Matrix, r: usize) -> Result<LandmarkSet> {
    check_count(x.rows(), r)?;
    if !x.all_finite() {
        return Err(Error::Input("feature matrix contains non-finite values".into()));
    }
    let n = x.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // Average pairwise distance between cluster members.
    let mut dist: Vec<Vec<f64>> = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(x.row(i), x.row(j)).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut alive: Vec<bool> = vec![true; n];
    let mut alive_count = n;

    while alive_count > r {
        let mut best = (usize::MAX, usize::MAX);
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..n {
                if !alive[j] {
                    continue;
                }
                if dist[i][j] < best_d {
                    best_d = dist[i][j];
                    best = (i, j);
                }
            }
        }
        let (a, b) = best;
        let (wa, wb) = (clusters[a].len() as f64, clusters[b].len() as f64);
        // d(A u B, C) = (|A| d(A,C) + |B| d(B,C)) / (|A| + |B|)
        for c in 0..n {
            if alive[c] && c != a && c != b {
                let merged = (wa * dist[a][c] + wb * dist[b][c]) / (wa + wb);
                dist[a][c] = merged;
                dist[c][a] = merged;
            }
        }
        let absorbed = std::mem::take(&mut clusters[b]);
        clusters[a].extend(absorbed);
        alive[b] = false;
        alive_count -= 1;
    }

    let mut points = Matrix::zeros(r, x.cols());
    let mut row = 0usize;
    for i in 0..n {
        if alive[i] {
            let mean = cluster_mean(x, &clusters[i]);
            points.row_mut(row).copy_from_slice(&mean);
            row += 1;
        }
    }
    Ok(LandmarkSet {
        points,
        method: ClusterMethod::Agglomerative,
        seed: 0,
    })
}

fn cluster_mean(x: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; x.cols()];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    mean
}

pub fn default_k_neighbors(n: usize) -> usize {
    10usize.max((n as f64).log2().ceil() as usize).min(n.saturating_sub(1).max(1))
}

/// Spectral clustering on a symmetrized kNN graph with a normalized
/// Laplacian. Disconnected graphs are handled by clustering each connected
/// component separately, distributing r proportionally to component size.
pub fn spectral_knn(x: &Matrix, r: usize, k_neighbors: usize, seed: u64) -> Result<LandmarkSet> {
    check_count(x.rows(), r)?;
    if k_neighbors == 0 {
        return Err(Error::Count("k_neighbors must be >= 1".into()));
    }
    if !x.all_finite() {
        return Err(Error::Input("feature matrix contains non-finite values".into()));
    }
    let n = x.rows();
    let k = k_neighbors.min(n - 1).max(1);

    // Symmetrized (union) kNN adjacency.
    let mut adj: Vec<Vec<bool>> = vec![vec![false; n]; n];
    if n > 1 {
        for i in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                squared_distance(x.row(i), x.row(a))
                    .partial_cmp(&squared_distance(x.row(i), x.row(b)))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for &j in order.iter().take(k) {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }

    // Connected components, lowest-index order.
    let mut component: Vec<usize> = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        component[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..n {
                if adj[i][j] && component[j] == usize::MAX {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }

    let allocation = allocate_proportionally(&comps, r);
    let mut landmarks: Vec<Vec<f64>> = Vec::with_capacity(r);
    for (ci, members) in comps.iter().enumerate() {
        let rc = allocation[ci];
        if rc == 0 {
            continue;
        }
        if rc == members.len() {
            for &i in members {
                landmarks.push(x.row(i).to_vec());
            }
            continue;
        }
        let partitions = spectral_partition(members, &adj, rc, derive_seed(seed, ci as u64))?;
        for part in partitions {
            landmarks.push(cluster_mean(x, &part));
        }
    }
    let points = Matrix::from_rows(&landmarks)?;
    Ok(LandmarkSet {
        points,
        method: ClusterMethod::Spectral,
        seed,
    })
}

/// Largest-remainder allocation of r clusters across components, capped at
/// component size, every positive share feasible.
fn allocate_proportionally(comps: &[Vec<usize>], r: usize) -> Vec<usize> {
    let n: usize = comps.iter().map(|c| c.len()).sum();
    let m = comps.len();
    let mut alloc = vec![0usize; m];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(m);
    let mut assigned = 0usize;
    for (i, c) in comps.iter().enumerate() {
        let ideal = r as f64 * c.len() as f64 / n as f64;
        let base = (ideal.floor() as usize).min(c.len());
        alloc[i] = base;
        assigned += base;
        remainders.push((ideal - base as f64, i));
    }
    // Hand out leftovers by largest remainder, ties to the lowest index.
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut leftover = r.saturating_sub(assigned);
    let mut cursor = 0usize;
    while leftover > 0 {
        let idx = remainders[cursor % m].1;
        if alloc[idx] < comps[idx].len() {
            alloc[idx] += 1;
            leftover -= 1;
        }
        cursor += 1;
        if cursor > 4 * m * (r + 1) {
            break; // r <= n guarantees termination; guard regardless
        }
    }
    alloc
}

/// Bottom-rc eigenvectors of the normalized Laplacian restricted to one
/// component, then k-means in the spectral embedding. Returns partitions as
/// global row indices.
fn spectral_partition(
    members: &[usize],
    adj: &[Vec<bool>],
    rc: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let m = members.len();
    let mut a = Matrix::zeros(m, m);
    for (p, &i) in members.iter().enumerate() {
        for (q, &j) in members.iter().enumerate() {
            if adj[i][j] {
                a.set(p, q, 1.0);
            }
        }
    }
    let degrees: Vec<f64> = (0..m).map(|p| a.row(p).iter().sum()).collect();
    let mut lap = Matrix::identity(m);
    for p in 0..m {
        for q in 0..m {
            if a.get(p, q) != 0.0 {
                let v = lap.get(p, q) - a.get(p, q) / (degrees[p] * degrees[q]).sqrt();
                lap.set(p, q, v);
            }
        }
    }
    let eig = sym_eig(&lap)?;
    // Smallest eigenvalues sit at the tail of the descending spectrum.
    let mut embedding = Matrix::zeros(m, rc);
    for p in 0..m {
        for c in 0..rc {
            embedding.set(p, c, eig.eigenvectors.get(p, m - 1 - c));
        }
    }
    // Row-normalize; isolated zero rows stay zero.
    for p in 0..m {
        let norm: f64 = embedding.row(p).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            for v in embedding.row_mut(p) {
                *v /= norm;
            }
        }
    }
    let (_, assignment, _) = lloyd_with_trace(&embedding, rc, seed, Update::Mean)?;
    let mut partitions: Vec<Vec<usize>> = vec![Vec::new(); rc];
    for (p, &c) in assignment.iter().enumerate() {
        partitions[c].push(members[p]);
    }
    partitions.retain(|p| !p.is_empty());
    Ok(partitions)
}

/// Tunables the paper leaves open.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleParams {
    pub spectral_k_neighbors: Option<usize>,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            spectral_k_neighbors: None,
        }
    }
}

/// One landmark set per clustering method, fixed order: kmeans, kmedians,
/// kmedoids, agglomerative, spectral.
pub fn landmark_ensemble(
    x: &Matrix,
    r: usize,
    seed: u64,
    params: &EnsembleParams,
) -> Result<Vec<LandmarkSet>> {
    let k_neighbors = params
        .spectral_k_neighbors
        .unwrap_or_else(|| default_k_neighbors(x.rows()));
    Ok(vec![
        kmeans(x, r, derive_seed(seed, 0))?,
        kmedians(x, r, derive_seed(seed, 1))?,
        kmedoids(x, r, derive_seed(seed, 2))?,
        agglomerative(x, r)?,
        spectral_knn(x, r, k_neighbors, derive_seed(seed, 4))?,
    ])
}
