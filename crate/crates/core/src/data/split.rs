use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint, covering train/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// Fraction of samples assigned to train.
    Fraction(f64),
    /// Exact number of train samples drawn from every class.
    PerClass(usize),
}

/// Deterministic random split. Stratified fraction splits use
/// largest-remainder rounding so per-class counts are exact and the train
/// total equals round(fraction * n).
pub fn make_split(labels: &[usize], spec: SplitSpec, stratify: bool, seed: u64) -> Result<Split> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Input("cannot split an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        SplitSpec::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) || !f.is_finite() {
                return Err(Error::Count(format!("train fraction {} outside [0, 1]", f)));
            }
            let train_total = (f * n as f64).round() as usize;
            if !stratify {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng);
                let mut train: Vec<usize> = idx[..train_total].to_vec();
                let mut test: Vec<usize> = idx[train_total..].to_vec();
                train.sort_unstable();
                test.sort_unstable();
                return Ok(Split { train, test });
            }
            let classes = class_indices(labels);
            // Largest-remainder allocation of the train quota across classes.
            let mut quotas: Vec<usize> = Vec::with_capacity(classes.len());
            let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(classes.len());
            let mut allocated = 0usize;
            for (c, members) in classes.iter().enumerate() {
                let exact = f * members.len() as f64;
                let floor = exact.floor() as usize;
                quotas.push(floor.min(members.len()));
                allocated += quotas[c];
                remainders.push((c, exact - floor as f64));
            }
            remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut leftover = train_total.saturating_sub(allocated);
            for (c, _) in remainders {
                if leftover == 0 {
                    break;
                }
                if quotas[c] < classes[c].len() {
                    quotas[c] += 1;
                    leftover -= 1;
                }
            }
            split_by_quota(&classes, &quotas, &mut rng)
        }
        SplitSpec::PerClass(k) => {
            let classes = class_indices(labels);
            for (c, members) in classes.iter().enumerate() {
                if !members.is_empty() && members.len() < k {
                    return Err(Error::Count(format!(
                        "class {} has {} samples, cannot take {} for train",
                        c,
                        members.len(),
                        k
                    )));
                }
            }
            let quotas: Vec<usize> = classes
                .iter()
                .map(|m| if m.is_empty() { 0 } else { k })
                .collect();
            split_by_quota(&classes, &quotas, &mut rng)
        }
    }
}

fn class_indices(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut classes = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        classes[l].push(i);
    }
    classes
}

fn split_by_quota(
    classes: &[Vec<usize>],
    quotas: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Split> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, &quota) in classes.iter().zip(quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        train.extend_from_slice(&shuffled[..quota]);
        test.extend_from_slice(&shuffled[quota..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

impl Split {
    pub fn is_disjoint_covering(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(self.test.iter()) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}
