//! Agglomerative clustering of action dimensions under the Rela criterion.
//!
//! With `R(A, B)` the mean pairwise cosine similarity of feature rows drawn
//! from `A` and `B`, and `-A` the complement of `A` among all action
//! indices,
//!
//! ```text
//! Rela(Gi, Gj) = R(Gi, Gj)
//!     - (R(Gj, -Gi) * |Gj||-Gi| + R(Gi, -Gj) * |Gi||-Gj|) / (|Gi||-Gj| + |Gj||-Gi|)
//! ```
//!
//! Clustering starts from singletons and merges the highest-Rela pair while
//! its score is strictly above the threshold.

use serde::Serialize;

use super::features::FeatureMatrix;
use super::partition::Partition;
use crate::error::{invalid, Result};

/// Thresholds reported for MuJoCo-style locomotion and manipulation tasks.
/// The synthetic presets use 0.
pub mod reference_eta {
    pub const HOPPER_DMC: f64 = 0.0;
    pub const WALKER_DMC: f64 = -0.06;
    pub const CHEETAH_DMC: f64 = -0.1;
    pub const HUMANOID_DMC: f64 = 0.0;
    pub const REACHER_DMC: f64 = 0.0;
    pub const FINGER_DMC: f64 = 0.0;
    pub const HALFCHEETAH_GYM: f64 = 0.0;
    pub const HOPPER_GYM: f64 = -0.3;
    pub const WALKER_GYM: f64 = -0.2;
    pub const ANT_GYM: f64 = -0.12;
}

/// Cosine similarity; 0 if either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Pairwise cosine similarities between feature rows.
#[derive(Debug, Clone)]
struct Similarity {
    m: usize,
    cos: Vec<f64>,
}

impl Similarity {
    fn new(f: &FeatureMatrix) -> Self {
        let m = f.m;
        let mut cos = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                cos[i * m + j] = cosine(f.row(i), f.row(j));
            }
        }
        Self { m, cos }
    }

    /// Mean similarity over all pairs from two 1-based index sets.
    fn between(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut sum = 0.0;
        for &x in a {
            for &y in b {
                sum += self.cos[(x - 1) * self.m + (y - 1)];
            }
        }
        sum / (a.len() * b.len()) as f64
    }

    fn complement(&self, g: &[usize]) -> Vec<usize> {
        (1..=self.m).filter(|i| !g.contains(i)).collect()
    }

    fn rela(&self, gi: &[usize], gj: &[usize]) -> f64 {
        let not_i = self.complement(gi);
        let not_j = self.complement(gj);
        let w_j_noti = (gj.len() * not_i.len()) as f64;
        let w_i_notj = (gi.len() * not_j.len()) as f64;
        let outside =
            self.between(gj, &not_i) * w_j_noti + self.between(gi, &not_j) * w_i_notj;
        self.between(gi, gj) - outside / (w_i_notj + w_j_noti)
    }
}

fn check_group(g: &[usize], m: usize) -> Result<()> {
    if g.is_empty() || g.iter().any(|&i| i == 0 || i > m) {
        return Err(invalid(format!("group {g:?} is not a nonempty subset of 1..={m}")));
    }
    Ok(())
}

/// Mean pairwise cosine similarity between the feature rows of two groups
/// (1-based indices). Overlapping groups include their self-pairs.
pub fn cluster_similarity(gi: &[usize], gj: &[usize], f: &FeatureMatrix) -> Result<f64> {
    check_group(gi, f.m)?;
    check_group(gj, f.m)?;
    Ok(Similarity::new(f).between(gi, gj))
}

/// Rela score of two distinct groups of `context`.
pub fn rela(gi: &[usize], gj: &[usize], context: &Partition, f: &FeatureMatrix) -> Result<f64> {
    if context.action_dim() != f.m {
        return Err(invalid("partition and feature matrix disagree on m"));
    }
    let mut a = gi.to_vec();
    let mut b = gj.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a == b {
        return Err(invalid("Rela needs two distinct groups"));
    }
    for g in [&a, &b] {
        if !context.groups().contains(g) {
            return Err(invalid(format!("group {g:?} is not part of the partition")));
        }
    }
    if context.len() < 2 {
        return Err(invalid("Rela needs at least two groups"));
    }
    Ok(Similarity::new(f).rela(&a, &b))
}

/// One evaluation of the best pair during clustering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStep {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub rela: f64,
    pub merged: bool,
}

/// Every argmax evaluation in order; the last entry has `merged == false`
/// when clustering stopped on the threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ClusterTrace {
    pub steps: Vec<ClusterStep>,
}

impl ClusterTrace {
    pub fn merges(&self) -> impl Iterator<Item = &ClusterStep> {
        self.steps.iter().filter(|s| s.merged)
    }
}

/// Greedy agglomeration from singletons. Ties go to the lexicographically
/// smallest `(min Gi, min Gj)` pair.
pub fn sd2_cluster(f: &FeatureMatrix, eta: f64) -> Partition {
    sd2_cluster_traced(f, eta).0
}

pub fn sd2_cluster_traced(f: &FeatureMatrix, eta: f64) -> (Partition, ClusterTrace) {
    assert!(f.m >= 1, "clustering needs at least one action dimension");
    let sim = Similarity::new(f);
    let mut groups: Vec<Vec<usize>> = (1..=f.m).map(|i| vec![i]).collect();
    let mut trace = ClusterTrace::default();

    while groups.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let score = sim.rela(&groups[i], &groups[j]);
                if best.is_none_or(|(_, _, b)| score > b) {
                    best = Some((i, j, score));
                }
            }
        }
        let (i, j, score) = best.expect("at least one pair");
        let merged = score > eta;
        trace.steps.push(ClusterStep {
            left: groups[i].clone(),
            right: groups[j].clone(),
            rela: score,
            merged,
        });
        if !merged {
            break;
        }
        let right = groups.remove(j);
        groups[i].extend(right);
        groups[i].sort_unstable();
        groups.sort_unstable_by_key(|g| g[0]);
    }
    let partition = Partition::new(groups, f.m).expect("merges preserve a disjoint cover");
    (partition, trace)
}
