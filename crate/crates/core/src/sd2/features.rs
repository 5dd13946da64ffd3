use serde::{Deserialize, Serialize};

use crate::envs::Dataset;
use crate::error::{invalid, Result};

/// `m x n` matrix of absolute Pearson coefficients between each action
/// dimension and each state-change dimension. Row `i` is the feature vector
/// of action dimension `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(invalid("feature matrix needs at least one row"));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("feature rows must share a width"));
        }
        Ok(Self {
            m,
            n,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    /// Feature vector of action dimension `i` (0-based).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.to_bits() == xs[0].to_bits())
}

/// Pearson correlation; 0 when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    if x.len() < 2 || is_constant(x) || is_constant(y) {
        return 0.0;
    }
    let len = x.len() as f64;
    let mx = x.iter().sum::<f64>() / len;
    let my = y.iter().sum::<f64>() / len;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Absolute Pearson coefficients between every action column and every
/// state-delta column, pooled over all transitions.
pub fn pearson_features(dataset: &Dataset) -> Result<FeatureMatrix> {
    if dataset.len() < 2 {
        return Err(invalid("Pearson features need at least two transitions"));
    }
    let (m, n) = (dataset.action_dim(), dataset.state_dim());
    let actions: Vec<Vec<f64>> = (0..m)
        .map(|i| dataset.transitions.iter().map(|t| t.a[i]).collect())
        .collect();
    let deltas: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            dataset
                .transitions
                .iter()
                .map(|t| t.s_next[j] - t.s[j])
                .collect()
        })
        .collect();
    let mut entries = Vec::with_capacity(m * n);
    for a in &actions {
        for d in &deltas {
            entries.push(pearson(a, d).abs());
        }
    }
    Ok(FeatureMatrix { m, n, entries })
}
