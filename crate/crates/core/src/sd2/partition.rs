use std::path::Path;

use rand::Rng;
use serde::{Serialize, Serializer};

use crate::error::{invalid, Error, PartitionFault, Result};
use crate::rng::rng_from;

/// A disjoint cover of the action indices `1..=m`.
///
/// Always canonical: each group ascending, groups ordered by their smallest
/// element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    m: usize,
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.groups.serialize(s)
    }
}

impl Partition {
    /// Validate and canonicalize 1-indexed groups over `1..=m`.
    pub fn new(mut groups: Vec<Vec<usize>>, m: usize) -> Result<Self> {
        let fault = |kind, index| Error::Partition { kind, index };
        let mut seen = vec![false; m + 1];
        for g in &groups {
            if g.is_empty() {
                return Err(fault(PartitionFault::EmptyGroup, 0));
            }
            for &i in g {
                if i == 0 || i > m {
                    return Err(fault(PartitionFault::OutOfRange, i));
                }
                if seen[i] {
                    return Err(fault(PartitionFault::Overlap, i));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = (1..=m).find(|&i| !seen[i]) {
            return Err(fault(PartitionFault::Gap, missing));
        }
        if m == 0 {
            return Err(invalid("a partition needs at least one action dimension"));
        }
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_unstable_by_key(|g| g[0]);
        Ok(Self { groups, m })
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Number of groups.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn action_dim(&self) -> usize {
        self.m
    }

    /// Groups with 0-based indices.
    pub fn zero_based(&self) -> Vec<Vec<usize>> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|i| i - 1).collect())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.groups).expect("integers serialize")
    }

    /// Parse a JSON list of integer lists and validate it against `m`.
    pub fn from_json(text: &str, m: usize) -> Result<Self> {
        let groups: Vec<Vec<usize>> = serde_json::from_str(text)?;
        Self::new(groups, m)
    }

    /// The single-group partition `{{1..m}}`.
    pub fn single(m: usize) -> Result<Self> {
        Self::new(vec![(1..=m).collect()], m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Every action dimension in its own group.
pub fn complete_decomposition(m: usize) -> Result<Partition> {
    Partition::new((1..=m).map(|i| vec![i]).collect(), m)
}

/// Read a human-authored partition file.
pub fn load_prior_partition(path: &Path, m: usize) -> Result<Partition> {
    Partition::from_json(&std::fs::read_to_string(path)?, m)
}

/// Uniformly random assignment of `1..=m` to exactly `k` nonempty groups.
///
/// Labels are drawn sequentially with probabilities proportional to the
/// number of surjective completions, which makes every surjective labelling
/// equally likely.
pub fn random_partition(m: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 || k > m {
        return Err(invalid(format!("need 1 <= k <= m, got k = {k}, m = {m}")));
    }
    // ways[r][e]: labellings of r more indices that fill e still-empty groups
    let mut ways = vec![vec![0.0f64; k + 1]; m + 1];
    ways[0][0] = 1.0;
    for r in 1..=m {
        for e in 0..=k {
            let keep = (k - e) as f64 * ways[r - 1][e];
            let fill = if e > 0 { e as f64 * ways[r - 1][e - 1] } else { 0.0 };
            ways[r][e] = keep + fill;
        }
    }
    let mut rng = rng_from(seed);
    let mut labels = vec![0usize; m];
    let mut used: Vec<usize> = Vec::with_capacity(k);
    for (idx, label) in labels.iter_mut().enumerate() {
        let remaining = m - idx;
        let empty = k - used.len();
        let keep = (k - empty) as f64 * ways[remaining - 1][empty];
        let total = ways[remaining][empty];
        if rng.random::<f64>() * total < keep {
            *label = used[rng.random_range(0..used.len())];
        } else {
            // a fresh label; which one is irrelevant once labels are forgotten
            *label = used.len();
            used.push(used.len());
        }
    }
    let mut groups = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        groups[*l].push(i + 1);
    }
    Partition::new(groups, m)
}
