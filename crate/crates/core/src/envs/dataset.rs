use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{env_reset, env_step, BlockEnvSpec};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_indexed, derive_seed, rng_for, streams};

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "ep")]
    pub episode_id: u64,
    pub t: u64,
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    #[serde(rename = "s2")]
    pub s_next: Vec<f64>,
}

impl Transition {
    pub fn delta(&self) -> Vec<f64> {
        self.s_next.iter().zip(&self.s).map(|(b, a)| b - a).collect()
    }

    fn is_finite(&self) -> bool {
        self.r.is_finite()
            && self
                .s
                .iter()
                .chain(&self.a)
                .chain(&self.s_next)
                .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_hash: Option<String>,
}

/// Transitions in generation order, strictly increasing in `(episode, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub transitions: Vec<Transition>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, transitions: Vec<Transition>) -> Result<Self> {
        let ds = Self { meta, transitions };
        for (i, tr) in ds.transitions.iter().enumerate() {
            ds.check_record(tr).map_err(|msg| invalid(format!("transition {i}: {msg}")))?;
            if i > 0 {
                let prev = &ds.transitions[i - 1];
                if (prev.episode_id, prev.t) >= (tr.episode_id, tr.t) {
                    return Err(invalid(format!("transition {i}: out of (episode, t) order")));
                }
            }
        }
        Ok(ds)
    }

    fn check_record(&self, tr: &Transition) -> std::result::Result<(), String> {
        if tr.s.len() != self.meta.n || tr.s_next.len() != self.meta.n {
            return Err(format!(
                "state width {} / {} does not match n = {}",
                tr.s.len(),
                tr.s_next.len(),
                self.meta.n
            ));
        }
        if tr.a.len() != self.meta.m {
            return Err(format!(
                "action width {} does not match m = {}",
                tr.a.len(),
                self.meta.m
            ));
        }
        if !tr.is_finite() {
            return Err("non-finite value".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.meta.n
    }

    pub fn action_dim(&self) -> usize {
        self.meta.m
    }

    /// Maximal runs of consecutive transitions from the same episode.
    pub fn episodes(&self) -> Vec<&[Transition]> {
        episode_segments(&self.transitions)
    }

    /// Append another dataset collected on the same environment, renumbering
    /// its episodes after the current last one.
    pub fn extend(&mut self, other: Dataset) -> Result<()> {
        if other.meta.n != self.meta.n || other.meta.m != self.meta.m {
            return Err(invalid("cannot merge datasets of different widths"));
        }
        let offset = self.transitions.last().map_or(0, |t| t.episode_id + 1);
        let base = other.transitions.first().map_or(0, |t| t.episode_id);
        self.transitions
            .extend(other.transitions.into_iter().map(|mut t| {
                t.episode_id = t.episode_id - base + offset;
                t
            }));
        Ok(())
    }
}

pub fn episode_segments(transitions: &[Transition]) -> Vec<&[Transition]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=transitions.len() {
        let boundary = i == transitions.len()
            || transitions[i].episode_id != transitions[i - 1].episode_id
            || transitions[i].t != transitions[i - 1].t + 1;
        if boundary {
            if start < i {
                out.push(&transitions[start..i]);
            }
            start = i;
        }
    }
    out
}

/// A state-feedback policy used for data collection.
pub trait Policy {
    fn name(&self) -> &str;
    fn act(&mut self, state: &[f64], t: usize) -> Vec<f64>;
}

/// Independent uniform draws in `[-1, 1]` for every action coordinate.
pub struct UniformRandomPolicy {
    m: usize,
    rng: ChaCha8Rng,
}

impl UniformRandomPolicy {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            rng: rng_for(seed, "policy"),
        }
    }
}

impl Policy for UniformRandomPolicy {
    fn name(&self) -> &str {
        "uniform-random"
    }

    fn act(&mut self, _state: &[f64], _t: usize) -> Vec<f64> {
        (0..self.m).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }
}

/// Per-episode start-state seed under a root seed.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    derive_indexed(derive_seed(seed, streams::DATA), episode)
}

/// Roll out `episodes` full-horizon episodes with `policy`.
pub fn collect_trajectories(
    spec: &BlockEnvSpec,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    collect_from(spec, policy, 0..episodes as u64, seed)
}

pub(crate) fn collect_from(
    spec: &BlockEnvSpec,
    policy: &mut dyn Policy,
    episode_ids: std::ops::Range<u64>,
    seed: u64,
) -> Result<Dataset> {
    if episode_ids.is_empty() {
        return Err(invalid("at least one episode is required"));
    }
    let m = spec.action_dim();
    let mut transitions = Vec::with_capacity(episode_ids.clone().count() * spec.horizon);
    for ep in episode_ids {
        let mut s = env_reset(spec, episode_seed(seed, ep));
        for t in 0..spec.horizon {
            let a = policy.act(&s, t);
            if a.len() != m {
                return Err(Error::DimensionMismatch {
                    layer: 0,
                    expected: m,
                    got: a.len(),
                });
            }
            let (s2, r) = env_step(spec, &s, &a)?;
            transitions.push(Transition {
                episode_id: ep,
                t: t as u64,
                s: std::mem::replace(&mut s, s2.clone()),
                a,
                r,
                s_next: s2,
            });
        }
    }
    let meta = DatasetMeta {
        env: spec.name.clone(),
        n: spec.state_dim(),
        m,
        seed,
        policy: Some(policy.name().to_string()),
        spec_hash: Some(spec.digest()),
    };
    Dataset::new(meta, transitions)
}

/// Write as JSON Lines: a metadata object, then one transition per line.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &dataset.meta)?;
    w.write_all(b"\n")?;
    for tr in &dataset.transitions {
        serde_json::to_writer(&mut w, tr)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a JSON Lines dataset. Errors carry the 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let meta: DatasetMeta = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing metadata line".into())),
            Some((i, l)) => {
                let l = l?;
                if l.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&l)
                    .map_err(|e| parse_err(i + 1, format!("bad metadata: {e}")))?;
            }
        }
    };
    let mut ds = Dataset {
        meta,
        transitions: Vec::new(),
    };
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let tr: Transition =
            serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?;
        ds.check_record(&tr).map_err(|m| parse_err(i + 1, m))?;
        if let Some(prev) = ds.transitions.last() {
            if (prev.episode_id, prev.t) >= (tr.episode_id, tr.t) {
                return Err(parse_err(i + 1, "out of (episode, t) order".into()));
            }
        }
        ds.transitions.push(tr);
    }
    Ok(ds)
}
