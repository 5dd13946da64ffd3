use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;
use crate::sd2::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEnvSpec {
    pub name: String,
    /// Ground-truth action groups, 1-indexed.
    pub blocks: Vec<Vec<usize>>,
    pub gain: f64,
    pub damping: f64,
    pub cross_coupling: f64,
    /// One square row-major matrix per block, sized by the block.
    pub mixing: Vec<Vec<f64>>,
    pub horizon: usize,
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["blocks-2x3", "blocks-3x2", "blocks-4x2-coupled"];

const PRESET_MIXING_SEED: u64 = 0x5eed_b10c;
const PRESET_GAIN: f64 = 0.1;
const PRESET_DAMPING: f64 = 0.8;
const PRESET_HORIZON: usize = 50;

pub fn preset(name: &str) -> Result<BlockEnvSpec> {
    let (blocks, coupling): (Vec<Vec<usize>>, f64) = match name {
        "blocks-2x3" => (vec![vec![1, 2, 3], vec![4, 5, 6]], 0.0),
        "blocks-3x2" => (vec![vec![1, 2], vec![3, 4], vec![5, 6]], 0.0),
        "blocks-4x2-coupled" => (
            vec![vec![1, 2], vec![3, 4], vec![5, 6], vec![7, 8]],
            0.05,
        ),
        other => {
            return Err(invalid(format!(
                "unknown preset `{other}`; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    BlockEnvSpec::with_random_mixing(
        name,
        blocks,
        PRESET_GAIN,
        PRESET_DAMPING,
        coupling,
        PRESET_HORIZON,
        PRESET_MIXING_SEED,
    )
}

/// Draw a random orthonormal `d x d` matrix whose entries all have
/// magnitude at least `0.2`, so every action in a block drives every
/// velocity in it.
fn mixing_matrix<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
        for _ in 0..d {
            let mut c: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for prev in &cols {
                let dot: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in c.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.iter_mut().for_each(|x| *x /= norm);
            cols.push(c);
        }
        let mut m = vec![0.0; d * d];
        for (j, c) in cols.iter().enumerate() {
            for (i, v) in c.iter().enumerate() {
                m[i * d + j] = *v;
            }
        }
        if m.iter().all(|v| v.abs() >= 0.2) {
            return m;
        }
    }
}

impl BlockEnvSpec {
    pub fn with_random_mixing(
        name: &str,
        blocks: Vec<Vec<usize>>,
        gain: f64,
        damping: f64,
        cross_coupling: f64,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng_from(seed);
        let mixing = blocks
            .iter()
            .map(|b| mixing_matrix(b.len(), &mut rng))
            .collect();
        let spec = Self {
            name: name.to_string(),
            blocks,
            gain,
            damping,
            cross_coupling,
            mixing,
            horizon,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.blocks.iter().map(Vec::len).sum::<usize>();
        Partition::new(self.blocks.clone(), m)?;
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(invalid("damping must lie in (0, 1)"));
        }
        if self.cross_coupling < 0.0 || !self.cross_coupling.is_finite() {
            return Err(invalid("cross coupling must be finite and nonnegative"));
        }
        if !self.gain.is_finite() {
            return Err(invalid("gain must be finite"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon must be positive"));
        }
        if self.mixing.len() != self.blocks.len() {
            return Err(invalid("one mixing matrix per block required"));
        }
        for (b, mix) in self.blocks.iter().zip(&self.mixing) {
            if mix.len() != b.len() * b.len() || mix.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!(
                    "mixing matrix for block {b:?} must be {0}x{0} and finite",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.action_dim()
    }

    pub fn ground_truth(&self) -> Partition {
        Partition::new(self.blocks.clone(), self.action_dim()).expect("validated spec")
    }

    /// Stable 64-bit FNV-1a digest of the serialized spec, as hex.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Positions uniform in `[-1, 1]`, velocities zero.
pub fn env_reset(spec: &BlockEnvSpec, seed: u64) -> Vec<f64> {
    let m = spec.action_dim();
    let mut rng = rng_from(seed);
    let mut s = vec![0.0; 2 * m];
    for p in s.iter_mut().take(m) {
        *p = rng.random_range(-1.0..=1.0);
    }
    s
}

/// Advance one step. Action coordinates are clipped to `[-1, 1]`.
pub fn env_step(spec: &BlockEnvSpec, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = spec.action_dim();
    if state.len() != 2 * m {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: 2 * m,
            got: state.len(),
        });
    }
    if action.len() != m {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: m,
            got: action.len(),
        });
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            context: "environment state or action".into(),
        });
    }
    let a: Vec<f64> = action.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    let (pos, vel) = state.split_at(m);
    let total_v: f64 = vel.iter().sum();

    let mut next = vec![0.0; 2 * m];
    for (block, mix) in spec.blocks.iter().zip(&spec.mixing) {
        let d = block.len();
        let others = m - d;
        let coupling = if others > 0 && spec.cross_coupling != 0.0 {
            let own: f64 = block.iter().map(|&i| vel[i - 1]).sum();
            spec.cross_coupling * (total_v - own) / others as f64
        } else {
            0.0
        };
        for (r, &i) in block.iter().enumerate() {
            let drive: f64 = block
                .iter()
                .enumerate()
                .map(|(c, &k)| mix[r * d + c] * a[k - 1])
                .sum();
            let v = spec.damping * vel[i - 1] + spec.gain * drive + coupling;
            next[m + i - 1] = v;
            next[i - 1] = pos[i - 1] + v;
        }
    }
    let reward = -next[..m].iter().map(|p| p * p).sum::<f64>();
    Ok((next, reward))
}
