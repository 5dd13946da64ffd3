//! Synthetic block-decomposable environments.
//!
//! Each action dimension `i` owns a position `p_i` (state index `i`) and a
//! velocity `v_i` (state index `m + i`). Action dimensions are grouped into
//! blocks; within block `j`
//!
//! ```text
//! v' = damping * v + gain * M_j a[G_j] + coupling * mean(v of other blocks)
//! p' = p + v'
//! ```
//!
//! and the reward is `-sum(p'^2)`. With zero coupling a block's trajectory
//! depends only on its own action coordinates, so the true action partition
//! is known by construction.

mod dataset;
mod spec;

pub use dataset::{collect_trajectories, episode_segments, episode_seed, load_dataset, save_dataset, Dataset, DatasetMeta, Policy, Transition, UniformRandomPolicy};
pub use spec::{env_reset, env_step, preset, BlockEnvSpec, PRESETS};
