use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::planner::{plan_action, PlannerConfig};
use crate::bench::mean_std;
use crate::d2p::{
    D2PModelConfig, Dynamics, KernelKind, KernelLayout, Learner, OracleModel, TrainConfig,
    TrainedModel,
};
use crate::envs::{
    collect_trajectories, env_reset, env_step, episode_seed, BlockEnvSpec, Dataset, Transition,
    UniformRandomPolicy,
};
use crate::error::{invalid, Error, Result};
use crate::nn::Activation;
use crate::rng::{derive_indexed, derive_seed, streams};
use crate::sd2::{
    complete_decomposition, load_prior_partition, pearson_features, random_partition,
    sd2_cluster_traced, ClusterTrace, Partition,
};

/// Where the world model's action groups come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartitionSource {
    /// Cluster the initial random data.
    Clustered,
    /// One group per action dimension.
    Complete,
    Prior(PathBuf),
    /// Uniformly random partition into `k` groups.
    Random(usize),
    /// A single kernel fed the whole action.
    Monolithic,
}

impl FromStr for PartitionSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "clustered" => Self::Clustered,
            "complete" => Self::Complete,
            "monolithic" => Self::Monolithic,
            _ => {
                if let Some(path) = s.strip_prefix("prior:") {
                    Self::Prior(PathBuf::from(path))
                } else if let Some(k) = s.strip_prefix("random:") {
                    Self::Random(k.parse().map_err(|_| invalid(format!("bad group count in `{s}`")))?)
                } else {
                    return Err(invalid(format!(
                        "unknown partition source `{s}`; expected clustered, complete, prior:PATH, random:K or monolithic"
                    )));
                }
            }
        })
    }
}

impl fmt::Display for PartitionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Clustered => f.write_str("clustered"),
            Self::Complete => f.write_str("complete"),
            Self::Prior(p) => write!(f, "prior:{}", p.display()),
            Self::Random(k) => write!(f, "random:{k}"),
            Self::Monolithic => f.write_str("monolithic"),
        }
    }
}

impl TryFrom<String> for PartitionSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PartitionSource> for String {
    fn from(p: PartitionSource) -> String {
        p.to_string()
    }
}

/// Layer widths and cell type, independent of the action layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    #[serde(default)]
    pub kernel_kind: KernelKind,
    pub latent_width: usize,
    pub kernel_hidden: usize,
    pub decoder_hidden: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            kernel_kind: KernelKind::Nonrecurrent,
            latent_width: 32,
            kernel_hidden: 32,
            decoder_hidden: 32,
            activation: Activation::Tanh,
        }
    }
}

impl ModelShape {
    pub fn config(&self, n: usize, m: usize, layout: KernelLayout) -> D2PModelConfig {
        D2PModelConfig {
            kernel_kind: self.kernel_kind,
            latent_width: self.latent_width,
            kernel_hidden: self.kernel_hidden,
            decoder_hidden: self.decoder_hidden,
            activation: self.activation,
            ..D2PModelConfig::new(n, m, layout)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbrlLoopConfig {
    /// Total iterations including the initial random-data iteration.
    pub outer_iterations: usize,
    pub initial_episodes: usize,
    pub episodes_per_iteration: usize,
    pub train_steps_per_iteration: usize,
    pub planner: PlannerConfig,
    pub partition: PartitionSource,
    pub eta: f64,
    pub model: ModelShape,
    pub train: TrainConfig,
    /// When set, `kernel_hidden` is resized so the model has this many
    /// parameters (within 5%).
    pub param_target: Option<usize>,
}

impl Default for MbrlLoopConfig {
    fn default() -> Self {
        Self {
            outer_iterations: 10,
            initial_episodes: 5,
            episodes_per_iteration: 2,
            train_steps_per_iteration: 1500,
            planner: PlannerConfig::default(),
            partition: PartitionSource::Clustered,
            eta: 0.0,
            model: ModelShape::default(),
            train: TrainConfig::default(),
            param_target: None,
        }
    }
}

impl MbrlLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0
            || self.initial_episodes == 0
            || self.episodes_per_iteration == 0
            || self.train_steps_per_iteration == 0
        {
            return Err(invalid("loop counts must be at least 1"));
        }
        self.planner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub returns: Vec<f64>,
}

impl IterationStats {
    fn from_returns(iteration: usize, returns: Vec<f64>) -> Self {
        let (mean_return, std_return) = mean_std(&returns);
        Self {
            iteration,
            mean_return,
            std_return,
            returns,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MbrlRun<L> {
    pub curve: Vec<IterationStats>,
    /// Action groups of the model, absent for the monolithic layout.
    pub partition: Option<Partition>,
    pub cluster_trace: Option<ClusterTrace>,
    pub model: L,
    /// Every transition collected, in generation order.
    pub data: Dataset,
    /// Planning calls that hit non-finite predictions.
    pub planner_fallbacks: usize,
}

impl<L> MbrlRun<L> {
    pub fn final_return(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |s| s.mean_return)
    }
}

/// Resolve a partition source against the initial data.
pub fn resolve_partition(
    source: &PartitionSource,
    data: &Dataset,
    eta: f64,
    seed: u64,
) -> Result<(Option<Partition>, Option<ClusterTrace>)> {
    let m = data.action_dim();
    Ok(match source {
        PartitionSource::Clustered => {
            let (p, trace) = sd2_cluster_traced(&pearson_features(data)?, eta);
            (Some(p), Some(trace))
        }
        PartitionSource::Complete => (Some(complete_decomposition(m)?), None),
        PartitionSource::Prior(path) => (Some(load_prior_partition(path, m)?), None),
        PartitionSource::Random(k) => (
            Some(random_partition(m, *k, derive_seed(seed, "partition"))?),
            None,
        ),
        PartitionSource::Monolithic => (None, None),
    })
}

fn planner_seed(seed: u64, episode: u64, t: usize) -> u64 {
    derive_indexed(derive_indexed(derive_seed(seed, streams::PLANNER), episode), t as u64)
}

/// One MPC episode on the true environment, planning with `model`.
/// Returns the transitions, the return and the number of planner fallbacks.
pub fn mpc_episode(
    spec: &BlockEnvSpec,
    model: &dyn Dynamics,
    planner: &PlannerConfig,
    episode: u64,
    seed: u64,
) -> Result<(Vec<Transition>, f64, usize)> {
    let mut s = env_reset(spec, episode_seed(seed, episode));
    let mut h = model.latent_width().map(|w| vec![0.0; w]);
    let mut out = Vec::with_capacity(spec.horizon);
    let mut ret = 0.0;
    let mut fallbacks = 0;
    for t in 0..spec.horizon {
        let (a, report) = plan_action(model, &s, h.as_deref(), planner, planner_seed(seed, episode, t))?;
        fallbacks += usize::from(report.fallback);
        if let Some(hv) = &h {
            let row = |v: &[f64]| ndarray::Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
            let (h2, _, _) = model.predict(Some(&row(hv)), &row(&s), &row(&a))?;
            h = h2.map(|x| x.iter().copied().collect());
        }
        let (s2, r) = env_step(spec, &s, &a)?;
        ret += r;
        out.push(Transition {
            episode_id: episode,
            t: t as u64,
            s: std::mem::replace(&mut s, s2.clone()),
            a,
            r,
            s_next: s2,
        });
    }
    Ok((out, ret, fallbacks))
}

fn episode_returns(data: &Dataset) -> Vec<f64> {
    data.episodes()
        .iter()
        .map(|ep| ep.iter().map(|t| t.r).sum())
        .collect()
}

/// Shared loop: random data, then alternate fitting and MPC collection.
fn run_loop<L: Learner>(
    spec: &BlockEnvSpec,
    cfg: &MbrlLoopConfig,
    seed: u64,
    make: impl FnOnce(&Dataset) -> Result<(L, Option<Partition>, Option<ClusterTrace>)>,
) -> Result<MbrlRun<L>> {
    cfg.validate()?;
    let m = spec.action_dim();
    let mut policy = UniformRandomPolicy::new(m, seed);
    let mut data = collect_trajectories(spec, &mut policy, cfg.initial_episodes, seed)?;
    let mut curve = vec![IterationStats::from_returns(0, episode_returns(&data))];
    let (mut model, partition, cluster_trace) = make(&data)?;
    let mut next_episode = cfg.initial_episodes as u64;
    let mut planner_fallbacks = 0;
    for it in 1..cfg.outer_iterations {
        let fail = |e: Error| invalid(format!("iteration {it} failed: {e}"));
        model.fit(&data.transitions, cfg.train_steps_per_iteration).map_err(fail)?;
        let mut returns = Vec::with_capacity(cfg.episodes_per_iteration);
        let mut fresh = Vec::new();
        for _ in 0..cfg.episodes_per_iteration {
            let (ts, ret, fb) = mpc_episode(spec, &model, &cfg.planner, next_episode, seed).map_err(fail)?;
            next_episode += 1;
            planner_fallbacks += fb;
            returns.push(ret);
            fresh.extend(ts);
        }
        data.transitions.extend(fresh);
        curve.push(IterationStats::from_returns(it, returns));
    }
    Ok(MbrlRun {
        curve,
        partition,
        cluster_trace,
        model,
        data,
        planner_fallbacks,
    })
}

/// Build the world model described by `cfg` once the partition is known.
pub fn build_model(
    spec: &BlockEnvSpec,
    cfg: &MbrlLoopConfig,
    partition: Option<&Partition>,
    seed: u64,
) -> Result<TrainedModel> {
    let layout = match partition {
        Some(p) => KernelLayout::Decomposed(p.clone()),
        None => KernelLayout::Monolithic,
    };
    let mut config = cfg.model.config(spec.state_dim(), spec.action_dim(), layout);
    if let Some(target) = cfg.param_target {
        config = config.matched_to(target, 0.05)?;
    }
    TrainedModel::new(config, cfg.train.clone(), seed)
}

/// Model-based control with a learned decomposed world model.
pub fn run_mbrl(spec: &BlockEnvSpec, cfg: &MbrlLoopConfig, seed: u64) -> Result<MbrlRun<TrainedModel>> {
    run_loop(spec, cfg, seed, |data| {
        let (partition, trace) = resolve_partition(&cfg.partition, data, cfg.eta, seed)?;
        let model = build_model(spec, cfg, partition.as_ref(), seed)?;
        Ok((model, partition, trace))
    })
}

/// The same loop planning with the true dynamics: the upper reference.
pub fn run_oracle(spec: &BlockEnvSpec, cfg: &MbrlLoopConfig, seed: u64) -> Result<MbrlRun<OracleModel>> {
    run_loop(spec, cfg, seed, |_| Ok((OracleModel::new(spec.clone()), None, None)))
}

/// Write `learning_curve.csv` into `dir`.
pub fn write_learning_curve(curve: &[IterationStats], path: &Path) -> Result<()> {
    let mut csv = String::from("iteration,mean_return,std_return\n");
    for s in curve {
        csv.push_str(&format!("{},{:e},{:e}\n", s.iteration, s.mean_return, s.std_return));
    }
    std::fs::write(path, csv)?;
    Ok(())
}
