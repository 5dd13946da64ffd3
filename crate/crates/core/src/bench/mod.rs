//! Model-error benchmarks: the expanding-dataset protocol, multi-step
//! rollout error and report emission.
//!
//! The error metric throughout is squared next-state error (no reward term),
//! averaged over state coordinates.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::d2p::{one_step_mse, rollout, D2PModelConfig, Dynamics, Learner, TrainConfig, TrainedModel};
use crate::envs::{env_reset, env_step, episode_segments, BlockEnvSpec, Transition};
use crate::error::{invalid, Result};
use crate::rng::{derive_indexed, rng_for, rng_from, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandingSchedule {
    pub fractions: Vec<f64>,
    pub steps_per_stage: usize,
}

impl Default for ExpandingSchedule {
    fn default() -> Self {
        Self::uniform(10, 500).expect("valid default")
    }
}

impl ExpandingSchedule {
    pub fn new(fractions: Vec<f64>, steps_per_stage: usize) -> Result<Self> {
        let s = Self {
            fractions,
            steps_per_stage,
        };
        s.validate()?;
        Ok(s)
    }

    /// `stages` equal steps ending at 1.0.
    pub fn uniform(stages: usize, steps_per_stage: usize) -> Result<Self> {
        if stages == 0 {
            return Err(invalid("schedule needs at least one stage"));
        }
        Self::new(
            (1..=stages).map(|i| i as f64 / stages as f64).collect(),
            steps_per_stage,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.fractions;
        if f.is_empty() {
            return Err(invalid("schedule needs at least one stage"));
        }
        if f.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return Err(invalid("schedule fractions must lie in (0, 1]"));
        }
        if f.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("schedule fractions must be strictly increasing"));
        }
        if *f.last().unwrap() != 1.0 {
            return Err(invalid("last schedule fraction must be 1.0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    /// Cumulative training steps when the error was measured.
    pub step: usize,
    pub mse: f64,
    pub mse_rollout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub label: String,
    pub seed: u64,
    pub points: Vec<ErrorPoint>,
}

impl ErrorCurve {
    pub fn final_mse(&self) -> Option<f64> {
        self.points.last().map(|p| p.mse)
    }
}

/// Knobs for [`expanding_error_protocol`] beyond the schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Fraction of each prefix, taken from its most recent end, held out.
    pub eval_split: f64,
    /// Rollout length for the optional closed-loop error column.
    pub rollout_horizon: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            eval_split: 0.2,
            rollout_horizon: None,
        }
    }
}

/// Index ranges `(train, eval)` of one stage.
pub fn stage_split(len: usize, fraction: f64, eval_split: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let prefix = ((len as f64 * fraction).round() as usize).clamp(1, len);
    let held = ((prefix as f64 * eval_split).round() as usize).min(prefix);
    let cut = prefix - held;
    (0..cut, cut..prefix)
}

/// Train one learner on a time-ordered dataset that grows stage by stage,
/// measuring held-out error on the newest slice of each prefix.
pub fn expanding_error_protocol(
    learner: &mut dyn Learner,
    data: &[Transition],
    schedule: &ExpandingSchedule,
    protocol: &ProtocolConfig,
    seed: u64,
) -> Result<ErrorCurve> {
    schedule.validate()?;
    if !(0.0..1.0).contains(&protocol.eval_split) || protocol.eval_split == 0.0 {
        return Err(invalid("eval_split must lie in (0, 1)"));
    }
    if data.windows(2).any(|w| {
        (w[1].episode_id, w[1].t) <= (w[0].episode_id, w[0].t)
    }) {
        return Err(invalid("dataset must be in generation order"));
    }
    let mut points = Vec::with_capacity(schedule.fractions.len());
    let mut steps = 0;
    for &f in &schedule.fractions {
        let (train, eval) = stage_split(data.len(), f, protocol.eval_split);
        if train.len() < learner.min_batch() {
            return Err(invalid(format!(
                "stage at fraction {f} has {} training transitions, fewer than one batch of {}",
                train.len(),
                learner.min_batch()
            )));
        }
        if eval.is_empty() {
            return Err(invalid(format!("stage at fraction {f} has no held-out transitions")));
        }
        assert!(train.end <= eval.start, "train and eval overlap");
        learner.fit(&data[train], schedule.steps_per_stage)?;
        steps += schedule.steps_per_stage;
        let held = &data[eval];
        let mse_rollout = match protocol.rollout_horizon {
            Some(h) => Some(held_out_rollout_mse(&*learner, held, h)?),
            None => None,
        };
        points.push(ErrorPoint {
            step: steps,
            mse: one_step_mse(&*learner, held)?,
            mse_rollout,
        });
    }
    Ok(ErrorCurve {
        label: learner.label(),
        seed,
        points,
    })
}

/// One `(label, seed)` cell of a comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchJob {
    pub label: String,
    pub seed: u64,
    pub model: D2PModelConfig,
    pub train: TrainConfig,
}

/// Run the protocol for every job on the same data. Jobs run in parallel;
/// curves come back in job order.
pub fn run_grid(
    jobs: &[BenchJob],
    data: &[Transition],
    schedule: &ExpandingSchedule,
    protocol: &ProtocolConfig,
) -> Result<Vec<ErrorCurve>> {
    jobs.par_iter()
        .map(|job| {
            let mut learner = TrainedModel::new(job.model.clone(), job.train.clone(), job.seed)?
                .with_label(job.label.clone());
            expanding_error_protocol(&mut learner, data, schedule, protocol, job.seed)
        })
        .collect()
}

/// Mean squared state error of `horizon`-step rollouts started at the
/// beginning of every held-out episode run long enough to hold one.
fn held_out_rollout_mse(model: &dyn Dynamics, held: &[Transition], horizon: usize) -> Result<f64> {
    let horizon = horizon.max(1);
    let mut total = 0.0;
    let mut count = 0usize;
    for seg in episode_segments(held) {
        for chunk in seg.chunks_exact(horizon) {
            let actions: Vec<Vec<f64>> = chunk.iter().map(|t| t.a.clone()).collect();
            let ro = rollout(model, &chunk[0].s, None, &actions)?;
            for (pred, t) in ro.states.iter().zip(chunk) {
                total += pred.iter().zip(&t.s_next).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
                count += pred.len();
            }
        }
    }
    if count == 0 {
        return Ok(f64::NAN);
    }
    Ok(total / count as f64)
}

/// Per-step mean squared state error of closed-loop model rollouts against
/// the true environment under shared random actions.
///
/// Start states are reached by a random number of random steps from reset,
/// so they cover the states a random policy visits.
pub fn multistep_error(
    model: &dyn Dynamics,
    spec: &BlockEnvSpec,
    horizon: usize,
    num_starts: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if num_starts == 0 {
        return Err(invalid("need at least one start state"));
    }
    let m = spec.action_dim();
    let n = spec.state_dim();
    let mut sums = vec![0.0; horizon];
    let root = rng_for(seed, streams::DATA).random::<u64>();
    for i in 0..num_starts {
        let mut rng = rng_from(derive_indexed(root, i as u64));
        let mut s = env_reset(spec, rng.random());
        let warmup = rng.random_range(0..spec.horizon.max(1));
        for _ in 0..warmup {
            let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect();
            s = env_step(spec, &s, &a)?.0;
        }
        let actions: Vec<Vec<f64>> = (0..horizon)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        let pred = rollout(model, &s, None, &actions)?;
        let mut truth = s.clone();
        for (k, a) in actions.iter().enumerate() {
            truth = env_step(spec, &truth, a)?.0;
            sums[k] += pred.states[k]
                .iter()
                .zip(&truth)
                .map(|(p, y)| (p - y).powi(2))
                .sum::<f64>()
                / n as f64;
        }
    }
    Ok(sums.into_iter().map(|x| x / num_starts as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub mean_final_mse: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub seeds: Vec<u64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(curves: &[ErrorCurve]) -> Result<BTreeMap<String, LabelSummary>> {
    if curves.is_empty() {
        return Err(invalid("no curves to report"));
    }
    let mut by_label: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for c in curves {
        let last = c
            .final_mse()
            .ok_or_else(|| invalid(format!("curve `{}` has no points", c.label)))?;
        by_label.entry(c.label.clone()).or_default().push((c.seed, last));
    }
    Ok(by_label
        .into_iter()
        .map(|(label, runs)| {
            let finals: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let (mean, std) = mean_std(&finals);
            let summary = LabelSummary {
                mean_final_mse: mean,
                std,
                seeds: runs.iter().map(|r| r.0).collect(),
            };
            (label, summary)
        })
        .collect())
}

/// Files written by [`comparison_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub curves_csv: PathBuf,
    pub summary_json: PathBuf,
    pub manifest_json: PathBuf,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:e}")).unwrap_or_default()
}

/// Long-format CSV of every curve point plus a per-label JSON summary.
pub fn comparison_report(curves: &[ErrorCurve], dir: &Path) -> Result<ReportFiles> {
    let summary = summarize(curves)?;
    fs::create_dir_all(dir)?;
    let mut csv = String::from("label,seed,step,mse,mse_rollout\n");
    for c in curves {
        for p in &c.points {
            csv.push_str(&format!(
                "{},{},{},{:e},{}\n",
                c.label,
                c.seed,
                p.step,
                p.mse,
                fmt_opt(p.mse_rollout)
            ));
        }
    }
    let files = ReportFiles {
        curves_csv: dir.join("curves.csv"),
        summary_json: dir.join("summary.json"),
        manifest_json: dir.join("report_manifest.json"),
    };
    fs::write(&files.curves_csv, csv)?;
    fs::write(&files.summary_json, serde_json::to_string_pretty(&summary)? + "\n")?;
    let manifest = serde_json::json!({
        "metric": "one-step next-state MSE",
        "files": [
            file_name(&files.curves_csv),
            file_name(&files.summary_json),
        ],
    });
    fs::write(&files.manifest_json, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Column `mse` of a curves CSV written by [`comparison_report`], keyed by
/// `(label, seed)` and keeping the last row of each.
pub fn read_final_mse(csv: &str) -> Result<BTreeMap<(String, u64), f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in csv.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || crate::Error::Parse {
            line: i + 1,
            message: format!("expected label,seed,step,mse,mse_rollout: `{line}`"),
        };
        if cols.len() != 5 {
            return Err(bad());
        }
        let seed = cols[1].parse().map_err(|_| bad())?;
        let mse = cols[3].parse().map_err(|_| bad())?;
        out.insert((cols[0].to_string(), seed), mse);
    }
    Ok(out)
}
