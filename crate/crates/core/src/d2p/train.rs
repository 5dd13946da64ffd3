use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::D2PModelConfig;
use super::dynamics::{stack, Dynamics, OracleModel};
use super::model::WorldModel;
use crate::envs::{episode_segments, Transition};
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, AdamState, Grads, ParamSet, Tape, Var};
use crate::rng::{rng_for, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    /// Truncated sequence length for recurrent kernels.
    pub seq_len: usize,
    /// Weight of the reward term relative to the state-delta terms.
    pub reward_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            steps: 2000,
            lr: 3e-3,
            seq_len: 16,
            reward_weight: 1.0,
        }
    }
}

/// Teacher-forced targets for one batch of transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub s_next: Array2<f64>,
    pub r: Array2<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(ts: impl IntoIterator<Item = &'a Transition> + Clone, n: usize, m: usize) -> Self {
        let rs: Vec<f64> = ts.clone().into_iter().map(|t| t.r).collect();
        Self {
            s: stack(ts.clone().into_iter().map(|t| &t.s), n),
            a: stack(ts.clone().into_iter().map(|t| &t.a), m),
            s_next: stack(ts.into_iter().map(|t| &t.s_next), n),
            r: Array2::from_shape_vec((rs.len(), 1), rs).expect("column"),
        }
    }

    pub fn rows(&self) -> usize {
        self.s.nrows()
    }
}

/// Time-major batch of equally long sequences.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub steps: Vec<Batch>,
}

fn step_loss(tape: &mut Tape, s_pred: Var, r_pred: Var, batch: &Batch, reward_weight: f64, n: usize) -> Var {
    let target = tape.constant(batch.s_next.clone());
    let ds = tape.sub(s_pred, target);
    let sq = tape.square(ds);
    let state_sum = tape.sum_all(sq);
    let rt = tape.constant(batch.r.clone());
    let dr = tape.sub(r_pred, rt);
    let rsq = tape.square(dr);
    let rsum = tape.sum_all(rsq);
    let rsum = tape.affine(rsum, reward_weight, 0.0);
    let total = tape.add(state_sum, rsum);
    tape.affine(total, 1.0 / (batch.rows() * (n + 1)) as f64, 0.0)
}

impl WorldModel {
    /// Record the teacher-forced loss of one transition batch with `params`
    /// substituted for the model's own tensors.
    pub fn transition_loss(&self, params: &ParamSet, batch: &Batch, reward_weight: f64) -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars = tape.bind(params);
        let h0 = self
            .is_recurrent()
            .then(|| tape.constant(Array2::zeros((batch.rows(), self.config.latent_width))));
        let s = tape.constant(batch.s.clone());
        let out = self.step_on_tape(&mut tape, &vars, h0, s, &batch.a);
        let loss = step_loss(&mut tape, out.s_pred, out.r_pred, batch, reward_weight, self.config.state_dim);
        Ok((tape, loss))
    }

    /// Loss averaged over the steps of a sequence batch, latent carried
    /// through time from zero.
    pub fn sequence_loss(&self, params: &ParamSet, seq: &SequenceBatch, reward_weight: f64) -> Result<(Tape, Var)> {
        if seq.steps.is_empty() {
            return Err(invalid("empty sequence batch"));
        }
        let mut tape = Tape::new();
        let vars = tape.bind(params);
        let rows = seq.steps[0].rows();
        let mut h = self
            .is_recurrent()
            .then(|| tape.constant(Array2::zeros((rows, self.config.latent_width))));
        let mut losses = Vec::with_capacity(seq.steps.len());
        for b in &seq.steps {
            let s = tape.constant(b.s.clone());
            let out = self.step_on_tape(&mut tape, &vars, h, s, &b.a);
            losses.push(step_loss(&mut tape, out.s_pred, out.r_pred, b, reward_weight, self.config.state_dim));
            if self.is_recurrent() {
                h = Some(out.h);
            }
        }
        let loss = tape.mean(&losses);
        Ok((tape, loss))
    }

    pub fn transition_grad(&self, batch: &Batch, reward_weight: f64) -> Result<(f64, Grads)> {
        let (tape, loss) = self.transition_loss(&self.params, batch, reward_weight)?;
        let g = tape.backward(loss, 1.0, &self.params)?;
        Ok((tape.value(loss)[[0, 0]], g))
    }

    pub fn sequence_grad(&self, seq: &SequenceBatch, reward_weight: f64) -> Result<(f64, Grads)> {
        let (tape, loss) = self.sequence_loss(&self.params, seq, reward_weight)?;
        let g = tape.backward(loss, 1.0, &self.params)?;
        Ok((tape.value(loss)[[0, 0]], g))
    }
}

/// Optimizer and sampling state that persists across calls, so a model can
/// be trained incrementally on a growing dataset.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: AdamState,
    rng: ChaCha8Rng,
    steps_done: usize,
}

impl Trainer {
    pub fn new(model: &WorldModel, config: TrainConfig, seed: u64) -> Self {
        Self {
            adam: AdamState::new(&model.params, config.lr),
            rng: rng_for(seed, streams::SHUFFLE),
            config,
            steps_done: 0,
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Run `steps` optimizer steps on `data`; returns the per-step loss.
    pub fn train_on(&mut self, model: &mut WorldModel, data: &[Transition], steps: usize) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(invalid("training needs at least one transition"));
        }
        let (n, m) = (model.config.state_dim, model.config.action_dim);
        let windows: Vec<&[Transition]> = if model.is_recurrent() {
            let seq_len = self.config.seq_len.max(1);
            let w: Vec<&[Transition]> = episode_segments(data)
                .into_iter()
                .flat_map(|seg| seg.windows(seq_len))
                .collect();
            if w.is_empty() {
                return Err(invalid(format!(
                    "recurrent training needs an episode run of at least {seq_len} transitions"
                )));
            }
            w
        } else {
            Vec::new()
        };
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (loss, grads) = if model.is_recurrent() {
                let picks: Vec<&[Transition]> = (0..self.config.batch)
                    .map(|_| windows[self.rng.random_range(0..windows.len())])
                    .collect();
                let seq = SequenceBatch {
                    steps: (0..self.config.seq_len.max(1))
                        .map(|t| Batch::from_transitions(picks.iter().map(|w| &w[t]), n, m))
                        .collect(),
                };
                model.sequence_grad(&seq, self.config.reward_weight)?
            } else {
                let idx: Vec<usize> = (0..self.config.batch)
                    .map(|_| self.rng.random_range(0..data.len()))
                    .collect();
                let batch = Batch::from_transitions(idx.iter().map(|&i| &data[i]), n, m);
                model.transition_grad(&batch, self.config.reward_weight)?
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step: self.steps_done,
                    context: "training loss".into(),
                });
            }
            if self.config.lr != 0.0 {
                adam_step(&mut model.params, &grads, &mut self.adam)?;
            }
            trace.push(loss);
            self.steps_done += 1;
        }
        Ok(trace)
    }
}

/// Train from fresh optimizer state; returns the per-step loss trace.
pub fn train_model(model: &mut WorldModel, data: &[Transition], config: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    let mut trainer = Trainer::new(model, config.clone(), seed);
    trainer.train_on(model, data, config.steps)
}

/// Something the benchmark and control loops can fit and then query.
pub trait Learner: Dynamics {
    fn label(&self) -> String;

    /// Smallest training set the learner accepts.
    fn min_batch(&self) -> usize {
        1
    }

    /// Continue training on `data` for `steps` optimizer steps.
    fn fit(&mut self, data: &[Transition], steps: usize) -> Result<Vec<f64>>;
}

/// A world model paired with its persistent optimizer state.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub label: String,
    pub model: WorldModel,
    pub trainer: Trainer,
}

impl TrainedModel {
    pub fn new(config: D2PModelConfig, train: TrainConfig, seed: u64) -> Result<Self> {
        let model = WorldModel::new(config, seed)?;
        let trainer = Trainer::new(&model, train, seed);
        Ok(Self {
            label: model.config.layout.label(),
            model,
            trainer,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Dynamics for TrainedModel {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    fn latent_width(&self) -> Option<usize> {
        Dynamics::latent_width(&self.model)
    }

    fn predict(
        &self,
        h: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Option<Array2<f64>>, Array2<f64>, Vec<f64>)> {
        self.model.predict(h, s, a)
    }
}

impl Learner for TrainedModel {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn min_batch(&self) -> usize {
        self.trainer.config.batch
    }

    fn fit(&mut self, data: &[Transition], steps: usize) -> Result<Vec<f64>> {
        self.trainer.train_on(&mut self.model, data, steps)
    }
}

impl Learner for OracleModel {
    fn label(&self) -> String {
        "oracle".into()
    }

    fn fit(&mut self, _data: &[Transition], _steps: usize) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}
