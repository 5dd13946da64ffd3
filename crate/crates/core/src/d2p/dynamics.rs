use ndarray::Array2;

use super::model::WorldModel;
use crate::envs::{env_step, BlockEnvSpec, Transition};
use crate::error::{Error, Result};

/// Batched one-step predictor. Rows are independent samples.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Width of the carried latent, or `None` for memoryless models.
    fn latent_width(&self) -> Option<usize> {
        None
    }

    /// Predict `(next latent, next state, reward)` for each row.
    fn predict(
        &self,
        h: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Option<Array2<f64>>, Array2<f64>, Vec<f64>)>;
}

impl Dynamics for WorldModel {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn latent_width(&self) -> Option<usize> {
        self.is_recurrent().then_some(self.config.latent_width)
    }

    fn predict(
        &self,
        h: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Option<Array2<f64>>, Array2<f64>, Vec<f64>)> {
        let (h_next, s_pred, r) = self.predict_batch(h, s, a)?;
        Ok((self.is_recurrent().then_some(h_next), s_pred, r))
    }
}

/// The true environment step wrapped as a model.
#[derive(Debug, Clone)]
pub struct OracleModel {
    pub spec: BlockEnvSpec,
}

impl OracleModel {
    pub fn new(spec: BlockEnvSpec) -> Self {
        Self { spec }
    }
}

impl Dynamics for OracleModel {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.spec.action_dim()
    }

    fn predict(
        &self,
        _h: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Option<Array2<f64>>, Array2<f64>, Vec<f64>)> {
        let mut next = Array2::zeros(s.dim());
        let mut rewards = Vec::with_capacity(s.nrows());
        for (i, (srow, arow)) in s.outer_iter().zip(a.outer_iter()).enumerate() {
            let (s2, r) = env_step(&self.spec, &srow.to_vec(), &arow.to_vec())?;
            next.row_mut(i).assign(&ndarray::Array1::from(s2));
            rewards.push(r);
        }
        Ok((None, next, rewards))
    }
}

/// Closed-loop predicted trajectory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

/// Feed the model its own predictions along `actions`.
pub fn rollout(
    model: &dyn Dynamics,
    s0: &[f64],
    h0: Option<&[f64]>,
    actions: &[Vec<f64>],
) -> Result<Rollout> {
    let n = model.state_dim();
    let mut s = Array2::from_shape_vec((1, n), s0.to_vec()).map_err(|_| Error::DimensionMismatch {
        layer: 0,
        expected: n,
        got: s0.len(),
    })?;
    let mut h = match (model.latent_width(), h0) {
        (Some(w), Some(h)) => Some(
            Array2::from_shape_vec((1, w), h.to_vec()).map_err(|_| Error::DimensionMismatch {
                layer: 0,
                expected: w,
                got: h.len(),
            })?,
        ),
        (Some(w), None) => Some(Array2::zeros((1, w))),
        (None, _) => None,
    };
    let mut out = Rollout::default();
    for (step, a) in actions.iter().enumerate() {
        let av = Array2::from_shape_vec((1, a.len()), a.clone()).expect("row");
        let (h2, s2, r) = model.predict(h.as_ref(), &s, &av)?;
        if s2.iter().any(|v| !v.is_finite()) || !r[0].is_finite() {
            return Err(Error::NonFinite {
                step,
                context: "rollout prediction".into(),
            });
        }
        out.states.push(s2.iter().copied().collect());
        out.rewards.push(r[0]);
        s = s2;
        h = h2;
    }
    Ok(out)
}

/// Mean squared next-state error over `transitions`, teacher-forced. Recurrent
/// models restart their latent at the start of every contiguous episode run.
pub fn one_step_mse(model: &dyn Dynamics, transitions: &[Transition]) -> Result<f64> {
    if transitions.is_empty() {
        return Err(crate::error::invalid("no transitions to evaluate"));
    }
    let n = model.state_dim();
    let m = model.action_dim();
    let mut sq = 0.0;
    match model.latent_width() {
        None => {
            let s = stack(transitions.iter().map(|t| &t.s), n);
            let a = stack(transitions.iter().map(|t| &t.a), m);
            let (_, pred, _) = model.predict(None, &s, &a)?;
            for (row, t) in pred.outer_iter().zip(transitions) {
                sq += row.iter().zip(&t.s_next).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
            }
        }
        Some(w) => {
            for seg in crate::envs::episode_segments(transitions) {
                let mut h = Array2::zeros((1, w));
                for t in seg {
                    let s = stack(std::iter::once(&t.s), n);
                    let a = stack(std::iter::once(&t.a), m);
                    let (h2, pred, _) = model.predict(Some(&h), &s, &a)?;
                    sq += pred.iter().zip(&t.s_next).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
                    h = h2.expect("recurrent model returns a latent");
                }
            }
        }
    }
    Ok(sq / (transitions.len() * n) as f64)
}

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, width: usize) -> Array2<f64> {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let len = data.len() / width.max(1);
    Array2::from_shape_vec((len, width), data).expect("uniform row widths")
}
