use serde::{Deserialize, Serialize};

use super::tape::Grads;
use super::tensor::ParamSet;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Self::with_betas(params, learning_rate, 0.9, 0.999, 1e-8).expect("default betas are valid")
    }

    pub fn with_betas(
        params: &ParamSet,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(invalid("Adam betas must lie in [0, 1)"));
        }
        if epsilon <= 0.0 {
            return Err(invalid("Adam epsilon must be positive"));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        })
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamSet, grads: &Grads, state: &mut AdamState) -> Result<()> {
    if grads.0.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(invalid(format!(
            "Adam expects {} tensors, got {} gradients and {} moments",
            params.len(),
            grads.0.len(),
            state.first_moment.len()
        )));
    }
    for (i, (name, t)) in params.iter().enumerate() {
        if grads.0[i].len() != t.len() || state.first_moment[i].len() != t.len() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: t.shape.clone(),
                got: vec![grads.0[i].len()],
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    for (i, (_, tensor)) in params.iter_mut().enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (k, p) in tensor.values.iter_mut().enumerate() {
            let g = grads.0[i][k];
            m[k] = b1 * m[k] + (1.0 - b1) * g;
            v[k] = b2 * v[k] + (1.0 - b2) * g * g;
            // exact-zero gradients leave the coordinate in place
            if g == 0.0 {
                continue;
            }
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite {
            step: state.step_count as usize,
            context: "parameters after Adam update".into(),
        });
    }
    Ok(())
}
