use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::d2p::Dynamics;
use crate::error::{invalid, Result};
use crate::rng::derive_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    RandomShooting,
    #[default]
    Cem,
}

/// Sampling-based MPC settings. Actions are always bounded to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub mode: PlannerMode,
    /// Initial CEM sampling spread around a zero mean.
    pub init_std: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            population: 200,
            elites: 20,
            iterations: 3,
            mode: PlannerMode::Cem,
            init_std: 0.5,
        }
    }
}

impl PlannerConfig {
    /// CEM with the elite count set to 10% of the population.
    pub fn cem(horizon: usize, population: usize) -> Self {
        Self {
            horizon,
            population,
            elites: (population / 10).max(1),
            ..Self::default()
        }
    }

    pub fn random_shooting(horizon: usize, population: usize) -> Self {
        Self {
            horizon,
            population,
            elites: 1,
            iterations: 1,
            mode: PlannerMode::RandomShooting,
            init_std: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.population == 0 || self.elites == 0 || self.iterations == 0 {
            return Err(invalid("planner counts must be positive"));
        }
        if self.elites > self.population {
            return Err(invalid(format!(
                "elites ({}) exceed population ({})",
                self.elites, self.population
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(invalid("init_std must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    /// Highest predicted return among evaluated candidates.
    pub best_score: f64,
    pub evaluated: usize,
    /// Set when the model produced non-finite predictions and the zero
    /// action was returned instead.
    pub fallback: bool,
}

/// One candidate's `horizon x m` action block. Candidate `i` of CEM round
/// `round` always comes from its own ChaCha stream, so a larger population
/// only appends candidates.
fn candidate(
    seed: u64,
    round: usize,
    i: usize,
    cfg: &PlannerConfig,
    mean: &Array2<f64>,
    std: &Array2<f64>,
) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, round as u64));
    rng.set_stream(i as u64);
    let (h, m) = mean.dim();
    Array2::from_shape_fn((h, m), |(t, j)| match cfg.mode {
        PlannerMode::RandomShooting => rng.random_range(-1.0..=1.0),
        PlannerMode::Cem => {
            let z: f64 = rng.sample(StandardNormal);
            (mean[[t, j]] + std[[t, j]] * z).clamp(-1.0, 1.0)
        }
    })
}

/// Predicted returns of every candidate, batched over the population.
fn score(
    model: &dyn Dynamics,
    s: &[f64],
    h: Option<&[f64]>,
    candidates: &[Array2<f64>],
) -> Result<Vec<f64>> {
    let p = candidates.len();
    let n = model.state_dim();
    let mut states = Array2::from_shape_fn((p, n), |(_, j)| s[j]);
    let mut latent = match (model.latent_width(), h) {
        (Some(w), Some(h)) => Some(Array2::from_shape_fn((p, w), |(_, j)| h[j])),
        (Some(w), None) => Some(Array2::zeros((p, w))),
        (None, _) => None,
    };
    let horizon = candidates[0].nrows();
    let mut totals = vec![0.0; p];
    for t in 0..horizon {
        let a = ndarray::stack(
            Axis(0),
            &candidates.iter().map(|c| c.row(t)).collect::<Vec<_>>(),
        )
        .expect("equal candidate widths");
        let (h2, s2, r) = model.predict(latent.as_ref(), &states, &a)?;
        for (acc, r) in totals.iter_mut().zip(r) {
            *acc += r;
        }
        states = s2;
        latent = h2;
    }
    Ok(totals)
}

/// Index of the largest score; ties go to the lower index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Choose the next action by sampling action sequences and scoring them
/// under `model`.
pub fn plan_action(
    model: &dyn Dynamics,
    s: &[f64],
    h: Option<&[f64]>,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<(Vec<f64>, PlanReport)> {
    cfg.validate()?;
    if s.len() != model.state_dim() {
        return Err(crate::Error::DimensionMismatch {
            layer: 0,
            expected: model.state_dim(),
            got: s.len(),
        });
    }
    let m = model.action_dim();
    let mut mean = Array2::zeros((cfg.horizon, m));
    let mut std = Array2::from_elem((cfg.horizon, m), cfg.init_std);
    let rounds = match cfg.mode {
        PlannerMode::RandomShooting => 1,
        PlannerMode::Cem => cfg.iterations,
    };
    let mut best_score = f64::NEG_INFINITY;
    let mut best_first = vec![0.0; m];
    let mut evaluated = 0;
    for round in 0..rounds {
        let cands: Vec<Array2<f64>> = (0..cfg.population)
            .map(|i| candidate(seed, round, i, cfg, &mean, &std))
            .collect();
        let scores = score(model, s, h, &cands)?;
        evaluated += cands.len();
        if scores.iter().any(|x| !x.is_finite()) {
            return Ok((
                vec![0.0; m],
                PlanReport {
                    best_score: f64::NAN,
                    evaluated,
                    fallback: true,
                },
            ));
        }
        let top = argmax(&scores);
        if scores[top] > best_score {
            best_score = scores[top];
            best_first = cands[top].row(0).to_vec();
        }
        if cfg.mode == PlannerMode::Cem {
            let mut order: Vec<usize> = (0..cands.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let elite: Vec<&Array2<f64>> = order[..cfg.elites].iter().map(|&i| &cands[i]).collect();
            let k = elite.len() as f64;
            mean = elite.iter().fold(Array2::zeros((cfg.horizon, m)), |acc, e| acc + *e) / k;
            let var = elite
                .iter()
                .fold(Array2::zeros((cfg.horizon, m)), |acc, e| acc + (*e - &mean).mapv(|x| x * x))
                / k;
            std = var.mapv(f64::sqrt);
        }
    }
    let action = match cfg.mode {
        PlannerMode::RandomShooting => best_first,
        PlannerMode::Cem => mean.row(0).to_vec(),
    };
    let action = action.into_iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    Ok((
        action,
        PlanReport {
            best_score,
            evaluated,
            fallback: false,
        },
    ))
}
