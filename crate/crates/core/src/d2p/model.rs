use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::config::{D2PModelConfig, KernelKind, KernelLayout};
use crate::error::{invalid, Error, Result};
use crate::nn::{Checkpoint, Gru, Mlp, ParamSet, Tape, Var};
use crate::rng::{rng_for, streams};
use crate::sd2::Partition;

/// Project an action onto each group of a partition, ascending index order
/// within each group.
pub fn split_action(a: &[f64], partition: &Partition) -> Result<Vec<Vec<f64>>> {
    if a.len() != partition.action_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: partition.action_dim(),
            got: a.len(),
        });
    }
    Ok(partition
        .groups()
        .iter()
        .map(|g| g.iter().map(|&i| a[i - 1]).collect())
        .collect())
}

/// Averaged latent plus the per-kernel latents it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutput {
    pub h: Vec<f64>,
    pub per_kernel: Vec<Vec<f64>>,
}

/// Single-sample prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub kernels: KernelOutput,
    pub s_pred: Vec<f64>,
    pub r_pred: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum KernelNet {
    Feedforward(Mlp),
    Recurrent(Mlp, Gru),
}

#[derive(Debug, Clone, PartialEq)]
struct Kernel {
    actions: Vec<usize>,
    net: KernelNet,
}

/// Serialized description stored alongside checkpoint tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: D2PModelConfig,
    /// 0-based action indices per kernel, in storage order.
    pub kernel_groups: Vec<Vec<usize>>,
}

/// Tape nodes produced by one batched forward step.
#[derive(Debug, Clone)]
pub struct StepNodes {
    pub h: Var,
    pub per_kernel: Vec<Var>,
    pub s_pred: Var,
    pub r_pred: Var,
}

/// A multi-kernel world model: kernels map `(s, sub-action[, h_prev])` to
/// latents, the latents are averaged, and decoder and reward heads read the
/// average.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub config: D2PModelConfig,
    pub params: ParamSet,
    kernels: Vec<Kernel>,
    decoder: Mlp,
    reward: Mlp,
    sum_order: Vec<usize>,
}

fn kernel_prefix(i: usize) -> String {
    format!("k{i}.")
}

fn sum_order(kernels: &[Kernel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..kernels.len()).collect();
    // disjoint groups have unique minima, so this order does not depend on
    // how the groups were listed
    order.sort_by_key(|&i| (kernels[i].actions.first().copied().unwrap_or(0), i));
    order
}

impl WorldModel {
    /// Fresh model with weights drawn from the `init` stream of `seed`.
    pub fn new(config: D2PModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, streams::INIT);
        let mut params = ParamSet::new();
        let groups = config.kernel_groups();
        let kernels: Vec<Kernel> = groups
            .into_iter()
            .enumerate()
            .map(|(i, actions)| {
                let p = kernel_prefix(i);
                let inp = Mlp::init(config.kernel_input_mlp(actions.len()), &p, &mut params, &mut rng);
                let net = match config.kernel_kind {
                    KernelKind::Nonrecurrent => KernelNet::Feedforward(inp),
                    KernelKind::Recurrent => {
                        let gru = Gru::init(config.kernel_gru(), &format!("{p}gru."), &mut params, &mut rng);
                        KernelNet::Recurrent(inp, gru)
                    }
                };
                Kernel { actions, net }
            })
            .collect();
        let decoder = Mlp::init(config.decoder_mlp(), "dec.", &mut params, &mut rng);
        let reward = Mlp::init(config.reward_mlp(), "rew.", &mut params, &mut rng);
        let sum_order = sum_order(&kernels);
        Ok(Self {
            config,
            params,
            kernels,
            decoder,
            reward,
            sum_order,
        })
    }

    /// Rebuild a model around existing tensors.
    pub fn from_parts(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        let config = spec.config;
        config.validate()?;
        if spec.kernel_groups.is_empty() {
            return Err(invalid("a model needs at least one kernel"));
        }
        let mut kernels = Vec::with_capacity(spec.kernel_groups.len());
        for (i, actions) in spec.kernel_groups.into_iter().enumerate() {
            if actions.is_empty() || actions.iter().any(|&a| a >= config.action_dim) {
                return Err(invalid(format!("kernel {i} has invalid action indices")));
            }
            let p = kernel_prefix(i);
            let inp = Mlp::attach(config.kernel_input_mlp(actions.len()), &p, &params)?;
            let net = match config.kernel_kind {
                KernelKind::Nonrecurrent => KernelNet::Feedforward(inp),
                KernelKind::Recurrent => {
                    KernelNet::Recurrent(inp, Gru::attach(config.kernel_gru(), &format!("{p}gru."), &params)?)
                }
            };
            kernels.push(Kernel { actions, net });
        }
        let decoder = Mlp::attach(config.decoder_mlp(), "dec.", &params)?;
        let reward = Mlp::attach(config.reward_mlp(), "rew.", &params)?;
        let sum_order = sum_order(&kernels);
        Ok(Self {
            config,
            params,
            kernels,
            decoder,
            reward,
            sum_order,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            config: self.config.clone(),
            kernel_groups: self.kernels.iter().map(|k| k.actions.clone()).collect(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<ModelSpec> {
        Checkpoint {
            spec: self.spec(),
            tensors: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<ModelSpec>) -> Result<Self> {
        Self::from_parts(ckpt.spec, ckpt.tensors)
    }

    /// The same model with kernels stored in the order `perm` (new kernel
    /// `i` is old kernel `perm[i]`), tensors moved along.
    pub fn permute_kernels(&self, perm: &[usize]) -> Result<Self> {
        let k = self.kernels.len();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..k).collect::<Vec<_>>() {
            return Err(invalid(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let mut params = ParamSet::new();
        for (new, &old) in perm.iter().enumerate() {
            let from = kernel_prefix(old);
            let to = kernel_prefix(new);
            for (name, t) in self.params.iter() {
                if let Some(rest) = name.strip_prefix(&from) {
                    params.insert(format!("{to}{rest}"), t.clone());
                }
            }
        }
        for (name, t) in self.params.iter() {
            if !name.starts_with('k') {
                params.insert(name, t.clone());
            }
        }
        let mut spec = self.spec();
        spec.kernel_groups = perm.iter().map(|&o| self.kernels[o].actions.clone()).collect();
        Self::from_parts(spec, params)
    }

    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_recurrent(&self) -> bool {
        self.config.kernel_kind == KernelKind::Recurrent
    }

    pub fn latent_width(&self) -> usize {
        self.config.latent_width
    }

    /// Record one batched step on `tape`. `vars` are the bound parameters;
    /// `h_prev` is required for recurrent kernels and ignored otherwise.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        h_prev: Option<Var>,
        s: Var,
        a: &Array2<f64>,
    ) -> StepNodes {
        let per_kernel: Vec<Var> = self
            .kernels
            .iter()
            .map(|k| {
                let sub = a.select(Axis(1), &k.actions);
                let sub = tape.constant(sub);
                let input = tape.concat_cols(&[s, sub]);
                match &k.net {
                    KernelNet::Feedforward(mlp) => mlp.forward(tape, vars, input),
                    KernelNet::Recurrent(mlp, gru) => {
                        let e = mlp.forward(tape, vars, input);
                        let e = self.config.activation.apply(tape, e);
                        let h = h_prev.expect("recurrent kernels need a previous latent");
                        gru.forward(tape, vars, h, e)
                    }
                }
            })
            .collect();
        let ordered: Vec<Var> = self.sum_order.iter().map(|&i| per_kernel[i]).collect();
        let h = tape.mean(&ordered);
        let dec = self.decoder.forward(tape, vars, h);
        let s_pred = if self.config.predict_delta {
            tape.add(s, dec)
        } else {
            dec
        };
        let r_pred = self.reward.forward(tape, vars, h);
        StepNodes {
            h,
            per_kernel,
            s_pred,
            r_pred,
        }
    }

    /// Batched prediction without gradients. Returns `(h, s_pred, r_pred)`.
    pub fn predict_batch(
        &self,
        h_prev: Option<&Array2<f64>>,
        s: &Array2<f64>,
        a: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Vec<f64>)> {
        let (rows, n) = s.dim();
        if n != self.config.state_dim {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.state_dim,
                got: n,
            });
        }
        if a.dim() != (rows, self.config.action_dim) {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.action_dim,
                got: a.ncols(),
            });
        }
        let mut tape = Tape::new();
        let vars = tape.bind(&self.params);
        let hv = if self.is_recurrent() {
            let h = match h_prev {
                Some(h) => {
                    if h.dim() != (rows, self.config.latent_width) {
                        return Err(Error::DimensionMismatch {
                            layer: 0,
                            expected: self.config.latent_width,
                            got: h.ncols(),
                        });
                    }
                    h.clone()
                }
                None => Array2::zeros((rows, self.config.latent_width)),
            };
            Some(tape.constant(h))
        } else {
            None
        };
        let sv = tape.constant(s.clone());
        let out = self.step_on_tape(&mut tape, &vars, hv, sv, a);
        Ok((
            tape.value(out.h).clone(),
            tape.value(out.s_pred).clone(),
            tape.value(out.r_pred).iter().copied().collect(),
        ))
    }

    fn predict_one(&self, h_prev: Option<&[f64]>, s: &[f64], a: &[f64]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let vars = tape.bind(&self.params);
        let hv = h_prev.map(|h| tape.constant(crate::nn::layers::row(h)));
        let sv = tape.constant(crate::nn::layers::row(s));
        let av = crate::nn::layers::row(a);
        let out = self.step_on_tape(&mut tape, &vars, hv, sv, &av);
        let flat = |v: Var| tape.value(v).iter().copied().collect::<Vec<f64>>();
        Ok(Prediction {
            kernels: KernelOutput {
                h: flat(out.h),
                per_kernel: out.per_kernel.iter().map(|v| flat(*v)).collect(),
            },
            s_pred: flat(out.s_pred),
            r_pred: tape.value(out.r_pred)[[0, 0]],
        })
    }

    fn check_dims(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.config.state_dim {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.state_dim,
                got: s.len(),
            });
        }
        if a.len() != self.config.action_dim {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.action_dim,
                got: a.len(),
            });
        }
        Ok(())
    }

    /// Non-recurrent single-sample forward.
    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<Prediction> {
        if self.is_recurrent() {
            return Err(invalid("recurrent model needs a previous latent"));
        }
        self.check_dims(s, a)?;
        self.predict_one(None, s, a)
    }

    /// Recurrent single-sample forward.
    pub fn forward_rec(&self, h_prev: &[f64], s: &[f64], a: &[f64]) -> Result<Prediction> {
        if !self.is_recurrent() {
            return Err(invalid("non-recurrent model takes no previous latent"));
        }
        self.check_dims(s, a)?;
        if h_prev.len() != self.config.latent_width {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.config.latent_width,
                got: h_prev.len(),
            });
        }
        self.predict_one(Some(h_prev), s, a)
    }
}

fn require_layout(model: &WorldModel, want: &str) -> Result<()> {
    let ok = matches!(
        (&model.config.layout, want),
        (KernelLayout::Decomposed(_), "decomposed")
            | (KernelLayout::Ensemble { .. }, "ensemble")
            | (KernelLayout::Monolithic, "monolithic")
    );
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "expected a {want} model, got layout {}",
            model.config.layout.label()
        )))
    }
}

/// Decomposed model, non-recurrent kernels.
pub fn d2p_forward_nonrec(model: &WorldModel, s: &[f64], a: &[f64]) -> Result<Prediction> {
    require_layout(model, "decomposed")?;
    model.forward(s, a)
}

/// Decomposed model, recurrent kernels sharing `h_prev`.
pub fn d2p_forward_rec(model: &WorldModel, h_prev: &[f64], s: &[f64], a: &[f64]) -> Result<Prediction> {
    require_layout(model, "decomposed")?;
    model.forward_rec(h_prev, s, a)
}

/// Every kernel sees the full action.
pub fn kernel_ensemble_forward(
    model: &WorldModel,
    h_prev: Option<&[f64]>,
    s: &[f64],
    a: &[f64],
) -> Result<Prediction> {
    require_layout(model, "ensemble")?;
    match h_prev {
        Some(h) => model.forward_rec(h, s, a),
        None => model.forward(s, a),
    }
}

/// Single kernel over the full action.
pub fn monolithic_forward(
    model: &WorldModel,
    h_prev: Option<&[f64]>,
    s: &[f64],
    a: &[f64],
) -> Result<Prediction> {
    require_layout(model, "monolithic")?;
    match h_prev {
        Some(h) => model.forward_rec(h, s, a),
        None => model.forward(s, a),
    }
}
