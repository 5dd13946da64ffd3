use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Activation, GruSpec, MlpSpec};
use crate::sd2::Partition;

impl<'de> Deserialize<'de> for Partition {
    /// Reads a bare list of groups; `m` is taken as the largest index.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let groups: Vec<Vec<usize>> = Vec::deserialize(d)?;
        let m = groups.iter().flatten().copied().max().unwrap_or(0);
        Partition::new(groups, m).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Nonrecurrent,
    Recurrent,
}

/// How the latent kernels see the action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelLayout {
    /// One kernel per group, each fed only its sub-action.
    Decomposed(Partition),
    /// `k` kernels, each fed the full action.
    Ensemble { k: usize },
    /// A single kernel fed the full action.
    Monolithic,
}

impl KernelLayout {
    /// Short identifier safe for CSV cells and file names, e.g. `d2p-1.2_3`.
    pub fn label(&self) -> String {
        match self {
            KernelLayout::Decomposed(p) => {
                let groups: Vec<String> = p
                    .groups()
                    .iter()
                    .map(|g| g.iter().map(usize::to_string).collect::<Vec<_>>().join("."))
                    .collect();
                format!("d2p-{}", groups.join("_"))
            }
            KernelLayout::Ensemble { k } => format!("ensemble{k}"),
            KernelLayout::Monolithic => "monolithic".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct D2PModelConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub layout: KernelLayout,
    #[serde(default)]
    pub kernel_kind: KernelKind,
    pub latent_width: usize,
    pub kernel_hidden: usize,
    pub decoder_hidden: usize,
    #[serde(default = "default_true")]
    pub predict_delta: bool,
    #[serde(default)]
    pub activation: Activation,
}

fn default_true() -> bool {
    true
}

impl D2PModelConfig {
    pub fn new(state_dim: usize, action_dim: usize, layout: KernelLayout) -> Self {
        Self {
            state_dim,
            action_dim,
            layout,
            kernel_kind: KernelKind::Nonrecurrent,
            latent_width: 32,
            kernel_hidden: 32,
            decoder_hidden: 32,
            predict_delta: true,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(invalid("state and action widths must be positive"));
        }
        if self.latent_width == 0 || self.kernel_hidden == 0 || self.decoder_hidden == 0 {
            return Err(invalid("layer widths must be positive"));
        }
        match &self.layout {
            KernelLayout::Decomposed(p) if p.action_dim() != self.action_dim => Err(invalid(
                format!(
                    "partition covers {} action dimensions, model has {}",
                    p.action_dim(),
                    self.action_dim
                ),
            )),
            KernelLayout::Ensemble { k: 0 } => Err(invalid("ensemble needs k >= 1")),
            _ => Ok(()),
        }
    }

    /// 0-based action indices consumed by each kernel, in canonical order.
    pub fn kernel_groups(&self) -> Vec<Vec<usize>> {
        match &self.layout {
            KernelLayout::Decomposed(p) => p.zero_based(),
            KernelLayout::Ensemble { k } => vec![(0..self.action_dim).collect(); *k],
            KernelLayout::Monolithic => vec![(0..self.action_dim).collect()],
        }
    }

    pub(crate) fn kernel_input_mlp(&self, group_len: usize) -> MlpSpec {
        let widths = match self.kernel_kind {
            KernelKind::Nonrecurrent => {
                vec![self.state_dim + group_len, self.kernel_hidden, self.latent_width]
            }
            KernelKind::Recurrent => vec![self.state_dim + group_len, self.kernel_hidden],
        };
        MlpSpec::new(widths, self.activation).expect("validated widths")
    }

    pub(crate) fn kernel_gru(&self) -> GruSpec {
        GruSpec::new(self.kernel_hidden, self.latent_width).expect("validated widths")
    }

    pub(crate) fn decoder_mlp(&self) -> MlpSpec {
        MlpSpec::new(
            vec![self.latent_width, self.decoder_hidden, self.state_dim],
            self.activation,
        )
        .expect("validated widths")
    }

    pub(crate) fn reward_mlp(&self) -> MlpSpec {
        MlpSpec::new(vec![self.latent_width, self.decoder_hidden, 1], self.activation)
            .expect("validated widths")
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        let kernels: usize = self
            .kernel_groups()
            .iter()
            .map(|g| {
                let inp = self.kernel_input_mlp(g.len()).param_count();
                match self.kernel_kind {
                    KernelKind::Nonrecurrent => inp,
                    KernelKind::Recurrent => inp + self.kernel_gru().param_count(),
                }
            })
            .sum();
        kernels + self.decoder_mlp().param_count() + self.reward_mlp().param_count()
    }

    /// Copy of `self` with `kernel_hidden` chosen so the parameter count is
    /// as close as possible to `target`. Fails if the best match is more
    /// than `tolerance` (relative) away.
    pub fn matched_to(&self, target: usize, tolerance: f64) -> Result<Self> {
        let mut best: Option<(usize, Self)> = None;
        for hidden in 1..=4096 {
            let mut c = self.clone();
            c.kernel_hidden = hidden;
            let diff = c.param_count().abs_diff(target);
            if best.as_ref().is_none_or(|(d, _)| diff < *d) {
                best = Some((diff, c));
            }
        }
        let (diff, c) = best.expect("searched at least one width");
        if diff as f64 > tolerance * target as f64 {
            return Err(invalid(format!(
                "cannot match {target} parameters within {tolerance}: best is {}",
                c.param_count()
            )));
        }
        Ok(c)
    }
}
