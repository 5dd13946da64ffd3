use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{ParamSet, ParamTensor};
use crate::error::{invalid, Error, Result};

/// Hidden-layer nonlinearity. The output layer of an MLP is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(invalid("an MLP needs at least an input and an output width"));
        }
        if layer_widths.contains(&0) {
            return Err(invalid("MLP widths must be positive"));
        }
        Ok(Self {
            layer_widths,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// An MLP whose weights live in a shared [`ParamSet`] under a name prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(
        spec: MlpSpec,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let layers = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let wi = params.insert(
                    format!("{prefix}l{i}.w"),
                    ParamTensor::uniform_fan_in(vec![w[0], w[1]], w[0], rng),
                );
                let bi = params.insert(
                    format!("{prefix}l{i}.b"),
                    ParamTensor::uniform_fan_in(vec![w[1]], w[0], rng),
                );
                (wi, bi)
            })
            .collect();
        Self { spec, layers }
    }

    /// Locate and validate this MLP's tensors inside an existing set.
    pub fn attach(spec: MlpSpec, prefix: &str, params: &ParamSet) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, w) in spec.layer_widths.windows(2).enumerate() {
            let lookup = |suffix: &str| {
                let name = format!("{prefix}l{i}.{suffix}");
                params
                    .index_of(&name)
                    .ok_or_else(|| invalid(format!("missing tensor `{name}`")))
            };
            let wi = lookup("w")?;
            let bi = lookup("b")?;
            let wshape = &params.at(wi).shape;
            if wshape.len() != 2 || wshape[0] != w[0] {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    expected: w[0],
                    got: wshape[0],
                });
            }
            if wshape[1] != w[1] {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    expected: w[1],
                    got: wshape[1],
                });
            }
            let bshape = &params.at(bi).shape;
            if bshape.as_slice() != [w[1]] {
                return Err(Error::DimensionMismatch {
                    layer: i,
                    expected: w[1],
                    got: bshape.iter().product(),
                });
            }
            layers.push((wi, bi));
        }
        Ok(Self { spec, layers })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(wi, bi)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, vars[wi]);
            h = tape.add_row(z, vars[bi]);
            if i < last {
                h = self.spec.activation.apply(tape, h);
            }
        }
        h
    }
}

/// Evaluate an MLP on a single input vector.
pub fn mlp_forward(spec: &MlpSpec, params: &ParamSet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.input_width() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: spec.input_width(),
            got: x.len(),
        });
    }
    let mlp = Mlp::attach(spec.clone(), "", params)?;
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let xv = tape.constant(row(x));
    let out = mlp.forward(&mut tape, &vars, xv);
    Ok(tape.value(out).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input_width: usize,
    pub hidden_width: usize,
}

impl GruSpec {
    pub fn new(input_width: usize, hidden_width: usize) -> Result<Self> {
        if input_width == 0 || hidden_width == 0 {
            return Err(invalid("GRU widths must be positive"));
        }
        Ok(Self {
            input_width,
            hidden_width,
        })
    }

    pub fn param_count(&self) -> usize {
        let (i, h) = (self.input_width, self.hidden_width);
        3 * (i * h + h * h + h)
    }
}

const GATES: [&str; 3] = ["z", "r", "n"];

/// Gated recurrent cell:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// n  = tanh(x Wn + r * (h Un) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub spec: GruSpec,
    // (w, u, b) per gate, in GATES order
    gates: [(usize, usize, usize); 3],
}

impl Gru {
    pub fn init<R: Rng + ?Sized>(
        spec: GruSpec,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Self {
        let (i, h) = (spec.input_width, spec.hidden_width);
        let gates = GATES.map(|g| {
            let w = params.insert(
                format!("{prefix}w{g}"),
                ParamTensor::uniform_fan_in(vec![i, h], h, rng),
            );
            let u = params.insert(
                format!("{prefix}u{g}"),
                ParamTensor::uniform_fan_in(vec![h, h], h, rng),
            );
            let b = params.insert(
                format!("{prefix}b{g}"),
                ParamTensor::uniform_fan_in(vec![h], h, rng),
            );
            (w, u, b)
        });
        Self { spec, gates }
    }

    pub fn attach(spec: GruSpec, prefix: &str, params: &ParamSet) -> Result<Self> {
        let (i, h) = (spec.input_width, spec.hidden_width);
        let find = |name: String, shape: Vec<usize>| -> Result<usize> {
            let idx = params
                .index_of(&name)
                .ok_or_else(|| invalid(format!("missing tensor `{name}`")))?;
            let got = &params.at(idx).shape;
            if *got != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    got: got.clone(),
                });
            }
            Ok(idx)
        };
        let mut gates = [(0, 0, 0); 3];
        for (slot, g) in gates.iter_mut().zip(GATES) {
            *slot = (
                find(format!("{prefix}w{g}"), vec![i, h])?,
                find(format!("{prefix}u{g}"), vec![h, h])?,
                find(format!("{prefix}b{g}"), vec![h])?,
            );
        }
        Ok(Self { spec, gates })
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], h: Var, x: Var) -> Var {
        let pre = |tape: &mut Tape, (w, u, b): (usize, usize, usize), hidden: Var| {
            let xw = tape.matmul(x, vars[w]);
            let hu = tape.matmul(hidden, vars[u]);
            let s = tape.add(xw, hu);
            tape.add_row(s, vars[b])
        };
        let zp = pre(tape, self.gates[0], h);
        let z = tape.sigmoid(zp);
        let rp = pre(tape, self.gates[1], h);
        let r = tape.sigmoid(rp);

        let (wn, un, bn) = self.gates[2];
        let xw = tape.matmul(x, vars[wn]);
        let hu = tape.matmul(h, vars[un]);
        let gated = tape.mul(r, hu);
        let s = tape.add(xw, gated);
        let np = tape.add_row(s, vars[bn]);
        let n = tape.tanh(np);

        let d = tape.sub(h, n);
        let zd = tape.mul(z, d);
        tape.add(n, zd)
    }
}

/// One recurrent step on single vectors.
pub fn gru_step(spec: &GruSpec, params: &ParamSet, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if h_prev.len() != spec.hidden_width {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: spec.hidden_width,
            got: h_prev.len(),
        });
    }
    if x.len() != spec.input_width {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: spec.input_width,
            got: x.len(),
        });
    }
    let gru = Gru::attach(*spec, "", params)?;
    let mut tape = Tape::new();
    let vars = tape.bind(params);
    let hv = tape.constant(row(h_prev));
    let xv = tape.constant(row(x));
    let out = gru.forward(&mut tape, &vars, hv, xv);
    Ok(tape.value(out).iter().copied().collect())
}

pub(crate) fn row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector")
}
