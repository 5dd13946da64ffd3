//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! A [`Tape`] lives for one loss evaluation. Parameters enter as leaves tagged
//! with their position in a [`ParamSet`]; [`Tape::backward`] returns one
//! gradient buffer per parameter, zero for parameters that never reached the
//! loss.

use ndarray::{Array2, Axis};

use super::tensor::ParamSet;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    SumAll(Var),
    Mean(Vec<Var>),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients for every tensor of a [`ParamSet`], in the set's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_for(params: &ParamSet) -> Self {
        Grads(params.iter().map(|(_, t)| vec![0.0; t.len()]).collect())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Bind every tensor of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Vec<Var> {
        (0..params.len())
            .map(|i| self.push(params.at(i).to_array(), Op::Param(i)))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    /// Element-wise mean of equally shaped nodes, summed in the given order.
    pub fn mean(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "mean of no nodes");
        let mut acc = self.value(xs[0]).clone();
        for x in &xs[1..] {
            acc += self.value(*x);
        }
        acc /= xs.len() as f64;
        self.push(acc, Op::Mean(xs.to_vec()))
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "concat of no nodes");
        let views: Vec<_> = xs.iter().map(|x| self.value(*x).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(xs.to_vec()))
    }

    /// Mean of the squared entries of `a`.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let sq = self.square(a);
        let s = self.sum_all(sq);
        self.affine(s, 1.0 / n, 0.0)
    }

    /// Reverse sweep from a scalar `loss`, seeded with `seed`.
    pub fn backward(&self, loss: Var, seed: f64, params: &ParamSet) -> Result<Grads> {
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Array2::from_elem((1, 1), seed));
        let mut grads = Grads::zeros_for(params);

        fn accum(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(p) => {
                    let dst = &mut grads.0[*p];
                    for (d, s) in dst.iter_mut().zip(g.iter()) {
                        *d += s;
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accum(&mut adj, *a, ga);
                    accum(&mut adj, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum(&mut adj, *row, gr);
                    accum(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accum(&mut adj, *b, g.clone());
                    accum(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accum(&mut adj, *b, -&g);
                    accum(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accum(&mut adj, *a, ga);
                    accum(&mut adj, *b, gb);
                }
                Op::Affine(a, scale) => {
                    accum(&mut adj, *a, g * *scale);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|g, y| g * (1.0 - y * y));
                    accum(&mut adj, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = ndarray::Zip::from(&g)
                        .and(y)
                        .map_collect(|g, y| g * y * (1.0 - y));
                    accum(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = ndarray::Zip::from(&g)
                        .and(x)
                        .map_collect(|g, x| if *x > 0.0 { *g } else { 0.0 });
                    accum(&mut adj, *a, ga);
                }
                Op::Square(a) => {
                    let ga = &g * &(self.value(*a) * 2.0);
                    accum(&mut adj, *a, ga);
                }
                Op::SumAll(a) => {
                    let s = g[[0, 0]];
                    let ga = Array2::from_elem(self.value(*a).dim(), s);
                    accum(&mut adj, *a, ga);
                }
                Op::Mean(xs) => {
                    let share = &g / xs.len() as f64;
                    for x in xs {
                        accum(&mut adj, *x, share.clone());
                    }
                }
                Op::ConcatCols(xs) => {
                    let mut start = 0;
                    for x in xs {
                        let w = self.value(*x).ncols();
                        let part = g.slice(ndarray::s![.., start..start + w]).to_owned();
                        accum(&mut adj, *x, part);
                        start += w;
                    }
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::ParamTensor;
    use ndarray::array;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut params = ParamSet::new();
        params.insert("a", ParamTensor::new(vec![2, 3], vec![0.5; 6]).unwrap());
        params.insert("b", ParamTensor::new(vec![4], vec![-1.0; 4]).unwrap());
        let mut tape = Tape::new();
        let vars = tape.bind(&params);
        let sa = tape.sum_all(vars[0]);
        let sb = tape.sum_all(vars[1]);
        let loss = tape.add(sa, sb);
        let g = tape.backward(loss, 1.0, &params).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut params = ParamSet::new();
        params.insert("used", ParamTensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        params.insert("unused", ParamTensor::new(vec![3], vec![4.0; 3]).unwrap());
        let mut tape = Tape::new();
        let vars = tape.bind(&params);
        let sq = tape.square(vars[0]);
        let loss = tape.sum_all(sq);
        let g = tape.backward(loss, 1.0, &params).unwrap();
        assert_eq!(g.0[0], vec![2.0, 4.0]);
        assert_eq!(g.0[1], vec![0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let params = ParamSet::new();
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0, 2.0]]);
        assert!(matches!(
            tape.backward(x, 1.0, &params),
            Err(Error::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn least_squares_gradient_matches_closed_form() {
        // loss = ||W x - y||^2 with W as a parameter; dL/dW = 2 (W x - y) x^T.
        // Row-vector convention: x is 1 x 3, W stored as 3 x 2 so the product is x W.
        let w = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        let x = [1.0, -2.0, 0.5];
        let y = [0.25, -1.0];
        let mut params = ParamSet::new();
        params.insert("w", ParamTensor::new(vec![3, 2], w.clone()).unwrap());
        let mut tape = Tape::new();
        let vars = tape.bind(&params);
        let xv = tape.constant(Array2::from_shape_vec((1, 3), x.to_vec()).unwrap());
        let yv = tape.constant(Array2::from_shape_vec((1, 2), y.to_vec()).unwrap());
        let pred = tape.matmul(xv, vars[0]);
        let diff = tape.sub(pred, yv);
        let sq = tape.square(diff);
        let loss = tape.sum_all(sq);
        let g = tape.backward(loss, 1.0, &params).unwrap();

        let mut resid = [0.0; 2];
        for (c, r) in resid.iter_mut().enumerate() {
            *r = (0..3).map(|i| x[i] * w[i * 2 + c]).sum::<f64>() - y[c];
        }
        for i in 0..3 {
            for c in 0..2 {
                let expect = 2.0 * resid[c] * x[i];
                assert!((g.0[0][i * 2 + c] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn seed_scales_gradient() {
        let mut params = ParamSet::new();
        params.insert("p", ParamTensor::new(vec![1], vec![3.0]).unwrap());
        let mut tape = Tape::new();
        let vars = tape.bind(&params);
        let loss = tape.square(vars[0]);
        let g = tape.backward(loss, 0.5, &params).unwrap();
        assert_eq!(g.0[0], vec![3.0]);
    }
}
