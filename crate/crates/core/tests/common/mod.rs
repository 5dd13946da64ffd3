//! Independent scalar re-implementations used as test oracles. Nothing here
//! calls into the tape or the clustering code.
#![allow(dead_code)]

use dyndecomp::d2p::{KernelKind, WorldModel};
use dyndecomp::envs::Transition;
use dyndecomp::nn::{Activation, ParamSet};

fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Tanh => x.tanh(),
        Activation::Relu => x.max(0.0),
        Activation::Identity => x,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x W + b` with `W` stored row-major as `[in, out]`.
fn affine(params: &ParamSet, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let w = params.get(w).unwrap_or_else(|| panic!("missing {w}"));
    let b = params.get(b).unwrap_or_else(|| panic!("missing {b}"));
    let out = w.shape[1];
    (0..out)
        .map(|j| b.values[j] + (0..x.len()).map(|i| x[i] * w.values[i * out + j]).sum::<f64>())
        .collect()
}

fn matvec(params: &ParamSet, w: &str, x: &[f64]) -> Vec<f64> {
    let w = params.get(w).unwrap_or_else(|| panic!("missing {w}"));
    let out = w.shape[1];
    (0..out)
        .map(|j| (0..x.len()).map(|i| x[i] * w.values[i * out + j]).sum::<f64>())
        .collect()
}

/// MLP with `layers` affine maps, activation between them, linear output.
pub fn mlp(params: &ParamSet, prefix: &str, layers: usize, kind: Activation, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in 0..layers {
        h = affine(params, &format!("{prefix}l{l}.w"), &format!("{prefix}l{l}.b"), &h);
        if l + 1 < layers {
            h = h.into_iter().map(|v| act(kind, v)).collect();
        }
    }
    h
}

pub fn gru(params: &ParamSet, prefix: &str, h: &[f64], x: &[f64]) -> Vec<f64> {
    let gate = |g: &str, hidden: &[f64]| -> Vec<f64> {
        let xw = affine(params, &format!("{prefix}w{g}"), &format!("{prefix}b{g}"), x);
        let hu = matvec(params, &format!("{prefix}u{g}"), hidden);
        xw.iter().zip(&hu).map(|(a, b)| a + b).collect()
    };
    let z: Vec<f64> = gate("z", h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate("r", h).into_iter().map(sigmoid).collect();
    let xw = affine(params, &format!("{prefix}wn"), &format!("{prefix}bn"), x);
    let hu = matvec(params, &format!("{prefix}un"), h);
    let n: Vec<f64> = (0..h.len()).map(|i| (xw[i] + r[i] * hu[i]).tanh()).collect();
    (0..h.len()).map(|i| n[i] + z[i] * (h[i] - n[i])).collect()
}

/// `(h, s_pred, r_pred)` for one sample, read straight from named tensors.
pub fn world_model_step(model: &WorldModel, h_prev: Option<&[f64]>, s: &[f64], a: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let c = &model.config;
    let groups = model.spec().kernel_groups;
    let mut lat: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let mut x = s.to_vec();
        x.extend(g.iter().map(|&j| a[j]));
        let p = format!("k{i}.");
        let out = match c.kernel_kind {
            KernelKind::Nonrecurrent => mlp(&model.params, &p, 2, c.activation, &x),
            KernelKind::Recurrent => {
                let e: Vec<f64> = mlp(&model.params, &p, 1, c.activation, &x)
                    .into_iter()
                    .map(|v| act(c.activation, v))
                    .collect();
                gru(&model.params, &format!("{p}gru."), h_prev.unwrap(), &e)
            }
        };
        lat.push((g[0], out));
    }
    lat.sort_by_key(|(first, _)| *first);
    let k = lat.len() as f64;
    let mut h = vec![0.0; c.latent_width];
    for (_, v) in &lat {
        for (acc, x) in h.iter_mut().zip(v) {
            *acc += x;
        }
    }
    h.iter_mut().for_each(|x| *x /= k);
    let dec = mlp(&model.params, "dec.", 2, c.activation, &h);
    let s_pred = if c.predict_delta {
        s.iter().zip(&dec).map(|(a, b)| a + b).collect()
    } else {
        dec
    };
    let r = mlp(&model.params, "rew.", 2, c.activation, &h)[0];
    (h, s_pred, r)
}

/// Textbook two-pass Pearson correlation; zero when either side is constant.
pub fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let constant = |v: &[f64]| v.iter().all(|t| *t == v[0]);
    if constant(x) || constant(y) || sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// `m x n` matrix of `|pearson(a_i, Δs_j)|`.
pub fn features_brute(ts: &[Transition]) -> Vec<Vec<f64>> {
    let m = ts[0].a.len();
    let n = ts[0].s.len();
    (0..m)
        .map(|i| {
            let ai: Vec<f64> = ts.iter().map(|t| t.a[i]).collect();
            (0..n)
                .map(|j| {
                    let dj: Vec<f64> = ts.iter().map(|t| t.s_next[j] - t.s[j]).collect();
                    pearson_brute(&ai, &dj).abs()
                })
                .collect()
        })
        .collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine over all cross pairs of two index sets (0-based).
fn r(f: &[Vec<f64>], a: &[usize], b: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in a {
        for &j in b {
            s += cos(&f[i], &f[j]);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Relatedness of two clusters against the rest of the action set.
pub fn rela_brute(f: &[Vec<f64>], gi: &[usize], gj: &[usize]) -> f64 {
    let m = f.len();
    let rest = |g: &[usize]| -> Vec<usize> { (0..m).filter(|x| !g.contains(x)).collect() };
    let (ni, nj) = (rest(gi), rest(gj));
    let within = r(f, gi, gj);
    let wi = (gi.len() * nj.len()) as f64;
    let wj = (gj.len() * ni.len()) as f64;
    if wi + wj == 0.0 {
        return within;
    }
    let r_j = if ni.is_empty() { 0.0 } else { r(f, gj, &ni) };
    let r_i = if nj.is_empty() { 0.0 } else { r(f, gi, &nj) };
    within - (r_j * wj + r_i * wi) / (wi + wj)
}

/// One greedy merge step: every pair scored, the strictly largest kept,
/// earliest pair on ties. Returns `(i, j, rela)` as cluster positions.
pub fn argmax_step(f: &[Vec<f64>], clusters: &[Vec<usize>]) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            let v = rela_brute(f, &clusters[i], &clusters[j]);
            if best.is_none_or(|b| v > b.2) {
                best = Some((i, j, v));
            }
        }
    }
    best
}

/// Full greedy run; returns the steps taken and final clusters (1-based,
/// each sorted, clusters ordered by smallest member).
pub fn cluster_brute(f: &[Vec<f64>], eta: f64) -> (Vec<(Vec<usize>, Vec<usize>, f64, bool)>, Vec<Vec<usize>>) {
    let mut clusters: Vec<Vec<usize>> = (0..f.len()).map(|i| vec![i]).collect();
    let mut steps = Vec::new();
    while clusters.len() > 1 {
        let (i, j, v) = argmax_step(f, &clusters).unwrap();
        let merged = v > eta;
        let one = |g: &Vec<usize>| g.iter().map(|x| x + 1).collect::<Vec<_>>();
        steps.push((one(&clusters[i]), one(&clusters[j]), v, merged));
        if !merged {
            break;
        }
        let mut g = clusters[i].clone();
        g.extend(&clusters[j]);
        g.sort_unstable();
        clusters.remove(j);
        clusters[i] = g;
        clusters.sort_by_key(|g| g[0]);
    }
    let out = clusters.iter().map(|g| g.iter().map(|x| x + 1).collect()).collect();
    (steps, out)
}
