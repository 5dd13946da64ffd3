use super::tape::Grads;
use super::tensor::ParamSet;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_diff_grad<F>(f: F, params: &ParamSet, eps: f64) -> Grads
where
    F: Fn(&ParamSet) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = params.clone();
    let mut out = Grads::zeros_for(params);
    for t in 0..params.len() {
        for k in 0..params.at(t).len() {
            let orig = probe.at(t).values[k];
            probe.at_mut(t).values[k] = orig + eps;
            let up = f(&probe);
            probe.at_mut(t).values[k] = orig - eps;
            let down = f(&probe);
            probe.at_mut(t).values[k] = orig;
            out.0[t][k] = (up - down) / (2.0 * eps);
        }
    }
    out
}

/// Largest coordinate-wise relative disagreement between two gradients,
/// `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &Grads, b: &Grads, floor: f64) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
