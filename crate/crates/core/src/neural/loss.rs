use crate::error::{Error, Result};

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `log Σ exp(logits)`.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// Cross-entropy of `target` under `softmax(logits)` and its gradient with
/// respect to the logits, `softmax(logits) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let loss = log_sum_exp(logits) - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// `xent(logits, target) − xent(reference, target)` evaluated from the
/// logit differences, so the result carries no rounding error from the size
/// of either loss.
pub fn xent_delta(logits: &[f64], reference: &[f64], target: usize) -> f64 {
    let delta: Vec<f64> = logits.iter().zip(reference).map(|(z, z0)| z - z0).collect();
    xent_shift(reference, &delta, target)
}

/// `xent(reference + delta, target) − xent(reference, target)`, computed as
/// `ln(1 + Σ p₀ (e^δ − 1)) − δ_target` with `p₀ = softmax(reference)`.
pub fn xent_shift(reference: &[f64], delta: &[f64], target: usize) -> f64 {
    let p0 = softmax(reference);
    let shift: f64 = p0.iter().zip(delta).map(|(p, d)| p * d.exp_m1()).sum();
    shift.ln_1p() - delta[target]
}
