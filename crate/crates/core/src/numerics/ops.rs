//! Activations, losses and divergences.

use super::Matrix;
use crate::error::{Error, Result};

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp(row)` computed stably.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `targets` under the row softmax of `logits`.
pub fn cross_entropy_logits(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    if targets.len() != logits.rows() {
        return Err(Error::shape(
            "cross_entropy_logits",
            format!("{} targets for {} rows", targets.len(), logits.rows()),
        ));
    }
    if targets.is_empty() {
        return Err(Error::invalid("cross entropy over zero rows"));
    }
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= logits.cols() {
            return Err(Error::invalid(format!(
                "target {t} out of range for {} classes",
                logits.cols()
            )));
        }
        let row = logits.row(r);
        total += log_sum_exp(row) - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// Gradient of the *summed* cross entropy of one row with respect to its
/// logits: `softmax(row) - onehot(target)`. Returns `(loss, grad)`.
pub(crate) fn cross_entropy_row_grad(row: &[f64], target: usize) -> (f64, Vec<f64>) {
    let loss = log_sum_exp(row) - row[target];
    let mut grad = row.to_vec();
    softmax_in_place(&mut grad);
    grad[target] -= 1.0;
    (loss, grad)
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::invalid(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(
            "js_divergence",
            format!("lengths {} and {}", p.len(), q.len()),
        ));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(js_unchecked(p, q))
}

pub(crate) fn js_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    // Summing the two halves in a fixed symmetric way keeps JS(p,q) == JS(q,p)
    // up to the rounding of the final addition.
    let a = kl_to_mixture(p, &m);
    let b = kl_to_mixture(q, &m);
    0.5 * (a.min(b) + a.max(b))
}

/// Gradient of `JS(p‖q)` with respect to `p`, holding `q` fixed:
/// `½ ln(p / m)`. Entries with `p = 0` get 0.
pub(crate) fn js_grad_wrt_first(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi > 0.0 {
                0.5 * (pi / (0.5 * (pi + qi))).ln()
            } else {
                0.0
            }
        })
        .collect()
}

/// Pulls a gradient with respect to probabilities back through a softmax.
pub(crate) fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
