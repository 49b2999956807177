//! Softmax, cross-entropy and KL divergence with their gradients.
//!
//! All logarithms are natural. Probabilities are floored at [`PROB_FLOOR`]
//! inside every log; where the floor is active the gradient through it is zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PROB_FLOOR: f64 = 1e-12;

fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

fn check_logits(logits: &Tensor) -> Result<()> {
    if logits.shape().len() != 2 {
        return Err(Error::Shape(format!("expected (B, C) logits, got {:?}", logits.shape())));
    }
    logits.check_finite("logits")
}

/// Row-wise softmax of `logits / tau`, computed with max subtraction.
pub fn softmax_t(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    check_logits(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(logits.cols()) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    softmax_t(logits, 1.0)
}

/// Gradient with respect to the logits, given `probs = softmax_t(logits, tau)`
/// and the gradient of some scalar with respect to `probs`.
pub fn softmax_vjp(probs: &Tensor, grad_probs: &Tensor, tau: f64) -> Result<Tensor> {
    probs.same_shape(grad_probs, "softmax_vjp")?;
    let mut out = Tensor::zeros(probs.shape());
    for (i, (p, g)) in probs.rows_iter().zip(grad_probs.rows_iter()).enumerate() {
        let inner: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for (o, (&pj, &gj)) in out.row_mut(i).iter_mut().zip(p.iter().zip(g)) {
            *o = pj * (gj - inner) / tau;
        }
    }
    Ok(out)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    check_logits(logits)?;
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let classes = logits.cols();
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

fn log_prob(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    (row[label] - lse).max(PROB_FLOOR.ln())
}

/// Batch-mean of `-ln softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = logits.rows_iter().zip(labels).map(|(r, &y)| -log_prob(r, y)).sum();
    Ok(total / labels.len() as f64)
}

pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    check_labels(logits, labels)?;
    let b = labels.len() as f64;
    let mut g = softmax(logits)?;
    for (i, &y) in labels.iter().enumerate() {
        let row = g.row_mut(i);
        if row[y] < PROB_FLOOR {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b);
    }
    Ok(g)
}

/// Row-mean of `Σ p ln(p / q)` over two row-stochastic tensors.
pub fn kl_div(p: &Tensor, q: &Tensor) -> Result<f64> {
    p.same_shape(q, "kl_div")?;
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&a, &b)| a * (floored_ln(a) - floored_ln(b)))
        .sum();
    Ok(total / p.rows() as f64)
}

/// Gradients of [`kl_div`] with respect to `p` and `q`.
pub fn kl_div_grads(p: &Tensor, q: &Tensor) -> Result<(Tensor, Tensor)> {
    p.same_shape(q, "kl_div_grads")?;
    let b = p.rows() as f64;
    let mut dp = Tensor::zeros(p.shape());
    let mut dq = Tensor::zeros(p.shape());
    for (k, (&a, &c)) in p.data().iter().zip(q.data()).enumerate() {
        let own = if a >= PROB_FLOOR { 1.0 } else { 0.0 };
        dp.data_mut()[k] = (floored_ln(a) + own - floored_ln(c)) / b;
        dq.data_mut()[k] = if c >= PROB_FLOOR { -a / c / b } else { 0.0 };
    }
    Ok((dp, dq))
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len().max(1), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        t.row_mut(i)[y] = 1.0;
    }
    Ok(t)
}
