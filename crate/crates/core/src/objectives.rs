//! Generator and distillation objectives over logits, plus the
//! sample-size-weighted client ensemble.
//!
//! Each loss has a matching `*_grad` that returns gradients with respect to
//! its tensor arguments; these feed the white-box gradient path and the
//! server-side global model update.

use crate::error::{Error, Result};
use crate::nn::loss::{self, kl_div_grads, softmax_vjp};
use crate::nn::{cross_entropy, kl_div, softmax, softmax_t};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Client weights `N_k / N` over the participating set, in client order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::InvalidArgument("ensemble needs a positive sample count".into()));
        }
        Ok(Self(counts.iter().map(|&n| n as f64 / total as f64).collect()))
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("weights must form a distribution, got {weights:?}")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub adv: f64,
    pub div: f64,
    pub info: f64,
    pub tau: f64,
    /// Multiply every temperature-softened KL term by τ².
    #[serde(default)]
    pub tau_squared: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, div: 1.0, info: 1.0, tau: 5.0, tau_squared: false }
    }
}

impl LossWeights {
    /// Scale applied to KL distillation terms.
    pub fn kd_scale(&self) -> f64 {
        if self.tau_squared {
            self.tau * self.tau
        } else {
            1.0
        }
    }
}

/// Which generator-loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossMask {
    pub fid: bool,
    pub adv: bool,
    pub div: bool,
    pub info: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl LossMask {
    pub const ALL: LossMask = LossMask { fid: true, adv: true, div: true, info: true };
    pub const FID_ONLY: LossMask = LossMask { fid: true, adv: false, div: false, info: false };
    pub const NONE: LossMask = LossMask { fid: false, adv: false, div: false, info: false };
}

/// Unweighted values of the four generator-loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub fid: f64,
    pub adv: f64,
    pub div: f64,
    pub info: f64,
}

/// Weighted sum of client logits, accumulated in ascending client order.
pub fn ensemble(local_logits: &[Tensor], weights: &EnsembleWeights) -> Result<Tensor> {
    if local_logits.len() != weights.len() || local_logits.is_empty() {
        return Err(Error::Shape(format!("{} logit sets for {} weights", local_logits.len(), weights.len())));
    }
    let mut out = Tensor::zeros(local_logits[0].shape());
    for (logits, &w) in local_logits.iter().zip(weights.as_slice()) {
        out.axpy(w, logits)?;
    }
    Ok(out)
}

pub fn fidelity_loss(ens: &Tensor, labels: &[usize]) -> Result<f64> {
    cross_entropy(ens, labels)
}

pub fn fidelity_grad(ens: &Tensor, labels: &[usize]) -> Result<Tensor> {
    loss::cross_entropy_grad(ens, labels)
}

/// KL(σ(teacher; τ) ‖ σ(student; τ)), batch mean.
pub fn distill_loss(teacher: &Tensor, student: &Tensor, tau: f64) -> Result<f64> {
    teacher.same_shape(student, "distill_loss")?;
    kl_div(&softmax_t(teacher, tau)?, &softmax_t(student, tau)?)
}

/// Gradients of [`distill_loss`] with respect to the teacher and student logits.
pub fn distill_grads(teacher: &Tensor, student: &Tensor, tau: f64) -> Result<(Tensor, Tensor)> {
    teacher.same_shape(student, "distill_grads")?;
    let p = softmax_t(teacher, tau)?;
    let q = softmax_t(student, tau)?;
    let (dp, dq) = kl_div_grads(&p, &q)?;
    Ok((softmax_vjp(&p, &dp, tau)?, softmax_vjp(&q, &dq, tau)?))
}

/// Server-side distillation of the global model toward the ensemble.
pub fn global_distill_loss(ens: &Tensor, global: &Tensor, tau: f64) -> Result<f64> {
    distill_loss(ens, global, tau)
}

/// Negated global distillation loss: the generator maximizes disagreement.
pub fn adversarial_loss(ens: &Tensor, global: &Tensor, tau: f64) -> Result<f64> {
    Ok(-global_distill_loss(ens, global, tau)?)
}

/// Client-side distillation of a local model toward the ensemble.
pub fn local_distill_loss(ens: &Tensor, local: &Tensor, tau: f64) -> Result<f64> {
    distill_loss(ens, local, tau)
}

/// Distillation on auxiliary data, for the distillation-based baselines.
pub fn aux_distill_loss(ens_on_aux: &Tensor, global_on_aux: &Tensor, tau: f64) -> Result<f64> {
    distill_loss(ens_on_aux, global_on_aux, tau)
}

fn pairwise_dist(t: &Tensor, i: usize, j: usize) -> f64 {
    t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn check_div_args(x: &Tensor, z: &Tensor) -> Result<usize> {
    if x.rows() != z.rows() {
        return Err(Error::Shape(format!("diversity: {} samples vs {} noise rows", x.rows(), z.rows())));
    }
    Ok(x.rows())
}

/// exp(-(1/B²) Σ_{i,j} ‖x_i − x_j‖·‖z_i − z_j‖), diagonal included.
pub fn diversity_loss(x: &Tensor, z: &Tensor) -> Result<f64> {
    let b = check_div_args(x, z)?;
    let mut s = 0.0;
    for i in 0..b {
        for j in 0..b {
            s += pairwise_dist(x, i, j) * pairwise_dist(z, i, j);
        }
    }
    Ok((-s / (b * b) as f64).exp())
}

/// Gradient of [`diversity_loss`] with respect to `x`; coincident rows
/// contribute a zero subgradient.
pub fn diversity_grad(x: &Tensor, z: &Tensor) -> Result<Tensor> {
    let b = check_div_args(x, z)?;
    let value = diversity_loss(x, z)?;
    let scale = -value / (b * b) as f64;
    let mut g = Tensor::zeros(x.shape());
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let dx = pairwise_dist(x, i, j);
            if dx == 0.0 {
                continue;
            }
            // (i, j) and (j, i) both depend on x_i
            let coeff = 2.0 * scale * pairwise_dist(z, i, j) / dx;
            let xj = x.row(j).to_vec();
            for (gk, (xik, xjk)) in g.row_mut(i).iter_mut().zip(x.row(i).iter().zip(&xj)) {
                *gk += coeff * (xik - xjk);
            }
        }
    }
    Ok(g)
}

/// Batch-mean of the plain softmax of the ensemble logits.
pub fn class_frequency(ens: &Tensor) -> Result<Vec<f64>> {
    let probs = softmax(ens)?;
    let mut p = vec![0.0; ens.cols()];
    for row in probs.rows_iter() {
        p.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    let b = ens.rows() as f64;
    p.iter_mut().for_each(|v| *v /= b);
    Ok(p)
}

/// Negative entropy Σ p ln p (natural log, floored).
pub fn info_entropy_loss(p: &[f64]) -> f64 {
    p.iter().map(|&v| v * v.max(loss::PROB_FLOOR).ln()).sum()
}

/// Gradient of `info_entropy_loss(class_frequency(ens))` with respect to `ens`.
pub fn info_entropy_grad(ens: &Tensor) -> Result<Tensor> {
    let p = class_frequency(ens)?;
    let dp: Vec<f64> = p
        .iter()
        .map(|&v| if v >= loss::PROB_FLOOR { v.ln() + 1.0 } else { loss::PROB_FLOOR.ln() })
        .collect();
    let b = ens.rows() as f64;
    let probs = softmax(ens)?;
    let mut g_probs = Tensor::zeros(ens.shape());
    for i in 0..ens.rows() {
        g_probs.row_mut(i).iter_mut().zip(&dp).for_each(|(g, d)| *g = d / b);
    }
    softmax_vjp(&probs, &g_probs, 1.0)
}

/// fid + β₁·adv + β₂·div + β₃·info, with masked-out terms contributing zero.
pub fn generator_loss(parts: &LossParts, w: &LossWeights, mask: &LossMask) -> f64 {
    let term = |on: bool, beta: f64, v: f64| if on { beta * v } else { 0.0 };
    term(mask.fid, 1.0, parts.fid)
        + term(mask.adv, w.adv * w.kd_scale(), parts.adv)
        + term(mask.div, w.div, parts.div)
        + term(mask.info, w.info, parts.info)
}

/// Evaluate the active generator-loss terms; inactive ones are reported as 0.
pub fn generator_loss_parts(
    ens: &Tensor,
    global: &Tensor,
    x: &Tensor,
    z: &Tensor,
    labels: &[usize],
    tau: f64,
    mask: &LossMask,
) -> Result<LossParts> {
    ens.same_shape(global, "generator loss logits")?;
    if ens.rows() != x.rows() {
        return Err(Error::Shape(format!("{} logit rows for {} samples", ens.rows(), x.rows())));
    }
    Ok(LossParts {
        fid: if mask.fid { fidelity_loss(ens, labels)? } else { 0.0 },
        adv: if mask.adv { adversarial_loss(ens, global, tau)? } else { 0.0 },
        div: if mask.div { diversity_loss(x, z)? } else { 0.0 },
        info: if mask.info { info_entropy_loss(&class_frequency(ens)?) } else { 0.0 },
    })
}

/// Gradients of the weighted generator loss with respect to the ensemble
/// logits, the global logits and the synthetic batch.
pub struct GeneratorLossGrads {
    pub ens: Tensor,
    pub global: Tensor,
    pub x: Tensor,
}

pub fn generator_loss_grads(
    ens: &Tensor,
    global: &Tensor,
    x: &Tensor,
    z: &Tensor,
    labels: &[usize],
    w: &LossWeights,
    mask: &LossMask,
) -> Result<GeneratorLossGrads> {
    let mut g_ens = Tensor::zeros(ens.shape());
    let mut g_global = Tensor::zeros(global.shape());
    let mut g_x = Tensor::zeros(x.shape());
    if mask.fid {
        g_ens.axpy(1.0, &fidelity_grad(ens, labels)?)?;
    }
    if mask.adv {
        let (gt, gs) = distill_grads(ens, global, w.tau)?;
        let k = w.adv * w.kd_scale();
        g_ens.axpy(-k, &gt)?;
        g_global.axpy(-k, &gs)?;
    }
    if mask.div {
        g_x.axpy(w.div, &diversity_grad(x, z)?)?;
    }
    if mask.info {
        g_ens.axpy(w.info, &info_entropy_grad(ens)?)?;
    }
    Ok(GeneratorLossGrads { ens: g_ens, global: g_global, x: g_x })
}
