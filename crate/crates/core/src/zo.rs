//! Zeroth-order estimation of the generator-loss gradient with respect to the
//! synthetic batch, chained through the generator by ordinary backprop.
//!
//! The estimate is
//!
//! ```text
//! ∇̃ₓ L = (1/q) Σᵢ d · (L(x + ε uᵢ) − L(x)) / ε · uᵢ
//! ```
//!
//! where `d` is the per-sample dimensionality. With N(0, 1) directions its
//! expectation on a linear loss is `d` times the true gradient. The white-box
//! path ([`true_input_grad`]) computes the exact gradient and is only
//! reachable through [`WhiteBoxAccess`].

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Network};
use crate::objectives::{
    ensemble, generator_loss, generator_loss_grads, generator_loss_parts, EnsembleWeights, LossMask, LossParts,
    LossWeights,
};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationMode {
    /// Entries i.i.d. N(0, 1).
    Gaussian,
    /// Gaussian rows rescaled to norm √d.
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoConfig {
    pub q: usize,
    pub eps: f64,
    pub mode: PerturbationMode,
}

impl Default for ZoConfig {
    fn default() -> Self {
        Self { q: 10, eps: 1e-3, mode: PerturbationMode::Gaussian }
    }
}

impl ZoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidArgument(format!("ZO config needs q>=1 and eps>0, got {self:?}")));
        }
        Ok(())
    }
}

/// A base batch, its perturbation directions and the perturbed batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedBatchSet {
    pub base: Tensor,
    pub directions: Vec<Tensor>,
    pub perturbed: Vec<Tensor>,
    pub eps: f64,
}

impl PerturbedBatchSet {
    pub fn new(base: Tensor, directions: Vec<Tensor>, eps: f64) -> Result<Self> {
        let perturbed = directions
            .iter()
            .map(|u| {
                let mut p = base.clone();
                p.axpy(eps, u)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { base, directions, perturbed, eps })
    }
}

/// Draw `q` direction tensors of shape (B, d).
pub fn sample_perturbations<R: Rng + ?Sized>(batch: usize, dim: usize, cfg: &ZoConfig, rng: &mut R) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    Ok((0..cfg.q)
        .map(|_| {
            let mut u = Tensor::randn(&[batch, dim], rng);
            if cfg.mode == PerturbationMode::Sphere {
                let target = (dim as f64).sqrt();
                for i in 0..batch {
                    let row = u.row_mut(i);
                    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    row.iter_mut().for_each(|v| *v *= target / norm);
                }
            }
            u
        })
        .collect())
}

/// Full generator loss at a (possibly perturbed) batch `x`, from the ensemble
/// and global logits evaluated at exactly `x`. Returns the weighted total and
/// the unweighted parts.
#[allow(clippy::too_many_arguments)]
pub fn fd_loss_at(
    x: &Tensor,
    z: &Tensor,
    labels: &[usize],
    ens_at_x: &Tensor,
    global_at_x: &Tensor,
    weights: &LossWeights,
    mask: &LossMask,
) -> Result<(f64, LossParts)> {
    let parts = generator_loss_parts(ens_at_x, global_at_x, x, z, labels, weights.tau, mask)?;
    Ok((generator_loss(&parts, weights, mask), parts))
}

/// Finite-difference estimate of ∂L/∂x from the base loss and the losses at
/// the `q` perturbed batches.
pub fn zo_input_grad(base_loss: f64, perturbed_losses: &[f64], directions: &[Tensor], cfg: &ZoConfig) -> Result<Tensor> {
    cfg.validate()?;
    if perturbed_losses.len() != directions.len() || directions.is_empty() {
        return Err(Error::Shape(format!(
            "{} perturbed losses for {} directions",
            perturbed_losses.len(),
            directions.len()
        )));
    }
    let dim = directions[0].cols() as f64;
    let q = directions.len() as f64;
    let mut grad = Tensor::zeros(directions[0].shape());
    for (loss, u) in perturbed_losses.iter().zip(directions) {
        grad.axpy(dim * (loss - base_loss) / cfg.eps / q, u)?;
    }
    grad.check_finite("zo_input_grad")?;
    Ok(grad)
}

/// Backprop an input-space gradient through the generator's cached forward
/// pass; returns the generator parameter gradient.
pub fn chain_to_generator(generator: &Network, input_grad: &Tensor) -> Result<Vec<f64>> {
    Ok(generator.backward(input_grad)?.0)
}

pub fn generator_step(generator: &mut Network, grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let mut params = generator.params();
    adam_step(&mut params, grads, state, lr)?;
    generator.set_params(&params)
}

/// Capability to reach local models directly. Black-box client sets refuse it.
pub trait WhiteBoxAccess {
    fn local_models_mut(&mut self) -> Result<&mut [Network]>;
}

impl WhiteBoxAccess for Vec<Network> {
    fn local_models_mut(&mut self) -> Result<&mut [Network]> {
        Ok(self.as_mut_slice())
    }
}

impl WhiteBoxAccess for [Network] {
    fn local_models_mut(&mut self) -> Result<&mut [Network]> {
        Ok(self)
    }
}

/// Exact ∂L/∂x by reverse mode through the local models (ensemble path), the
/// global model (adversarial path) and the diversity term.
#[allow(clippy::too_many_arguments)]
pub fn true_input_grad(
    access: &mut dyn WhiteBoxAccess,
    weights: &EnsembleWeights,
    global: &mut Network,
    x: &Tensor,
    z: &Tensor,
    labels: &[usize],
    loss_weights: &LossWeights,
    mask: &LossMask,
) -> Result<Tensor> {
    let models = access.local_models_mut()?;
    if models.len() != weights.len() {
        return Err(Error::Shape(format!("{} models for {} weights", models.len(), weights.len())));
    }
    let local_logits = models.iter_mut().map(|m| m.forward(x)).collect::<Result<Vec<_>>>()?;
    let ens = ensemble(&local_logits, weights)?;
    let global_logits = global.forward(x)?;
    let g = generator_loss_grads(&ens, &global_logits, x, z, labels, loss_weights, mask)?;
    let mut grad = g.x;
    for (model, &w) in models.iter().zip(weights.as_slice()) {
        let (_, gin) = model.backward(&g.ens.scale(w))?;
        grad.axpy(1.0, &gin)?;
    }
    let (_, gin) = global.backward(&g.global)?;
    grad.axpy(1.0, &gin)?;
    Ok(grad)
}
