//! Monte-Carlo calibration of the zeroth-order estimator on losses with known
//! gradients.

use crate::error::Result;
use crate::rng;
use crate::tensor::Tensor;
use crate::zo::{sample_perturbations, zo_input_grad, PerturbationMode, ZoConfig};

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    a.dot(b).expect("same shape") / (a.norm() * b.norm())
}

/// Batch-mean linear loss (1/B) Σᵢ ⟨aᵢ, xᵢ⟩.
fn linear(a: &Tensor, x: &Tensor) -> f64 {
    a.dot(x).expect("same shape") / a.rows() as f64
}

/// Largest relative deviation of single-direction estimates on a linear loss
/// from the closed form d·⟨a, u⟩/B·u, over several step sizes.
pub fn linear_exactness(seed: u64) -> Result<f64> {
    let (b, d) = (3, 7);
    let mut r = rng::stream(seed, "zo-linear", 0);
    let a = Tensor::randn(&[b, d], &mut r);
    let x = Tensor::randn(&[b, d], &mut r);
    let mut worst: f64 = 0.0;
    for eps in [1e-3, 1e-2, 0.1, 1.0] {
        let cfg = ZoConfig { q: 1, eps, mode: PerturbationMode::Gaussian };
        for _ in 0..20 {
            let u = sample_perturbations(b, d, &cfg, &mut r)?;
            let mut xp = x.clone();
            xp.axpy(eps, &u[0])?;
            let est = zo_input_grad(linear(&a, &x), &[linear(&a, &xp)], &u, &cfg)?;
            let closed = u[0].scale(d as f64 * a.dot(&u[0])? / b as f64);
            worst = worst.max(est.sub(&closed)?.norm() / closed.norm());
        }
    }
    Ok(worst)
}

/// Relative error between the mean of `draws` single-direction estimates on
/// a linear loss and d times its true gradient.
pub fn linear_expectation(mode: PerturbationMode, draws: usize, seed: u64) -> Result<f64> {
    let (b, d) = (2, 8);
    let mut r = rng::stream(seed, "zo-expectation", 0);
    let a = Tensor::randn(&[b, d], &mut r);
    let x = Tensor::randn(&[b, d], &mut r);
    let cfg = ZoConfig { q: 1, eps: 1e-3, mode };
    let base = linear(&a, &x);
    let mut mean = Tensor::zeros(&[b, d]);
    for _ in 0..draws {
        let u = sample_perturbations(b, d, &cfg, &mut r)?;
        let mut xp = x.clone();
        xp.axpy(cfg.eps, &u[0])?;
        mean.axpy(1.0 / draws as f64, &zo_input_grad(base, &[linear(&a, &xp)], &u, &cfg)?)?;
    }
    let target = a.scale(d as f64 / b as f64);
    Ok(mean.sub(&target)?.norm() / target.norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineReport {
    /// Cosine between the average of all trial estimates and the gradient.
    pub mean_estimate: f64,
    /// Average of the per-trial cosines.
    pub per_trial: f64,
}

/// Cosine similarity of ZO estimates with the gradient of ½‖x‖² at a fixed
/// random point of dimension `d`.
pub fn quadratic_cosine(d: usize, q: usize, trials: usize, seed: u64) -> Result<CosineReport> {
    let mut r = rng::stream(seed, "zo-quadratic", 0);
    let x = Tensor::randn(&[1, d], &mut r);
    let loss = |t: &Tensor| 0.5 * t.dot(t).expect("same shape");
    let cfg = ZoConfig { q, eps: 1e-3, mode: PerturbationMode::Gaussian };
    let mut sum = Tensor::zeros(&[1, d]);
    let mut per_trial = 0.0;
    for _ in 0..trials {
        let u = sample_perturbations(1, d, &cfg, &mut r)?;
        let losses: Vec<f64> = u
            .iter()
            .map(|ui| {
                let mut xp = x.clone();
                xp.axpy(cfg.eps, ui).expect("same shape");
                loss(&xp)
            })
            .collect();
        let est = zo_input_grad(loss(&x), &losses, &u, &cfg)?;
        per_trial += cosine(&est, &x) / trials as f64;
        sum.axpy(1.0, &est)?;
    }
    Ok(CosineReport { mean_estimate: cosine(&sum, &x), per_trial })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_exact() {
        assert!(linear_exactness(1).unwrap() < 1e-9);
    }

    #[test]
    fn quadratic_report_is_bounded() {
        let c = quadratic_cosine(8, 4, 20, 2).unwrap();
        assert!(c.per_trial.abs() <= 1.0 && c.mean_estimate.abs() <= 1.0);
        assert!(c.mean_estimate > c.per_trial);
    }
}
