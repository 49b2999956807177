//! Builders for the desk-scale classifiers and the conditional generator.

use crate::error::{Error, Result};
use crate::nn::{Activation, BatchNorm1d, Dense, LabelEmbedding, Layer, Network};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.input_dim == 0 || self.classes < 2 {
            return Err(Error::InvalidArgument(format!("degenerate classifier spec {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// MLP: dense → activation, repeated per hidden width, then a dense head of width C.
pub fn build_classifier(spec: &ClassifierSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut r = rng::stream(seed, "classifier-init", 0);
    let mut layers = Vec::new();
    let mut width = spec.input_dim;
    for &h in &spec.hidden {
        layers.push(Layer::Dense(Dense::init(width, h, &mut r)));
        layers.push(Layer::Activation(spec.activation));
        width = h;
    }
    layers.push(Layer::Dense(Dense::init(width, spec.classes, &mut r)));
    Network::new(spec.input_dim, layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl GeneratorSpec {
    /// The label embedding has the same width as the noise.
    pub fn embed_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 || self.classes < 2 || self.output_dim == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("degenerate generator spec {self:?}")));
        }
        Ok(())
    }
}

/// Embedding(C → d_z) ⊕ z → [Dense → BatchNorm → LeakyReLU(0.2)]* → Dense → Tanh.
///
/// The network input is (B, d_z + 1) with the class index in the last column;
/// see [`generator_input`].
pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut r = rng::stream(seed, "generator-init", 0);
    let mut layers = vec![Layer::LabelEmbedding(LabelEmbedding::init(
        spec.noise_dim,
        spec.classes,
        spec.embed_dim(),
        &mut r,
    ))];
    let mut width = spec.noise_dim + spec.embed_dim();
    for &h in &spec.hidden {
        layers.push(Layer::Dense(Dense::init(width, h, &mut r)));
        layers.push(Layer::BatchNorm(BatchNorm1d::new(h)));
        layers.push(Layer::Activation(Activation::LeakyRelu(0.2)));
        width = h;
    }
    layers.push(Layer::Dense(Dense::init(width, spec.output_dim, &mut r)));
    layers.push(Layer::Activation(Activation::Tanh));
    Network::new(spec.noise_dim + 1, layers)
}

/// Pack noise and labels into the generator's input layout.
pub fn generator_input(z: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!("{} noise rows for {} labels", z.rows(), labels.len())));
    }
    let d = z.cols();
    let mut data = Vec::with_capacity(z.rows() * (d + 1));
    for (row, &y) in z.rows_iter().zip(labels) {
        data.extend_from_slice(row);
        data.push(y as f64);
    }
    Tensor::matrix(z.rows(), d + 1, data)
}

/// A synthetic batch and the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    pub z: Tensor,
    pub labels: Vec<usize>,
    pub x: Tensor,
}

/// Sample z ~ N(0, 1) and ŷ ~ U{0..C}, then run the generator with caching so
/// that a backward pass can follow.
pub fn generate<R: Rng + ?Sized>(
    generator: &mut Network,
    batch: usize,
    classes: usize,
    noise_dim: usize,
    rng: &mut R,
) -> Result<SyntheticBatch> {
    if batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let z = Tensor::randn(&[batch, noise_dim], rng);
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let x = generator.forward(&generator_input(&z, &labels)?)?;
    Ok(SyntheticBatch { z, labels, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gen_spec() -> GeneratorSpec {
        GeneratorSpec { noise_dim: 4, classes: 3, hidden: vec![16, 16], output_dim: 5 }
    }

    #[test]
    fn classifier_param_count() {
        let spec = ClassifierSpec { input_dim: 2, hidden: vec![8], classes: 3, activation: Activation::Relu };
        assert_eq!(spec.param_count(), 51);
        assert_eq!(build_classifier(&spec, 1).unwrap().param_count(), 51);
    }

    #[test]
    fn classifier_seed_determinism() {
        let spec = ClassifierSpec { input_dim: 3, hidden: vec![4, 4], classes: 2, activation: Activation::Tanh };
        assert_eq!(build_classifier(&spec, 9).unwrap().params(), build_classifier(&spec, 9).unwrap().params());
        assert_ne!(build_classifier(&spec, 9).unwrap().params(), build_classifier(&spec, 10).unwrap().params());
    }

    #[test]
    fn zero_input_follows_bias_path() {
        let spec = ClassifierSpec { input_dim: 2, hidden: vec![3], classes: 2, activation: Activation::Tanh };
        let net = build_classifier(&spec, 4).unwrap();
        let p = net.params();
        // layout: W1 (3x2), b1 (3), W2 (2x3), b2 (2)
        let b1 = &p[6..9];
        let w2 = &p[9..15];
        let b2 = &p[15..17];
        let h: Vec<f64> = b1.iter().map(|b| b.tanh()).collect();
        let expected: Vec<f64> = (0..2)
            .map(|o| b2[o] + (0..3).map(|k| w2[o * 3 + k] * h[k]).sum::<f64>())
            .collect();
        let out = net.infer(&Tensor::zeros(&[1, 2])).unwrap();
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn generator_output_in_open_interval_and_deterministic() {
        let mut g1 = build_generator(&gen_spec(), 3).unwrap();
        let mut g2 = build_generator(&gen_spec(), 3).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = generate(&mut g1, 64, 3, 4, &mut r1).unwrap();
        let b = generate(&mut g2, 64, 3, 4, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z.shape(), &[64, 4]);
        assert_eq!(a.labels.len(), 64);
        assert_eq!(a.x.shape(), &[64, 5]);
        assert!(a.x.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn label_path_is_live() {
        let mut g = build_generator(&gen_spec(), 11).unwrap();
        g.set_training(false);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let z = Tensor::randn(&[1, 4], &mut r);
            let a = g.infer(&generator_input(&z, &[0]).unwrap()).unwrap();
            let b = g.infer(&generator_input(&z, &[2]).unwrap()).unwrap();
            assert!(a.max_abs_diff(&b) > 0.0);
        }
    }

    #[test]
    fn label_frequencies_uniform() {
        let mut g = build_generator(&gen_spec(), 1).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let n = 100_000;
        let batch = generate(&mut g, n, 3, 4, &mut r).unwrap();
        let mut counts = [0usize; 3];
        batch.labels.iter().for_each(|&y| counts[y] += 1);
        let p = 1.0 / 3.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
