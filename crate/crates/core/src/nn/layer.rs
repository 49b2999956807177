use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the pre-activation input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer `y = x Wᵀ + b`, with `W` stored row-major as (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Uniform fan-in initialization, U(-1/sqrt(in), 1/sqrt(in)) for weights and biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-bound..bound)).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self { inputs, outputs, weight, bias }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let b = x.rows();
        let mut out = vec![0.0; b * self.outputs];
        for (i, xr) in x.rows_iter().enumerate() {
            let orow = &mut out[i * self.outputs..(i + 1) * self.outputs];
            for (o, slot) in orow.iter_mut().enumerate() {
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                *slot = self.bias[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Tensor::from_parts(b, self.outputs, out)
    }

    fn backward(&self, input: &Tensor, grad_out: &Tensor, grads: &mut Vec<f64>) -> Tensor {
        let b = input.rows();
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; self.outputs];
        let mut gin = vec![0.0; b * self.inputs];
        for i in 0..b {
            let xr = input.row(i);
            let gr = grad_out.row(i);
            let gi = &mut gin[i * self.inputs..(i + 1) * self.inputs];
            for (o, &g) in gr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let gwo = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for k in 0..self.inputs {
                    gwo[k] += g * xr[k];
                    gi[k] += g * w[k];
                }
            }
        }
        grads.extend_from_slice(&gw);
        grads.extend_from_slice(&gb);
        Tensor::from_parts(b, self.inputs, gin)
    }
}

/// Batch normalization over the feature axis of a (B, F) input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub features: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Weight on the previous running statistic.
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    fn batch_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let (b, f) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; f];
        for r in x.rows_iter() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b);
        let mut var = vec![0.0; f];
        for r in x.rows_iter() {
            for j in 0..f {
                let d = r[j] - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= b);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let f = self.features;
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for (i, r) in x.rows_iter().enumerate() {
            for j in 0..f {
                let h = (r[j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = h;
                out[i * f + j] = self.gamma[j] * h + self.beta[j];
            }
        }
        (Tensor::from_parts(x.rows(), f, xhat), Tensor::from_parts(x.rows(), f, out))
    }
}

/// Concatenates a learned class embedding onto a noise vector.
///
/// The input is (B, noise_dim + 1): the first `noise_dim` columns are noise,
/// the last column holds the integral class index. The output is
/// (B, noise_dim + embed_dim). The label column receives a zero input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    pub noise_dim: usize,
    pub classes: usize,
    pub embed_dim: usize,
    /// (classes, embed_dim), row-major.
    pub table: Vec<f64>,
}

impl LabelEmbedding {
    pub fn init<R: Rng + ?Sized>(noise_dim: usize, classes: usize, embed_dim: usize, rng: &mut R) -> Self {
        let table = Tensor::randn(&[classes, embed_dim], rng).into_data();
        Self { noise_dim, classes, embed_dim, table }
    }

    pub fn labels_of(&self, x: &Tensor) -> Result<Vec<usize>> {
        x.rows_iter()
            .map(|r| {
                let v = r[self.noise_dim];
                let label = v as usize;
                if v < 0.0 || v.fract() != 0.0 || label >= self.classes {
                    Err(Error::InvalidArgument(format!(
                        "label column value {v} is not a class index below {}",
                        self.classes
                    )))
                } else {
                    Ok(label)
                }
            })
            .collect()
    }
}

/// One entry of a network's layer stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Activation(Activation),
    BatchNorm(BatchNorm1d),
    LabelEmbedding(LabelEmbedding),
}

/// What a layer remembers from a forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Activation { input: Tensor, output: Tensor },
    BatchNorm { xhat: Tensor, inv_std: Vec<f64>, batch_stats: bool },
    Labels(Vec<usize>),
}

impl Layer {
    pub fn input_width(&self) -> Option<usize> {
        match self {
            Layer::Dense(d) => Some(d.inputs),
            Layer::BatchNorm(bn) => Some(bn.features),
            Layer::LabelEmbedding(e) => Some(e.noise_dim + 1),
            Layer::Activation(_) => None,
        }
    }

    pub fn output_width(&self, input: usize) -> usize {
        match self {
            Layer::Dense(d) => d.outputs,
            Layer::LabelEmbedding(e) => e.noise_dim + e.embed_dim,
            _ => input,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::BatchNorm(bn) => 2 * bn.features,
            Layer::LabelEmbedding(e) => e.table.len(),
            Layer::Activation(_) => 0,
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Dense(d) => {
                out.extend_from_slice(&d.weight);
                out.extend_from_slice(&d.bias);
            }
            Layer::BatchNorm(bn) => {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
            Layer::LabelEmbedding(e) => out.extend_from_slice(&e.table),
            Layer::Activation(_) => {}
        }
    }

    /// Consume this layer's parameters from the front of `src`.
    pub(crate) fn read_params<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        fn take<'a>(dst: &mut [f64], src: &'a [f64]) -> &'a [f64] {
            let (head, rest) = src.split_at(dst.len());
            dst.copy_from_slice(head);
            rest
        }
        match self {
            Layer::Dense(d) => {
                let rest = take(&mut d.weight, src);
                take(&mut d.bias, rest)
            }
            Layer::BatchNorm(bn) => {
                let rest = take(&mut bn.gamma, src);
                take(&mut bn.beta, rest)
            }
            Layer::LabelEmbedding(e) => take(&mut e.table, src),
            Layer::Activation(_) => src,
        }
    }

    /// Pure forward pass. In `train` mode batch-norm uses batch statistics.
    pub(crate) fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Cache)> {
        if let Some(w) = self.input_width() {
            if x.cols() != w {
                return Err(Error::Shape(format!("layer expects width {w}, got {}", x.cols())));
            }
        }
        Ok(match self {
            Layer::Dense(d) => (d.forward(x), Cache::Input(x.clone())),
            Layer::Activation(a) => {
                let y = x.map(|v| a.apply(v));
                (y.clone(), Cache::Activation { input: x.clone(), output: y })
            }
            Layer::BatchNorm(bn) => {
                let (mean, var, batch_stats) = if train {
                    let (m, v) = BatchNorm1d::batch_stats(x);
                    (m, v, true)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone(), false)
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                let (xhat, out) = bn.normalize(x, &mean, &inv_std);
                (out, Cache::BatchNorm { xhat, inv_std, batch_stats })
            }
            Layer::LabelEmbedding(e) => {
                let labels = e.labels_of(x)?;
                let width = e.noise_dim + e.embed_dim;
                let mut out = Vec::with_capacity(x.rows() * width);
                for (r, &label) in x.rows_iter().zip(&labels) {
                    out.extend_from_slice(&r[..e.noise_dim]);
                    out.extend_from_slice(&e.table[label * e.embed_dim..(label + 1) * e.embed_dim]);
                }
                (Tensor::from_parts(x.rows(), width, out), Cache::Labels(labels))
            }
        })
    }

    /// Fold the batch statistics of `x` into the running averages.
    pub(crate) fn update_running_stats(&mut self, x: &Tensor) {
        if let Layer::BatchNorm(bn) = self {
            let (mean, var) = BatchNorm1d::batch_stats(x);
            let b = x.rows() as f64;
            let unbias = if b > 1.0 { b / (b - 1.0) } else { 1.0 };
            for j in 0..bn.features {
                bn.running_mean[j] = bn.momentum * bn.running_mean[j] + (1.0 - bn.momentum) * mean[j];
                bn.running_var[j] =
                    bn.momentum * bn.running_var[j] + (1.0 - bn.momentum) * var[j] * unbias;
            }
        }
    }

    /// Reverse pass: returns the input gradient and appends this layer's
    /// parameter gradients (in `write_params` order) to `grads`.
    pub(crate) fn backward(&self, cache: &Cache, g: &Tensor, grads: &mut Vec<f64>) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Input(x)) => Ok(d.backward(x, g, grads)),
            (Layer::Activation(a), Cache::Activation { input, output }) => {
                let data = g
                    .data()
                    .iter()
                    .zip(input.data().iter().zip(output.data()))
                    .map(|(&gv, (&x, &y))| gv * a.derivative(x, y))
                    .collect();
                Tensor::new(input.shape().to_vec(), data)
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, batch_stats }) => {
                let (b, f) = (g.rows(), bn.features);
                let mut dgamma = vec![0.0; f];
                let mut dbeta = vec![0.0; f];
                for i in 0..b {
                    for j in 0..f {
                        let gv = g.data()[i * f + j];
                        dgamma[j] += gv * xhat.data()[i * f + j];
                        dbeta[j] += gv;
                    }
                }
                let mut dx = vec![0.0; b * f];
                let n = b as f64;
                for i in 0..b {
                    for j in 0..f {
                        let gv = g.data()[i * f + j];
                        dx[i * f + j] = if *batch_stats {
                            bn.gamma[j] * inv_std[j] / n
                                * (n * gv - dbeta[j] - xhat.data()[i * f + j] * dgamma[j])
                        } else {
                            gv * bn.gamma[j] * inv_std[j]
                        };
                    }
                }
                grads.extend_from_slice(&dgamma);
                grads.extend_from_slice(&dbeta);
                Ok(Tensor::from_parts(b, f, dx))
            }
            (Layer::LabelEmbedding(e), Cache::Labels(labels)) => {
                let width = e.noise_dim + e.embed_dim;
                let mut dtable = vec![0.0; e.table.len()];
                let mut dx = Vec::with_capacity(g.rows() * (e.noise_dim + 1));
                for (i, &label) in labels.iter().enumerate() {
                    let gr = &g.data()[i * width..(i + 1) * width];
                    dx.extend_from_slice(&gr[..e.noise_dim]);
                    dx.push(0.0);
                    for (t, v) in dtable[label * e.embed_dim..(label + 1) * e.embed_dim]
                        .iter_mut()
                        .zip(&gr[e.noise_dim..])
                    {
                        *t += v;
                    }
                }
                grads.extend_from_slice(&dtable);
                Ok(Tensor::from_parts(g.rows(), e.noise_dim + 1, dx))
            }
            _ => Err(Error::NoCache),
        }
    }
}
