use super::layer::{Cache, Layer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered stack of layers with a flat parameter view.
///
/// A network is single-writer: [`Network::forward`] caches activations and,
/// in train mode, advances batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_width: usize,
    training: bool,
    caches: Option<Vec<Cache>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.input_width == other.input_width
    }
}

impl Network {
    pub fn new(input_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut width = input_width;
        for (i, layer) in layers.iter().enumerate() {
            if let Some(w) = layer.input_width() {
                if w != width {
                    return Err(Error::Shape(format!("layer {i} expects width {w}, previous emits {width}")));
                }
            }
            width = layer.output_width(width);
        }
        Ok(Self { layers, input_width, training: true, caches: None })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers.iter().fold(self.input_width, |w, l| l.output_width(w))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("set_params"));
        }
        let mut rest = params;
        for l in &mut self.layers {
            rest = l.read_params(rest);
        }
        Ok(())
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_width {
            return Err(Error::Shape(format!(
                "network expects (B, {}), got {:?}",
                self.input_width,
                x.shape()
            )));
        }
        x.check_finite("network input")
    }

    /// Forward pass that caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.caches = None;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &mut self.layers {
            if self.training {
                layer.update_running_stats(&h);
            }
            let (out, cache) = layer.forward(&h, self.training)?;
            caches.push(cache);
            h = out;
        }
        h.check_finite("forward")?;
        self.caches = Some(caches);
        Ok(h)
    }

    /// Forward pass without caching or running-statistic updates.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, self.training)?.0;
        }
        h.check_finite("infer")?;
        Ok(h)
    }

    /// Reverse-mode gradients of `<upstream, output>` with respect to the
    /// flat parameter vector and the input of the last cached forward pass.
    pub fn backward(&self, upstream: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let caches = self.caches.as_ref().ok_or(Error::NoCache)?;
        let expected = [upstream.rows(), self.output_width()];
        let batch = match caches.first() {
            Some(Cache::Input(x)) | Some(Cache::Activation { input: x, .. }) => x.rows(),
            Some(Cache::BatchNorm { xhat, .. }) => xhat.rows(),
            Some(Cache::Labels(l)) => l.len(),
            None => upstream.rows(),
        };
        if upstream.shape() != expected || batch != upstream.rows() {
            return Err(Error::Shape(format!(
                "upstream {:?} does not match output ({batch}, {})",
                upstream.shape(),
                self.output_width()
            )));
        }
        let mut per_layer: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = upstream.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            g = layer.backward(cache, &g, &mut per_layer[i])?;
        }
        let grads: Vec<f64> = per_layer.into_iter().flatten().collect();
        if grads.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward"));
        }
        g.check_finite("backward")?;
        Ok((grads, g))
    }

    pub fn clear_cache(&mut self) {
        self.caches = None;
    }
}
