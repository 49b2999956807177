use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::nn::{adam_step, cross_entropy, loss::cross_entropy_grad, AdamState, Network};
use crate::objectives::{distill_grads, distill_loss};
use crate::rng::Rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    /// Forward outputs only; parameters never cross the boundary.
    BlackBox,
    /// Parameters may be uploaded and downloaded.
    WhiteBox,
}

/// A client as the server sees it: prediction plus opaque training entry
/// points. Data, model and optimizer state stay private.
#[derive(Debug, Clone)]
pub struct ClientHandle {
    id: usize,
    data: Dataset,
    model: Network,
    opt: AdamState,
    rng: Rng,
    access: Access,
}

impl ClientHandle {
    pub fn new(id: usize, data: Dataset, mut model: Network, rng: Rng, access: Access) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(format!("client {id} has an empty shard")));
        }
        if model.input_width() != data.dim() || model.output_width() != data.classes {
            return Err(Error::Shape(format!(
                "client {id}: model maps {} -> {}, data is {} -> {}",
                model.input_width(),
                model.output_width(),
                data.dim(),
                data.classes
            )));
        }
        model.set_training(false);
        let opt = AdamState::new(model.param_count());
        Ok(Self { id, data, model, opt, rng, access })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn access(&self) -> Access {
        self.access
    }

    /// N_k.
    pub fn sample_count(&self) -> usize {
        self.data.len()
    }

    /// Eval-mode logits; never mutates the client.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.model.infer(x)
    }

    pub fn predict_many(&self, batches: &[&Tensor]) -> Result<Vec<Tensor>> {
        batches.iter().map(|x| self.predict(x)).collect()
    }

    /// `epochs` passes of minibatch Adam on the private shard. Returns the mean
    /// cross-entropy of the final epoch. A zero learning rate leaves the
    /// model untouched.
    pub fn local_train(&mut self, epochs: usize, lr: f64, batch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        let mut last = 0.0;
        self.model.set_training(true);
        for _ in 0..epochs {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch.max(1)) {
                let x = self.data.samples.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| self.data.labels[i]).collect();
                total += self.ce_step(&x, &y, lr)? * chunk.len() as f64;
            }
            last = total / self.data.len() as f64;
        }
        self.model.set_training(false);
        self.model.clear_cache();
        Ok(last)
    }

    /// Full-batch cross-entropy steps on externally supplied labeled data.
    pub fn fine_tune(&mut self, x: &Tensor, labels: &[usize], epochs: usize, lr: f64) -> Result<f64> {
        let mut last = 0.0;
        self.model.set_training(true);
        for _ in 0..epochs {
            last = self.ce_step(x, labels, lr)?;
        }
        self.model.set_training(false);
        self.model.clear_cache();
        Ok(last)
    }

    fn ce_step(&mut self, x: &Tensor, y: &[usize], lr: f64) -> Result<f64> {
        let logits = self.model.forward(x)?;
        let loss = cross_entropy(&logits, y)?;
        if lr > 0.0 {
            let (grads, _) = self.model.backward(&cross_entropy_grad(&logits, y)?)?;
            let mut params = self.model.params();
            adam_step(&mut params, &grads, &mut self.opt, lr)?;
            self.model.set_params(&params)?;
        }
        Ok(loss)
    }

    /// Full-batch distillation toward `teacher` logits on `x`, one Adam step
    /// per epoch. Returns the loss before the last step.
    pub fn local_distill(&mut self, x: &Tensor, teacher: &Tensor, epochs: usize, lr: f64, tau: f64, scale: f64) -> Result<f64> {
        let mut last = 0.0;
        self.model.set_training(true);
        for _ in 0..epochs {
            let logits = self.model.forward(x)?;
            last = distill_loss(teacher, &logits, tau)?;
            if lr > 0.0 {
                let (_, g) = distill_grads(teacher, &logits, tau)?;
                let (grads, _) = self.model.backward(&g.scale(scale))?;
                let mut params = self.model.params();
                adam_step(&mut params, &grads, &mut self.opt, lr)?;
                self.model.set_params(&params)?;
            }
        }
        self.model.set_training(false);
        self.model.clear_cache();
        Ok(last)
    }

    fn require_white_box(&self, what: &str) -> Result<()> {
        match self.access {
            Access::WhiteBox => Ok(()),
            Access::BlackBox => Err(Error::Capability(format!("client {} is black-box; cannot {what}", self.id))),
        }
    }

    /// A copy of the local model. White-box clients only.
    pub fn upload_model(&self) -> Result<Network> {
        self.require_white_box("upload its model")?;
        let mut m = self.model.clone();
        m.clear_cache();
        Ok(m)
    }

    pub fn upload_params(&self) -> Result<Vec<f64>> {
        self.require_white_box("upload parameters")?;
        Ok(self.model.params())
    }

    /// Overwrite local parameters. White-box clients only.
    pub fn download_params(&mut self, params: &[f64]) -> Result<()> {
        self.require_white_box("accept parameters")?;
        self.model.set_params(params)
    }

    pub fn param_count(&self) -> usize {
        self.model.param_count()
    }
}
