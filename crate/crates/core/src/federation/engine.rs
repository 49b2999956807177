use super::client::{Access, ClientHandle};
use super::config::{FederationConfig, Method};
use crate::comms::{CommLedger, Direction, PayloadKind, PayloadShape};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::models::{build_classifier, build_generator, generate, generator_input, ClassifierSpec, GeneratorSpec, SyntheticBatch};
use crate::nn::{adam_step, AdamState, Network};
use crate::objectives::{class_frequency, distill_grads, distill_loss, ensemble, info_entropy_loss, EnsembleWeights, LossParts};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::zo::{chain_to_generator, fd_loss_at, generator_step, sample_perturbations, true_input_grad, zo_input_grad, PerturbedBatchSet};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Protocol phases, in the order a FedZGE round visits them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sample,
    LocalUpdate,
    Generate,
    Distribute,
    LocalPredict,
    Aggregate,
    GeneratorUpdate,
    GlobalDistill,
    DistributeEnsemble,
    LocalDistill,
    Average,
}

impl Phase {
    /// The FedZGE round order; the white-box variant follows it too.
    pub const FEDZGE_ORDER: [Phase; 10] = [
        Phase::Sample,
        Phase::LocalUpdate,
        Phase::Generate,
        Phase::Distribute,
        Phase::LocalPredict,
        Phase::Aggregate,
        Phase::GeneratorUpdate,
        Phase::GlobalDistill,
        Phase::DistributeEnsemble,
        Phase::LocalDistill,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub round: u64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub accuracy: f64,
    pub loss_fid: f64,
    pub loss_adv: f64,
    pub loss_div: f64,
    pub loss_info: f64,
    /// Mean global-distillation loss over the round's distillation epochs.
    pub loss_gd: f64,
    /// Mean local-distillation loss over participants; 0 when disabled.
    pub loss_ld: f64,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub participants: Vec<usize>,
}

/// Server-side state: global model, generator, their optimizers, the round
/// counter and the labeled random streams.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: Network,
    pub generator: Network,
    pub global_opt: AdamState,
    pub generator_opt: AdamState,
    round: u64,
    sampling_rng: Rng,
    synth_rng: Rng,
    zo_rng: Rng,
    aux_rng: Rng,
}

impl ServerState {
    pub fn new(global: Network, generator: Network, seed: u64) -> Self {
        Self {
            global_opt: AdamState::new(global.param_count()),
            generator_opt: AdamState::new(generator.param_count()),
            global,
            generator,
            round: 0,
            sampling_rng: rng::stream(seed, "client-sampling", 0),
            synth_rng: rng::stream(seed, "synthetic-batch", 0),
            zo_rng: rng::stream(seed, "perturbations", 0),
            aux_rng: rng::stream(seed, "aux-batch", 0),
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }
}

/// Uniform sample of ⌈fraction · K⌉ distinct client ids, sorted ascending.
pub fn sample_clients<R: rand::Rng + ?Sized>(clients: usize, fraction: f64, rng: &mut R) -> Vec<usize> {
    let n = super::config::sampled_count(clients, fraction);
    let mut ids = index::sample(rng, clients, n).into_vec();
    ids.sort_unstable();
    ids
}

/// Argmax accuracy on `test`; ties resolve to the lowest class index.
pub fn evaluate(model: &Network, test: &Dataset) -> Result<f64> {
    let pred = model.infer(&test.samples)?.argmax_rows();
    Ok(accuracy(&pred, &test.labels))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Weighted elementwise mean of parameter vectors, accumulated in order.
pub fn average_params(params: &[Vec<f64>], weights: &EnsembleWeights) -> Result<Vec<f64>> {
    let len = params.first().map_or(0, Vec::len);
    if params.len() != weights.len() || params.iter().any(|p| p.len() != len) {
        return Err(Error::Shape("parameter vectors differ in count or length".into()));
    }
    let mut out = vec![0.0; len];
    for (p, &w) in params.iter().zip(weights.as_slice()) {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// A full simulated federation: server, clients, evaluation data and the
/// communication ledger.
pub struct Simulation {
    cfg: FederationConfig,
    server: ServerState,
    clients: Vec<ClientHandle>,
    test: Dataset,
    aux: Option<Dataset>,
    ledger: CommLedger,
    trace: Vec<TraceEvent>,
}

fn classifier_spec(cfg: &FederationConfig, dim: usize, classes: usize, hidden: &[usize]) -> ClassifierSpec {
    ClassifierSpec { input_dim: dim, hidden: hidden.to_vec(), classes, activation: cfg.activation }
}

impl Simulation {
    /// Build models from `cfg` and hand shard k to client k.
    pub fn new(cfg: FederationConfig, shards: Vec<Dataset>, test: Dataset, aux: Option<Dataset>) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.clients {
            return Err(Error::InvalidArgument(format!("clients: {} shards for {} clients", shards.len(), cfg.clients)));
        }
        if cfg.method == Method::FedAvg && cfg.heterogeneous() {
            return Err(Error::Unsupported("fedavg requires identical client architectures".into()));
        }
        let (dim, classes) = (test.dim(), test.classes);
        let global_hidden = match (&cfg.global_hidden, cfg.method) {
            (_, Method::FedAvg) => cfg.client_arch(0).to_vec(),
            (Some(h), _) => h.clone(),
            (None, _) => (0..cfg.clients.min(cfg.client_hidden.len()))
                .map(|k| cfg.client_arch(k).to_vec())
                .max_by_key(|h| classifier_spec(&cfg, dim, classes, h).param_count())
                .expect("at least one client"),
        };
        let global = build_classifier(&classifier_spec(&cfg, dim, classes, &global_hidden), rng::derive_seed(cfg.seed, "global-init", 0))?;
        let gen_spec = GeneratorSpec { noise_dim: cfg.noise_dim, classes, hidden: cfg.generator_hidden.clone(), output_dim: dim };
        let generator = build_generator(&gen_spec, rng::derive_seed(cfg.seed, "generator-init", 0))?;
        let access = match cfg.method {
            Method::FedAvg | Method::WhiteboxDatafree => Access::WhiteBox,
            _ => Access::BlackBox,
        };
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(k, shard)| {
                let spec = classifier_spec(&cfg, dim, classes, cfg.client_arch(k));
                let model = build_classifier(&spec, rng::derive_seed(cfg.seed, "client-init", k as u64))?;
                ClientHandle::new(k, shard, model, rng::stream(cfg.seed, "client", k as u64), access)
            })
            .collect::<Result<Vec<_>>>()?;
        let server = ServerState::new(global, generator, cfg.seed);
        Self::from_parts(cfg, server, clients, test, aux)
    }

    /// Assemble from prebuilt parts.
    pub fn from_parts(
        cfg: FederationConfig,
        server: ServerState,
        clients: Vec<ClientHandle>,
        test: Dataset,
        aux: Option<Dataset>,
    ) -> Result<Self> {
        cfg.validate()?;
        if clients.len() != cfg.clients || clients.iter().enumerate().any(|(k, c)| c.id() != k) {
            return Err(Error::InvalidArgument("clients must be numbered 0..K in order".into()));
        }
        if cfg.method.needs_aux_data() && aux.is_none() {
            return Err(Error::InvalidArgument(format!("{} needs an auxiliary dataset", cfg.method)));
        }
        if cfg.method == Method::FedAvg {
            let n = server.global.param_count();
            if clients.iter().any(|c| c.param_count() != n) {
                return Err(Error::Unsupported("fedavg requires identical client architectures".into()));
            }
        }
        Ok(Self { cfg, server, clients, test, aux, ledger: CommLedger::new(), trace: Vec::new() })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientHandle] {
        &self.clients
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_parts(self) -> (CommLedger, Vec<TraceEvent>) {
        (self.ledger, self.trace)
    }

    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        (0..self.cfg.rounds).map(|_| self.run_round()).collect()
    }

    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        self.server.round += 1;
        let round = self.server.round;
        self.mark(Phase::Sample);
        let ids = sample_clients(self.cfg.clients, self.cfg.sample_fraction, &mut self.server.sampling_rng);
        let mut m = match self.cfg.method {
            Method::FedZge | Method::WhiteboxDatafree => self.round_data_free(&ids)?,
            Method::FedAvg => self.round_fedavg(&ids)?,
            Method::Mhat | Method::DsFl => self.round_distill(&ids)?,
            Method::Standalone => self.round_standalone(&ids)?,
        };
        m.round = round;
        m.bytes_down = self.ledger.round_total(round, Direction::Down);
        m.bytes_up = self.ledger.round_total(round, Direction::Up);
        m.participants = ids;
        Ok(m)
    }

    fn mark(&mut self, phase: Phase) {
        self.trace.push(TraceEvent { round: self.server.round, phase });
    }

    fn record(&mut self, client: usize, dir: Direction, kind: PayloadKind, elements: usize) {
        self.ledger.record(self.server.round, client, dir, kind, PayloadShape::f32s(elements as u64));
    }

    /// Apply `f` to each selected client, in parallel if configured; results
    /// come back in ascending id order either way.
    fn on_clients<T, F>(&mut self, ids: &[usize], f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut ClientHandle) -> Result<T> + Sync + Send,
    {
        let selected = |c: &&mut ClientHandle| ids.binary_search(&c.id()).is_ok();
        if self.cfg.parallel {
            self.clients.par_iter_mut().filter(selected).map(f).collect()
        } else {
            self.clients.iter_mut().filter(selected).map(f).collect()
        }
    }

    fn weights(&self, ids: &[usize]) -> Result<EnsembleWeights> {
        EnsembleWeights::from_counts(&ids.iter().map(|&k| self.clients[k].sample_count()).collect::<Vec<_>>())
    }

    fn local_update(&mut self, ids: &[usize]) -> Result<()> {
        self.mark(Phase::LocalUpdate);
        let (epochs, lr, batch) = (self.cfg.local_epochs, self.cfg.local_lr, self.cfg.local_batch);
        self.on_clients(ids, |c| c.local_train(epochs, lr, batch))?;
        Ok(())
    }

    /// E full-batch distillation steps of the global model toward `teacher`
    /// on `x`; returns the mean pre-step loss.
    fn global_distill(&mut self, x: &Tensor, teacher: &Tensor) -> Result<f64> {
        self.mark(Phase::GlobalDistill);
        let w = self.cfg.loss_weights;
        let global = &mut self.server.global;
        let mut total = 0.0;
        for _ in 0..self.cfg.global_distill_epochs {
            let logits = global.forward(x)?;
            total += distill_loss(teacher, &logits, w.tau)?;
            if self.cfg.global_lr > 0.0 {
                let (_, g) = distill_grads(teacher, &logits, w.tau)?;
                let (grads, _) = global.backward(&g.scale(w.kd_scale()))?;
                let mut params = global.params();
                adam_step(&mut params, &grads, &mut self.server.global_opt, self.cfg.global_lr)?;
                global.set_params(&params)?;
            }
        }
        global.clear_cache();
        Ok(total / self.cfg.global_distill_epochs as f64)
    }

    fn local_distill(&mut self, ids: &[usize], x: &Tensor, teacher: &Tensor) -> Result<f64> {
        self.mark(Phase::LocalDistill);
        if !self.cfg.local_distill {
            return Ok(0.0);
        }
        let (epochs, lr, tau, scale) =
            (self.cfg.local_distill_epochs, self.cfg.local_lr, self.cfg.loss_weights.tau, self.cfg.loss_weights.kd_scale());
        let losses = self.on_clients(ids, |c| c.local_distill(x, teacher, epochs, lr, tau, scale))?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Entropy (nats) of the ensemble's class distribution over a fresh
    /// synthetic batch from the current generator. Uses its own random stream
    /// and records nothing.
    pub fn synthetic_class_entropy(&self, batch: usize) -> Result<f64> {
        let mut r = rng::stream(self.cfg.seed, "balance-probe", self.server.round);
        let classes = self.test.classes;
        let z = Tensor::randn(&[batch, self.cfg.noise_dim], &mut r);
        let labels: Vec<usize> = (0..batch).map(|_| rand::Rng::random_range(&mut r, 0..classes)).collect();
        let x = self.server.generator.infer(&generator_input(&z, &labels)?)?;
        let all: Vec<usize> = (0..self.clients.len()).collect();
        let logits = self.clients.iter().map(|c| c.predict(&x)).collect::<Result<Vec<_>>>()?;
        let ens = ensemble(&logits, &self.weights(&all)?)?;
        Ok(-info_entropy_loss(&class_frequency(&ens)?))
    }

    fn metrics(&self, parts: LossParts, loss_gd: f64, loss_ld: f64) -> Result<RoundMetrics> {
        Ok(RoundMetrics {
            round: 0,
            accuracy: evaluate(&self.server.global, &self.test)?,
            loss_fid: parts.fid,
            loss_adv: parts.adv,
            loss_div: parts.div,
            loss_info: parts.info,
            loss_gd,
            loss_ld,
            bytes_down: 0,
            bytes_up: 0,
            participants: Vec::new(),
        })
    }

    fn round_data_free(&mut self, ids: &[usize]) -> Result<RoundMetrics> {
        let white_box = self.cfg.method == Method::WhiteboxDatafree;
        let classes = self.test.classes;
        let (dim, q) = (self.test.dim(), self.cfg.zo.q);
        self.local_update(ids)?;

        self.mark(Phase::Generate);
        let SyntheticBatch { z, labels, x } =
            generate(&mut self.server.generator, self.cfg.batch, classes, self.cfg.noise_dim, &mut self.server.synth_rng)?;
        let set = if white_box {
            PerturbedBatchSet::new(x.clone(), Vec::new(), self.cfg.zo.eps)?
        } else {
            let dirs = sample_perturbations(x.rows(), dim, &self.cfg.zo, &mut self.server.zo_rng)?;
            PerturbedBatchSet::new(x.clone(), dirs, self.cfg.zo.eps)?
        };

        self.mark(Phase::Distribute);
        for &k in ids {
            self.record(k, Direction::Down, PayloadKind::SyntheticBatch, x.len());
            for p in &set.perturbed {
                self.record(k, Direction::Down, PayloadKind::PerturbedBatch, p.len());
            }
        }

        self.mark(Phase::LocalPredict);
        let weights = self.weights(ids)?;
        let (ens_all, uploaded) = if white_box {
            let models: Vec<Network> = ids.iter().map(|&k| self.clients[k].upload_model()).collect::<Result<_>>()?;
            for (&k, m) in ids.iter().zip(&models) {
                self.record(k, Direction::Up, PayloadKind::ModelParameters, m.param_count());
            }
            let logits = models.iter().map(|m| m.infer(&x)).collect::<Result<Vec<_>>>()?;
            self.mark(Phase::Aggregate);
            (vec![ensemble(&logits, &weights)?], Some(models))
        } else {
            let mut batches: Vec<&Tensor> = vec![&set.base];
            batches.extend(set.perturbed.iter());
            let outputs = self.on_clients(ids, |c| c.predict_many(&batches))?;
            for (&k, outs) in ids.iter().zip(&outputs) {
                for o in outs {
                    self.record(k, Direction::Up, PayloadKind::LocalLogits, o.len());
                }
            }
            self.mark(Phase::Aggregate);
            let ens_all = (0..=q)
                .map(|i| ensemble(&outputs.iter().map(|o| o[i].clone()).collect::<Vec<_>>(), &weights))
                .collect::<Result<Vec<_>>>()?;
            (ens_all, None)
        };
        let ens = ens_all[0].clone();

        self.mark(Phase::GeneratorUpdate);
        let (lw, mask) = (self.cfg.loss_weights, self.cfg.mask);
        let global_at_x = self.server.global.infer(&x)?;
        let (base_loss, parts) = fd_loss_at(&x, &z, &labels, &ens, &global_at_x, &lw, &mask)?;
        let input_grad = match uploaded {
            Some(mut models) => {
                let mut global = self.server.global.clone();
                true_input_grad(&mut models, &weights, &mut global, &x, &z, &labels, &lw, &mask)?
            }
            None => {
                let losses = set
                    .perturbed
                    .iter()
                    .zip(&ens_all[1..])
                    .map(|(xp, e)| {
                        let g = self.server.global.infer(xp)?;
                        Ok(fd_loss_at(xp, &z, &labels, e, &g, &lw, &mask)?.0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                zo_input_grad(base_loss, &losses, &set.directions, &self.cfg.zo)?
            }
        };
        if self.cfg.generator_lr > 0.0 {
            let grads = chain_to_generator(&self.server.generator, &input_grad)?;
            generator_step(&mut self.server.generator, &grads, &mut self.server.generator_opt, self.cfg.generator_lr)?;
        }
        self.server.generator.clear_cache();

        let loss_gd = self.global_distill(&x, &ens)?;

        self.mark(Phase::DistributeEnsemble);
        for &k in ids {
            self.record(k, Direction::Down, PayloadKind::EnsembleLogits, ens.len());
        }
        let loss_ld = self.local_distill(ids, &x, &ens)?;
        self.metrics(parts, loss_gd, loss_ld)
    }

    fn round_fedavg(&mut self, ids: &[usize]) -> Result<RoundMetrics> {
        self.mark(Phase::Distribute);
        let global = self.server.global.params();
        for &k in ids {
            self.record(k, Direction::Down, PayloadKind::ModelParameters, global.len());
            self.clients[k].download_params(&global)?;
        }
        self.local_update(ids)?;
        let params = ids.iter().map(|&k| self.clients[k].upload_params()).collect::<Result<Vec<_>>>()?;
        for (&k, p) in ids.iter().zip(&params) {
            self.record(k, Direction::Up, PayloadKind::ModelParameters, p.len());
        }
        self.mark(Phase::Average);
        let avg = average_params(&params, &self.weights(ids)?)?;
        self.server.global.set_params(&avg)?;
        self.metrics(LossParts::default(), 0.0, 0.0)
    }

    fn round_distill(&mut self, ids: &[usize]) -> Result<RoundMetrics> {
        let labeled = self.cfg.method == Method::Mhat;
        self.local_update(ids)?;
        let aux = self.aux.as_ref().expect("checked at construction");
        let n = self.cfg.batch.min(aux.len());
        let mut pick = index::sample(&mut self.server.aux_rng, aux.len(), n).into_vec();
        pick.sort_unstable();
        let xp = aux.samples.select_rows(&pick);
        let yp: Vec<usize> = pick.iter().map(|&i| aux.labels[i]).collect();

        self.mark(Phase::Distribute);
        let global_out = if labeled { Some(self.server.global.infer(&xp)?) } else { None };
        for &k in ids {
            self.record(k, Direction::Down, PayloadKind::AuxData, xp.len());
            if let Some(g) = &global_out {
                self.record(k, Direction::Down, PayloadKind::AuxLabels, yp.len());
                self.record(k, Direction::Down, PayloadKind::GlobalLogits, g.len());
            }
        }

        self.mark(Phase::LocalPredict);
        let outputs = self.on_clients(ids, |c| c.predict(&xp))?;
        for (&k, o) in ids.iter().zip(&outputs) {
            self.record(k, Direction::Up, PayloadKind::LocalLogits, o.len());
        }
        self.mark(Phase::Aggregate);
        let ens = ensemble(&outputs, &self.weights(ids)?)?;
        let loss_gd = self.global_distill(&xp, &ens)?;

        let loss_ld = if let Some(g) = global_out {
            self.mark(Phase::LocalDistill);
            let c = &self.cfg;
            let (epochs, lr, tau, scale) = (c.local_distill_epochs, c.local_lr, c.loss_weights.tau, c.loss_weights.kd_scale());
            let enabled = c.local_distill;
            let losses = self.on_clients(ids, |cl| {
                let ld = if enabled { cl.local_distill(&xp, &g, epochs, lr, tau, scale)? } else { 0.0 };
                cl.fine_tune(&xp, &yp, epochs, lr)?;
                Ok(ld)
            })?;
            losses.iter().sum::<f64>() / losses.len() as f64
        } else {
            self.mark(Phase::DistributeEnsemble);
            for &k in ids {
                self.record(k, Direction::Down, PayloadKind::EnsembleLogits, ens.len());
            }
            self.local_distill(ids, &xp, &ens)?
        };
        self.metrics(LossParts::default(), loss_gd, loss_ld)
    }

    fn round_standalone(&mut self, ids: &[usize]) -> Result<RoundMetrics> {
        self.local_update(ids)?;
        let test = &self.test;
        let best = self
            .clients
            .iter()
            .map(|c| Ok(accuracy(&c.predict(&test.samples)?.argmax_rows(), &test.labels)))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let mut m = self.metrics(LossParts::default(), 0.0, 0.0)?;
        m.accuracy = best;
        Ok(m)
    }
}
