use super::config::FederationConfig;
use super::engine::{RoundMetrics, Simulation, TraceEvent};
use crate::comms::{to_gib, CommLedger};
use crate::datasets::{dirichlet_partition, make_synthetic, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};

/// Synthetic task and its split across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Auxiliary pool for the distillation baselines.
    pub aux_per_class: usize,
    pub spread: f64,
    pub alpha: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { classes: 4, dim: 16, train_per_class: 500, test_per_class: 200, aux_per_class: 100, spread: 0.5, alpha: 1.0 }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::InvalidArgument(format!("{key}: {why}")));
        if self.classes < 2 {
            return bad("classes", "must be at least 2");
        }
        if self.dim < 2 {
            return bad("dim", "must be at least 2");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 || self.aux_per_class == 0 {
            return bad("train_per_class", "per-class counts must be positive");
        }
        if !(self.spread >= 0.0) || !self.spread.is_finite() {
            return bad("spread", "must be finite and non-negative");
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad("alpha", "must be positive");
        }
        Ok(())
    }
}

/// Train shards, test set and auxiliary pool for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub shards: Vec<Dataset>,
    pub test: Dataset,
    pub aux: Dataset,
}

pub fn prepare_data(data: &DataConfig, clients: usize, seed: u64) -> Result<ExperimentData> {
    data.validate()?;
    let make = |n, label| make_synthetic(data.classes, data.dim, n, data.spread, derive_seed(seed, label, 0));
    let train = make(data.train_per_class, "train-data")?;
    let test = make(data.test_per_class, "test-data")?;
    let aux = make(data.aux_per_class, "aux-data")?;
    let spec = PartitionSpec { clients, alpha: data.alpha, seed: derive_seed(seed, "partition", 0) };
    Ok(ExperimentData { shards: dirichlet_partition(&train, &spec)?, test, aux })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub data: DataConfig,
    pub federation: FederationConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<RoundMetrics>,
    pub ledger: CommLedger,
    pub trace: Vec<TraceEvent>,
}

impl SeedRun {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub final_accuracy: Vec<f64>,
    pub accuracy_mean: f64,
    /// Population standard deviation across seeds.
    pub accuracy_std: f64,
    pub bytes_down: u64,
    pub bytes_up: u64,
    /// Per-seed total traffic in GiB (identical across seeds).
    pub total_gib: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedRun> {
    let cfg = FederationConfig { seed, ..spec.federation.clone() };
    let data = prepare_data(&spec.data, cfg.clients, seed)?;
    let aux = cfg.method.needs_aux_data().then_some(data.aux);
    let mut sim = Simulation::new(cfg, data.shards, data.test, aux)?;
    let metrics = sim.run()?;
    let (ledger, trace) = sim.into_parts();
    Ok(SeedRun { seed, metrics, ledger, trace })
}

/// Run every seed and summarize final accuracies and traffic. When two
/// seeds' traffic differs, the reported byte totals are those of the first.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    if spec.seeds.is_empty() {
        return Err(Error::InvalidArgument("seeds: at least one seed is required".into()));
    }
    let runs = spec.seeds.iter().map(|&s| run_seed(spec, s)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { summary: summarize(&spec.federation.method.to_string(), &runs), runs })
}

pub fn summarize(method: &str, runs: &[SeedRun]) -> Summary {
    let final_accuracy: Vec<f64> = runs.iter().map(SeedRun::final_accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&final_accuracy);
    let (bytes_down, bytes_up) = runs.first().map_or((0, 0), |r| r.ledger.totals());
    Summary {
        method: method.to_string(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        final_accuracy,
        accuracy_mean,
        accuracy_std,
        bytes_down,
        bytes_up,
        total_gib: to_gib(bytes_down + bytes_up),
    }
}
