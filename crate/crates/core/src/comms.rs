//! Byte-exact communication accounting: closed-form per-method totals and an
//! append-only ledger fed by the protocol engine.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Byte size of one payload: element count times element width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadShape {
    pub elements: u64,
    pub bytes_per_element: u64,
}

impl PayloadShape {
    /// 32-bit elements.
    pub const fn f32s(elements: u64) -> Self {
        Self { elements, bytes_per_element: 4 }
    }

    pub const fn bytes(&self) -> u64 {
        self.elements * self.bytes_per_element
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Down => "down",
            Direction::Up => "up",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    SyntheticBatch,
    PerturbedBatch,
    LocalLogits,
    EnsembleLogits,
    GlobalLogits,
    AuxData,
    AuxLabels,
    ModelParameters,
    GeneratorParameters,
    LabelStatistics,
}

impl PayloadKind {
    /// Whether the payload carries model weights.
    pub fn is_parameters(self) -> bool {
        matches!(self, PayloadKind::ModelParameters | PayloadKind::GeneratorParameters)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::SyntheticBatch => "synthetic_batch",
            PayloadKind::PerturbedBatch => "perturbed_batch",
            PayloadKind::LocalLogits => "local_logits",
            PayloadKind::EnsembleLogits => "ensemble_logits",
            PayloadKind::GlobalLogits => "global_logits",
            PayloadKind::AuxData => "aux_data",
            PayloadKind::AuxLabels => "aux_labels",
            PayloadKind::ModelParameters => "model_parameters",
            PayloadKind::GeneratorParameters => "generator_parameters",
            PayloadKind::LabelStatistics => "label_statistics",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u64,
    pub client: usize,
    pub direction: Direction,
    pub kind: PayloadKind,
    pub bytes: u64,
}

/// Append-only record of every transferred payload.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: u64, client: usize, direction: Direction, kind: PayloadKind, shape: PayloadShape) {
        self.entries.push(LedgerEntry { round, client, direction, kind, bytes: shape.bytes() });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total(&self, direction: Direction) -> u64 {
        self.entries.iter().filter(|e| e.direction == direction).map(|e| e.bytes).sum()
    }

    pub fn round_total(&self, round: u64, direction: Direction) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.round == round && e.direction == direction)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn totals(&self) -> (u64, u64) {
        (self.total(Direction::Down), self.total(Direction::Up))
    }

    pub fn kinds(&self) -> Vec<PayloadKind> {
        let mut kinds: Vec<PayloadKind> = Vec::new();
        for e in &self.entries {
            if !kinds.contains(&e.kind) {
                kinds.push(e.kind);
            }
        }
        kinds
    }

    /// Merge another ledger's entries after this one's.
    pub fn extend(&mut self, other: &CommLedger) {
        self.entries.extend_from_slice(&other.entries);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,client,direction,kind,bytes\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{},{}\n", e.round, e.client, e.direction, e.kind.as_str(), e.bytes));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMethod {
    FedAvg,
    Mhat,
    DsFl,
    FedGen,
    FedFtg,
    Dfrd,
    FedZkt,
    FedZge,
    /// FedZGE with local models uploaded for exact generator gradients.
    WhiteBoxDataFree,
}

/// Per-payload sizes; only those the method's formula uses need be set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PayloadSizes {
    pub synthetic: Option<PayloadShape>,
    pub ensemble_output: Option<PayloadShape>,
    pub local_output: Option<PayloadShape>,
    pub global_output: Option<PayloadShape>,
    pub aux_data: Option<PayloadShape>,
    pub aux_labels: Option<PayloadShape>,
    pub global_params: Option<PayloadShape>,
    pub local_params: Option<PayloadShape>,
    pub generator_params: Option<PayloadShape>,
    pub label_stats: Option<PayloadShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodCommSpec {
    pub method: CommMethod,
    pub rounds: u64,
    /// Clients participating per round.
    pub clients: u64,
    pub q: u64,
    pub sizes: PayloadSizes,
}

fn need(shape: Option<PayloadShape>, name: &'static str) -> Result<u64> {
    shape.map(|s| s.bytes()).ok_or(Error::MissingShape(name))
}

/// Closed-form (down, up) totals per method over a whole run.
pub fn formula_bytes(spec: &MethodCommSpec) -> Result<(u64, u64)> {
    let s = &spec.sizes;
    let per_client = match spec.method {
        CommMethod::FedAvg => (need(s.global_params, "global_params")?, need(s.local_params, "local_params")?),
        CommMethod::Mhat => (
            need(s.aux_data, "aux_data")? + need(s.aux_labels, "aux_labels")? + need(s.global_output, "global_output")?,
            need(s.local_output, "local_output")?,
        ),
        CommMethod::DsFl => (
            need(s.aux_data, "aux_data")? + need(s.ensemble_output, "ensemble_output")?,
            need(s.local_output, "local_output")?,
        ),
        CommMethod::FedGen => (
            need(s.global_params, "global_params")? + need(s.generator_params, "generator_params")?,
            need(s.local_params, "local_params")? + need(s.label_stats, "label_stats")?,
        ),
        CommMethod::FedFtg | CommMethod::Dfrd => (
            need(s.global_params, "global_params")?,
            need(s.local_params, "local_params")? + need(s.label_stats, "label_stats")?,
        ),
        CommMethod::FedZkt => (need(s.local_params, "local_params")?, need(s.local_params, "local_params")?),
        CommMethod::FedZge => {
            let x = need(s.synthetic, "synthetic")?;
            (
                x + need(s.ensemble_output, "ensemble_output")? + x * spec.q,
                need(s.local_output, "local_output")? * (1 + spec.q),
            )
        }
        CommMethod::WhiteBoxDataFree => (
            need(s.synthetic, "synthetic")? + need(s.ensemble_output, "ensemble_output")?,
            need(s.local_params, "local_params")?,
        ),
    };
    let runs = spec.rounds * spec.clients;
    Ok((runs * per_client.0, runs * per_client.1))
}

/// Replay a method's per-round payload pattern into a fresh ledger through
/// [`CommLedger::record`], without running any training.
pub fn simulate_ledger(spec: &MethodCommSpec) -> Result<CommLedger> {
    use Direction::{Down, Up};
    use PayloadKind as K;
    let s = &spec.sizes;
    let get = |shape: Option<PayloadShape>, name| shape.ok_or(Error::MissingShape(name));
    let mut plan: Vec<(Direction, PayloadKind, PayloadShape)> = Vec::new();
    match spec.method {
        CommMethod::FedZge => {
            plan.push((Down, K::SyntheticBatch, get(s.synthetic, "synthetic")?));
            for _ in 0..spec.q {
                plan.push((Down, K::PerturbedBatch, get(s.synthetic, "synthetic")?));
            }
            for _ in 0..=spec.q {
                plan.push((Up, K::LocalLogits, get(s.local_output, "local_output")?));
            }
            plan.push((Down, K::EnsembleLogits, get(s.ensemble_output, "ensemble_output")?));
        }
        CommMethod::WhiteBoxDataFree => {
            plan.push((Down, K::SyntheticBatch, get(s.synthetic, "synthetic")?));
            plan.push((Up, K::ModelParameters, get(s.local_params, "local_params")?));
            plan.push((Down, K::EnsembleLogits, get(s.ensemble_output, "ensemble_output")?));
        }
        CommMethod::FedAvg => {
            plan.push((Down, K::ModelParameters, get(s.global_params, "global_params")?));
            plan.push((Up, K::ModelParameters, get(s.local_params, "local_params")?));
        }
        CommMethod::Mhat => {
            plan.push((Down, K::AuxData, get(s.aux_data, "aux_data")?));
            plan.push((Down, K::AuxLabels, get(s.aux_labels, "aux_labels")?));
            plan.push((Down, K::GlobalLogits, get(s.global_output, "global_output")?));
            plan.push((Up, K::LocalLogits, get(s.local_output, "local_output")?));
        }
        CommMethod::DsFl => {
            plan.push((Down, K::AuxData, get(s.aux_data, "aux_data")?));
            plan.push((Up, K::LocalLogits, get(s.local_output, "local_output")?));
            plan.push((Down, K::EnsembleLogits, get(s.ensemble_output, "ensemble_output")?));
        }
        CommMethod::FedGen => {
            plan.push((Down, K::ModelParameters, get(s.global_params, "global_params")?));
            plan.push((Down, K::GeneratorParameters, get(s.generator_params, "generator_params")?));
            plan.push((Up, K::ModelParameters, get(s.local_params, "local_params")?));
            plan.push((Up, K::LabelStatistics, get(s.label_stats, "label_stats")?));
        }
        CommMethod::FedFtg | CommMethod::Dfrd => {
            plan.push((Down, K::ModelParameters, get(s.global_params, "global_params")?));
            plan.push((Up, K::ModelParameters, get(s.local_params, "local_params")?));
            plan.push((Up, K::LabelStatistics, get(s.label_stats, "label_stats")?));
        }
        CommMethod::FedZkt => {
            plan.push((Down, K::ModelParameters, get(s.local_params, "local_params")?));
            plan.push((Up, K::ModelParameters, get(s.local_params, "local_params")?));
        }
    }
    let mut ledger = CommLedger::new();
    for round in 1..=spec.rounds {
        for client in 0..spec.clients as usize {
            for &(dir, kind, shape) in &plan {
                ledger.record(round, client, dir, kind, shape);
            }
        }
    }
    Ok(ledger)
}

const GIB: f64 = (1u64 << 30) as f64;

/// Bytes to base-2 gibibytes.
pub fn to_gib(bytes: u64) -> f64 {
    bytes as f64 / GIB
}

/// GiB rounded to two decimals, as reported in result tables.
pub fn gib_2dp(bytes: u64) -> String {
    format!("{:.2}", to_gib(bytes))
}

/// Payload sizes for a data-free or distillation run with `batch` samples of
/// `sample_elems` values each and `classes` logits per sample.
pub fn batch_sizes(batch: u64, sample_elems: u64, classes: u64) -> PayloadSizes {
    let logits = PayloadShape::f32s(batch * classes);
    PayloadSizes {
        synthetic: Some(PayloadShape::f32s(batch * sample_elems)),
        ensemble_output: Some(logits),
        local_output: Some(logits),
        global_output: Some(logits),
        aux_data: Some(PayloadShape::f32s(batch * sample_elems)),
        aux_labels: Some(PayloadShape::f32s(batch)),
        label_stats: Some(PayloadShape::f32s(classes)),
        ..PayloadSizes::default()
    }
}
