//! Protocol engine: FedZGE rounds, baselines, and the client capability
//! surface they run against.

mod client;
mod config;
mod engine;
mod experiment;

pub use client::{Access, ClientHandle};
pub use config::{sampled_count, FederationConfig, Method};
pub use engine::{
    accuracy, average_params, evaluate, sample_clients, Phase, RoundMetrics, ServerState, Simulation, TraceEvent,
};
pub use experiment::{
    mean_std, prepare_data, run_experiment, run_seed, summarize, DataConfig, ExperimentData, ExperimentResult,
    ExperimentSpec, SeedRun, Summary,
};

#[cfg(test)]
mod tests;
