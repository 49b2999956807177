//! Batch experiment runner: config files, method dispatch, sweeps and the
//! CSV/JSON outputs.

pub mod config;

use anyhow::{bail, Context, Result};
use config::{parse_ablation_set, ExperimentConfig};
use fedzge_core::comms::{batch_sizes, formula_bytes, gib_2dp, simulate_ledger, CommLedger, CommMethod, MethodCommSpec, PayloadShape};
use fedzge_core::federation::{run_seed, summarize, ExperimentSpec, Method, SeedRun, Summary};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str = "seed,round,accuracy,loss_fid,loss_adv,loss_div,loss_info,loss_gd,bytes_down,bytes_up";

pub fn metrics_csv(runs: &[SeedRun]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in runs {
        for m in &r.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed, m.round, m.accuracy, m.loss_fid, m.loss_adv, m.loss_div, m.loss_info, m.loss_gd, m.bytes_down, m.bytes_up
            )
            .expect("writing to a String");
        }
    }
    out
}

/// Ledgers of all seeds, concatenated in seed-list order under one header.
pub fn ledger_csv(runs: &[SeedRun]) -> String {
    let mut all = CommLedger::new();
    for r in runs {
        all.extend(&r.ledger);
    }
    all.to_csv()
}

pub fn resolved_config_json(cfg: &ExperimentConfig) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    // the output location is not part of the experiment
    if let Some(map) = v.as_object_mut() {
        map.remove("out");
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

/// Run every seed of `cfg` and write metrics.csv, summary.json, ledger.csv
/// and resolved-config.json into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let spec = ExperimentSpec { data: cfg.data.clone(), federation: cfg.federation_config()?, seeds: cfg.seeds.clone() };
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        log::info!("{} seed {seed}: {} rounds", spec.federation.method, spec.federation.rounds);
        runs.push(run_seed(&spec, seed).with_context(|| format!("run with seed {seed} failed"))?);
    }
    let summary = summarize(spec.federation.method.as_str(), &runs);
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let write = |name: &str, body: String| fs::write(out.join(name), body).with_context(|| format!("cannot write {name}"));
    write("metrics.csv", metrics_csv(&runs))?;
    write("summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    write("ledger.csv", ledger_csv(&runs))?;
    write("resolved-config.json", resolved_config_json(cfg)?)?;
    Ok(RunOutcome { runs, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Q,
    Alpha,
    EpsilonSf,
    Method,
    Ablation,
}

impl std::str::FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "q" => Axis::Q,
            "alpha" => Axis::Alpha,
            "epsilon_sf" | "sample_fraction" => Axis::EpsilonSf,
            "method" => Axis::Method,
            "ablation" | "ablation-mask" | "ablation_mask" => Axis::Ablation,
            other => bail!("unknown sweep axis '{other}' (expected q, alpha, epsilon_sf, method or ablation)"),
        })
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Q => "q",
            Axis::Alpha => "alpha",
            Axis::EpsilonSf => "epsilon_sf",
            Axis::Method => "method",
            Axis::Ablation => "ablation",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        let v = value.trim();
        let ctx = || format!("{}: bad value '{v}'", self.name());
        match self {
            Axis::Q => c.zo.q = v.parse().with_context(ctx)?,
            Axis::Alpha => c.data.alpha = v.parse().with_context(ctx)?,
            Axis::EpsilonSf => c.federation.sample_fraction = v.parse().with_context(ctx)?,
            Axis::Method => c.federation.method = v.parse::<Method>().with_context(ctx)?,
            Axis::Ablation => c.loss.ablate = parse_ablation_set(v).with_context(ctx)?,
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: String,
    pub dir: PathBuf,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub total_gib: f64,
}

/// One full run per value under `base.out/<axis>=<value>`, plus an index file
/// `sweep-index.csv`. Points run concurrently on the current rayon pool when
/// `concurrent` is set.
pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[String], concurrent: bool) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let configs = values.iter().map(|v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    let one = |(value, cfg): (&String, &ExperimentConfig)| -> Result<SweepPoint> {
        let dir = base.out.join(format!("{}={}", axis.name(), value.trim()));
        let outcome = run(cfg, &dir).with_context(|| format!("sweep point {}={value}", axis.name()))?;
        Ok(SweepPoint {
            axis: axis.name().to_string(),
            value: value.trim().to_string(),
            dir,
            accuracy_mean: outcome.summary.accuracy_mean,
            accuracy_std: outcome.summary.accuracy_std,
            total_gib: outcome.summary.total_gib,
        })
    };
    let points: Vec<SweepPoint> = if concurrent {
        values.par_iter().zip(configs.par_iter()).map(one).collect::<Result<_>>()?
    } else {
        values.iter().zip(configs.iter()).map(one).collect::<Result<_>>()?
    };
    let mut index = String::from("axis,value,dir,accuracy_mean,accuracy_std,total_gib\n");
    for p in &points {
        let dir = p.dir.strip_prefix(&base.out).unwrap_or(&p.dir);
        writeln!(index, "{},{},{},{},{},{}", p.axis, p.value, dir.display(), p.accuracy_mean, p.accuracy_std, p.total_gib)?;
    }
    fs::create_dir_all(&base.out)?;
    fs::write(base.out.join("sweep-index.csv"), index)?;
    Ok(points)
}

/// Shapes for a closed-form traffic estimate without training.
#[derive(Debug, Clone, PartialEq)]
pub struct CommsQuery {
    pub method: CommMethod,
    pub rounds: u64,
    pub clients: u64,
    pub batch: u64,
    pub sample_elems: u64,
    pub classes: u64,
    pub params: Option<u64>,
    pub generator_params: Option<u64>,
}

impl CommsQuery {
    pub fn spec(&self, q: u64) -> MethodCommSpec {
        let mut sizes = batch_sizes(self.batch, self.sample_elems, self.classes);
        sizes.global_params = self.params.map(PayloadShape::f32s);
        sizes.local_params = self.params.map(PayloadShape::f32s);
        sizes.generator_params = self.generator_params.map(PayloadShape::f32s);
        MethodCommSpec { method: self.method, rounds: self.rounds, clients: self.clients, q, sizes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommsRow {
    pub q: u64,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub gib: String,
}

/// Closed-form totals per q. With `ledger_dir`, also replays each point into
/// a ledger and writes `ledger-q<q>.csv`; the replayed totals must agree.
pub fn comms_table(query: &CommsQuery, qs: &[u64], ledger_dir: Option<&Path>) -> Result<Vec<CommsRow>> {
    let mut rows = Vec::new();
    for &q in qs {
        let spec = query.spec(q);
        let (down, up) = formula_bytes(&spec)?;
        if let Some(dir) = ledger_dir {
            let ledger = simulate_ledger(&spec)?;
            if ledger.totals() != (down, up) {
                bail!("replayed ledger disagrees with the closed form at q={q}");
            }
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("ledger-q{q}.csv")), ledger.to_csv())?;
        }
        rows.push(CommsRow { q, bytes_down: down, bytes_up: up, gib: gib_2dp(down + up) });
    }
    Ok(rows)
}
