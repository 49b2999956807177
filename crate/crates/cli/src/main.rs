use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fedzge_cli::config::{parse_seed_list, Ablation, ExperimentConfig, Overrides};
use fedzge_cli::{comms_table, run, sweep, Axis, CommsQuery};
use fedzge_core::comms::CommMethod;
use fedzge_core::federation::Method;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fedzge", version, about = "Data-free black-box federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (all seeds) and write its outputs.
    Run(RunArgs),
    /// Run one experiment per value of a single axis.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// q, alpha, epsilon_sf, method or ablation
        #[arg(long)]
        axis: String,
        /// Comma-separated values; ablation values are sets like adv+div.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Closed-form traffic totals for a method, without training.
    Comms {
        #[arg(long, default_value = "fedzge")]
        method: String,
        #[arg(long, default_value_t = 100)]
        rounds: u64,
        #[arg(long, default_value_t = 10)]
        clients: u64,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
        q: Vec<u64>,
        #[arg(long, default_value_t = 500)]
        batch: u64,
        /// Elements per sample (3072 for 32x32 RGB).
        #[arg(long, default_value_t = 3072)]
        sample_elems: u64,
        #[arg(long, default_value_t = 10)]
        classes: u64,
        /// Model parameter count, for parameter-exchanging methods.
        #[arg(long)]
        params: Option<u64>,
        #[arg(long)]
        generator_params: Option<u64>,
        /// Also write a replayed ledger per q into this directory.
        #[arg(long)]
        ledger_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// S or S,S,...
    #[arg(long = "seed")]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fid, adv, div, info or localdistill; repeatable.
    #[arg(long)]
    ablate: Vec<Ablation>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let seeds = self.seed.as_deref().map(parse_seed_list).transpose()?;
        cfg.apply(&Overrides {
            method: self.method,
            alpha: self.alpha,
            clients: self.clients,
            rounds: self.rounds,
            q: self.q,
            seeds,
            out: self.out.clone(),
            ablate: self.ablate.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new().num_threads(self.parallel).build().context("cannot start worker threads")
    }
}

fn comm_method(s: &str) -> Result<CommMethod> {
    Ok(match s.parse::<Method>() {
        Ok(Method::FedZge) => CommMethod::FedZge,
        Ok(Method::FedAvg) => CommMethod::FedAvg,
        Ok(Method::Mhat) => CommMethod::Mhat,
        Ok(Method::DsFl) => CommMethod::DsFl,
        Ok(Method::WhiteboxDatafree) => CommMethod::WhiteBoxDataFree,
        _ => match s.to_ascii_lowercase().as_str() {
            "fedgen" => CommMethod::FedGen,
            "fedftg" => CommMethod::FedFtg,
            "dfrd" => CommMethod::Dfrd,
            "fedzkt" => CommMethod::FedZkt,
            _ => anyhow::bail!("method: no traffic model for '{s}'"),
        },
    })
}

fn main_inner() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let out = cfg.out.clone();
            let outcome = args.pool()?.install(|| run(&cfg, &out))?;
            let s = &outcome.summary;
            println!(
                "{} seeds={:?} accuracy={:.4}±{:.4} traffic={:.4} GiB -> {}",
                s.method,
                s.seeds,
                s.accuracy_mean,
                s.accuracy_std,
                s.total_gib,
                out.display()
            );
        }
        Command::Sweep { run: args, axis, values } => {
            let cfg = args.resolve()?;
            let axis: Axis = axis.parse()?;
            let concurrent = args.parallel != 1;
            let points = args.pool()?.install(|| sweep(&cfg, axis, &values, concurrent))?;
            for p in points {
                println!("{}={} accuracy={:.4}±{:.4} traffic={:.4} GiB", p.axis, p.value, p.accuracy_mean, p.accuracy_std, p.total_gib);
            }
        }
        Command::Comms { method, rounds, clients, q, batch, sample_elems, classes, params, generator_params, ledger_out } => {
            let query = CommsQuery {
                method: comm_method(&method)?,
                rounds,
                clients,
                batch,
                sample_elems,
                classes,
                params,
                generator_params,
            };
            println!("q,bytes_down,bytes_up,gib");
            for r in comms_table(&query, &q, ledger_out.as_deref())? {
                println!("{},{},{},{}", r.q, r.bytes_down, r.bytes_up, r.gib);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
