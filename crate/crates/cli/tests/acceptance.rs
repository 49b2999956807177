//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
//! criterion fails.

use anyhow::Result;
use fedzge_cli::config::ExperimentConfig;
use fedzge_core::calibration::{linear_exactness, linear_expectation, quadratic_cosine};
use fedzge_core::comms::{batch_sizes, formula_bytes, gib_2dp, simulate_ledger, to_gib, CommMethod, MethodCommSpec, PayloadShape, PayloadSizes};
use fedzge_core::federation::{
    mean_std, prepare_data, run_seed, DataConfig, ExperimentSpec, FederationConfig, Method, Phase, SeedRun, Simulation,
};
use fedzge_core::gradcheck::{all_checks, chain_checks};
use fedzge_core::objectives::LossMask;
use fedzge_core::zo::{PerturbationMode, ZoConfig};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn cifar(method: CommMethod, classes: u64, q: u64) -> MethodCommSpec {
    MethodCommSpec { method, rounds: 100, clients: 10, q, sizes: batch_sizes(500, 3 * 32 * 32, classes) }
}

fn gib_of(spec: &MethodCommSpec) -> Result<String> {
    let (d, u) = formula_bytes(spec)?;
    if simulate_ledger(spec)?.totals() != (d, u) {
        anyhow::bail!("{:?}: ledger replay disagrees with formula", spec.method);
    }
    Ok(gib_2dp(d + u))
}

fn criterion_1() -> Result<(bool, String)> {
    let cases: [(&str, CommMethod, u64, u64, &str); 10] = [
        ("fedzge C=10", CommMethod::FedZge, 10, 10, "63.17"),
        ("fedzge C=100", CommMethod::FedZge, 100, 10, "65.18"),
        ("q=1 C=10", CommMethod::FedZge, 10, 1, "11.50"),
        ("q=5 C=10", CommMethod::FedZge, 10, 5, "34.46"),
        ("q=20 C=10", CommMethod::FedZge, 10, 20, "120.57"),
        ("q=1 C=100", CommMethod::FedZge, 100, 1, "12.00"),
        ("q=5 C=100", CommMethod::FedZge, 100, 5, "35.64"),
        ("q=20 C=100", CommMethod::FedZge, 100, 20, "124.26"),
        ("mhat C=10", CommMethod::Mhat, 10, 0, "5.76"),
        ("ds_fl C=10", CommMethod::DsFl, 10, 0, "5.76"),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, method, classes, q, want) in cases {
        let got = gib_of(&cifar(method, classes, q))?;
        let hit = (got.parse::<f64>()? - want.parse::<f64>()?).abs() <= 0.01 + 1e-9;
        ok &= hit;
        let miss = if hit { String::new() } else { format!("(want {want})") };
        detail.push(format!("{name}={got}{miss}"));
    }
    Ok((ok, detail.join(" ")))
}

fn criterion_2() -> Result<(bool, String)> {
    // ResNet-18 with a 10-way head
    let params = 11_173_962;
    let sizes = PayloadSizes {
        global_params: Some(PayloadShape::f32s(params)),
        local_params: Some(PayloadShape::f32s(params)),
        ..PayloadSizes::default()
    };
    let spec = MethodCommSpec { method: CommMethod::FedAvg, rounds: 100, clients: 10, q: 0, sizes };
    let (d, u) = formula_bytes(&spec)?;
    let gib = to_gib(d + u);
    Ok(((83.2..=83.4).contains(&gib), format!("|theta|={params} -> {gib:.4} GiB")))
}

fn criterion_3() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut count = 0;
    for seed in 1..=3 {
        for c in all_checks(seed)? {
            count += 1;
            if c.rel_err > worst {
                worst = c.rel_err;
                worst_name = c.name.clone();
            }
        }
    }
    let (chain, _) = chain_checks(7)?;
    let ok = worst <= 1e-5 && chain.rel_err <= 1e-10;
    Ok((ok, format!("{count} FD checks, worst {worst:.2e} ({worst_name}); chain vs backprop {:.2e}", chain.rel_err)))
}

fn criterion_4() -> Result<(bool, String)> {
    let exact = linear_exactness(11)?;
    let gauss = linear_expectation(PerturbationMode::Gaussian, 100_000, 12)?;
    let cos = quadratic_cosine(32, 10, 200, 13)?;
    let ok = exact <= 1e-9 && gauss <= 0.05 && cos.mean_estimate >= 0.5;
    Ok((
        ok,
        format!(
            "q=1 linear {exact:.1e}; gaussian expectation rel err {gauss:.4} (1e5 draws); quadratic cosine {:.3} (per-trial mean {:.3})",
            cos.mean_estimate, cos.per_trial
        ),
    ))
}

fn desk_data(alpha: f64) -> DataConfig {
    DataConfig { classes: 4, dim: 16, train_per_class: 500, test_per_class: 200, aux_per_class: 100, spread: 0.5, alpha }
}

fn desk_fed(method: Method) -> FederationConfig {
    FederationConfig {
        method,
        clients: 5,
        rounds: 30,
        batch: 128,
        zo: ZoConfig { q: 10, ..ZoConfig::default() },
        ..FederationConfig::default()
    }
}

fn desk_runs(method: Method, alpha: f64, mask: LossMask) -> Result<Vec<SeedRun>> {
    let spec = ExperimentSpec {
        data: desk_data(alpha),
        federation: FederationConfig { mask, ..desk_fed(method) },
        seeds: SEEDS.to_vec(),
    };
    SEEDS.iter().map(|&s| Ok(run_seed(&spec, s)?)).collect()
}

fn finals(runs: &[SeedRun]) -> Vec<f64> {
    runs.iter().map(SeedRun::final_accuracy).collect()
}

struct Trend {
    zge_low: Vec<f64>,
}

fn criterion_5() -> Result<(bool, String, Trend)> {
    let solo = finals(&desk_runs(Method::Standalone, 0.1, LossMask::ALL)?);
    let zge_low = finals(&desk_runs(Method::FedZge, 0.1, LossMask::ALL)?);
    let white = finals(&desk_runs(Method::WhiteboxDatafree, 0.1, LossMask::ALL)?);
    let zge_high = finals(&desk_runs(Method::FedZge, 1.0, LossMask::ALL)?);
    let (s, _) = mean_std(&solo);
    let (z, zs) = mean_std(&zge_low);
    let (w, _) = mean_std(&white);
    let (h, _) = mean_std(&zge_high);
    let wins = zge_low.iter().zip(&solo).filter(|(a, b)| a > b).count();
    let a = z > s;
    let b = z >= 0.9 * w;
    let c = h >= z;
    let detail = format!(
        "(a) alpha=0.1 fedzge {z:.4}±{zs:.4} vs best client {s:.4} [{wins}/5 seeds] {}; (b) whitebox {w:.4}, ratio {:.3} {}; (c) alpha=1 {h:.4} >= alpha=0.1 {z:.4} {}",
        flag(a),
        z / w,
        flag(b),
        flag(c)
    );
    Ok((a && b && c, detail, Trend { zge_low }))
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn small_spec(mask: LossMask, local_distill: bool) -> ExperimentSpec {
    let data = DataConfig { train_per_class: 60, test_per_class: 30, ..desk_data(0.1) };
    let federation = FederationConfig {
        rounds: 4,
        local_epochs: 2,
        local_distill_epochs: 2,
        global_distill_epochs: 2,
        mask,
        local_distill,
        ..desk_fed(Method::FedZge)
    };
    ExperimentSpec { data, federation, seeds: vec![0] }
}

fn criterion_6(trend: &Trend) -> Result<(bool, String)> {
    let cases = [
        ("fid", LossMask { fid: false, ..LossMask::ALL }, true),
        ("adv", LossMask { adv: false, ..LossMask::ALL }, true),
        ("div", LossMask { div: false, ..LossMask::ALL }, true),
        ("info", LossMask { info: false, ..LossMask::ALL }, true),
        ("localdistill", LossMask::ALL, false),
    ];
    // the other terms must be live when nothing is switched off
    let full = run_seed(&small_spec(LossMask::ALL, true), 3)?;
    let mut ok = full.metrics.iter().all(|m| m.loss_fid > 0.0 && m.loss_div != 0.0 && m.loss_ld > 0.0);
    let mut detail = Vec::new();
    for (name, mask, ld) in cases {
        let run = run_seed(&small_spec(mask, ld), 3)?;
        let zero = run.metrics.iter().all(|m| match name {
            "fid" => m.loss_fid == 0.0,
            "adv" => m.loss_adv == 0.0,
            "div" => m.loss_div == 0.0,
            "info" => m.loss_info == 0.0,
            _ => m.loss_ld == 0.0,
        });
        ok &= zero;
        detail.push(format!("{name}:{}", if zero { "zero" } else { "NONZERO" }));
    }
    let fid_only = finals(&desk_runs(Method::FedZge, 0.1, LossMask::FID_ONLY)?);
    let (full, _) = mean_std(&trend.zge_low);
    let (fo, _) = mean_std(&fid_only);
    detail.push(format!("smoke: full {full:.4} vs fid-only {fo:.4} ({})", if full >= fo { "full >= fid-only" } else { "fid-only ahead" }));
    Ok((ok, detail.join(" ")))
}

fn criterion_7() -> Result<(bool, String)> {
    let classes = 4;
    let bound = 0.9 * (classes as f64).ln();
    let mut worst = f64::INFINITY;
    let mut off = Vec::new();
    for seed in SEEDS {
        for info in [1.0, 0.0] {
            let mut cfg = FederationConfig { seed, ..desk_fed(Method::FedZge) };
            cfg.loss_weights.info = info;
            let data = prepare_data(&desk_data(0.1), cfg.clients, seed)?;
            let mut sim = Simulation::new(cfg, data.shards, data.test, None)?;
            sim.run()?;
            let h = sim.synthetic_class_entropy(2000)?;
            if info > 0.0 {
                worst = worst.min(h);
            } else {
                off.push(h);
            }
        }
    }
    let (m0, _) = mean_std(&off);
    Ok((
        worst >= bound,
        format!("beta3=1 min entropy {worst:.4} vs 0.9 ln C = {bound:.4}; beta3=0 mean {m0:.4} (informational)"),
    ))
}

fn tiny_toml(dir: &Path) -> Result<std::path::PathBuf> {
    let p = dir.join("tiny.toml");
    std::fs::write(
        &p,
        "seeds = [2, 9]\n[data]\nclasses = 3\ndim = 6\ntrain_per_class = 30\ntest_per_class = 10\naux_per_class = 10\nalpha = 0.3\n\
         [federation]\nclients = 4\nrounds = 3\nbatch = 32\nlocal_epochs = 2\nlocal_distill_epochs = 2\nglobal_distill_epochs = 2\n\
         generator_hidden = [16]\nclient_hidden = [[8], [12]]\n[zo]\nq = 4\n",
    )?;
    Ok(p)
}

fn read_outputs(dir: &Path) -> Result<Vec<Vec<u8>>> {
    ["metrics.csv", "summary.json", "ledger.csv", "resolved-config.json"]
        .iter()
        .map(|f| Ok(std::fs::read(dir.join(f))?))
        .collect()
}

fn criterion_8() -> Result<(bool, String)> {
    let tmp = tempfile::tempdir()?;
    let cfg_path = tiny_toml(tmp.path())?;
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let spec = ExperimentSpec { data: cfg.data.clone(), federation: cfg.federation_config()?, seeds: cfg.seeds.clone() };
    let run = run_seed(&spec, 2)?;
    let params = run.ledger.entries().iter().filter(|e| e.kind.is_parameters()).count();
    let rounds = spec.federation.rounds as u64;
    let order = (1..=rounds).all(|r| {
        let phases: Vec<Phase> = run.trace.iter().filter(|e| e.round == r).map(|e| e.phase).collect();
        phases == Phase::FEDZGE_ORDER
    });

    let bin = env!("CARGO_BIN_EXE_fedzge");
    let mut outs = Vec::new();
    for (i, threads) in ["1", "1", "4", "0"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .args(["--parallel", threads])
            .output()?;
        if !status.status.success() {
            anyhow::bail!("fedzge run failed: {}", String::from_utf8_lossy(&status.stderr));
        }
        outs.push(read_outputs(&out)?);
    }
    let identical = outs.windows(2).all(|w| w[0] == w[1]);
    Ok((
        params == 0 && order && identical,
        format!(
            "parameter payloads {params}; phase order {}; reruns at 1/1/4/all threads byte-identical {}",
            flag(order),
            flag(identical)
        ),
    ))
}

fn report(n: usize, res: Result<(bool, String)>, secs: f64) -> bool {
    match res {
        Ok((ok, detail)) => {
            println!("criterion {n}: {} [{secs:.1}s] {detail}", if ok { "PASS" } else { "FAIL" });
            ok
        }
        Err(e) => {
            println!("criterion {n}: FAIL [{secs:.1}s] error: {e:#}");
            false
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // `cargo test -- --list` and friends
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    let (r, s) = timed(criterion_1);
    all &= report(1, r, s);
    let (r, s) = timed(criterion_2);
    all &= report(2, r, s);
    let (r, s) = timed(criterion_3);
    all &= report(3, r, s);
    let (r, s) = timed(criterion_4);
    all &= report(4, r, s);
    let (r5, s) = timed(criterion_5);
    let trend = match r5 {
        Ok((ok, detail, trend)) => {
            all &= report(5, Ok((ok, detail)), s);
            Some(trend)
        }
        Err(e) => {
            all &= report(5, Err(e), s);
            None
        }
    };
    let (r, s) = timed(|| match &trend {
        Some(t) => criterion_6(t),
        None => Err(anyhow::anyhow!("needs the criterion 5 runs")),
    });
    all &= report(6, r, s);
    let (r, s) = timed(criterion_7);
    all &= report(7, r, s);
    let (r, s) = timed(criterion_8);
    all &= report(8, r, s);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
