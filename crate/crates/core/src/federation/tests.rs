use super::*;
use crate::comms::{batch_sizes, formula_bytes, CommMethod, MethodCommSpec, PayloadKind, PayloadShape};
use crate::datasets::{make_synthetic, Dataset};
use crate::error::Error;
use crate::models::{build_classifier, build_generator, ClassifierSpec, GeneratorSpec};
use crate::nn::{Activation, Layer, Dense, Network};
use crate::objectives::{EnsembleWeights, LossMask};
use crate::rng;
use crate::tensor::Tensor;
use std::collections::HashSet;

fn small(method: Method) -> (FederationConfig, DataConfig) {
    let cfg = FederationConfig {
        method,
        clients: 3,
        rounds: 2,
        batch: 16,
        noise_dim: 4,
        generator_hidden: vec![12],
        client_hidden: vec![vec![8]],
        zo: crate::zo::ZoConfig { q: 3, ..Default::default() },
        global_distill_epochs: 2,
        local_batch: 8,
        ..FederationConfig::default()
    };
    let data = DataConfig { classes: 3, dim: 6, train_per_class: 20, test_per_class: 10, aux_per_class: 10, spread: 0.2, alpha: 1.0 };
    (cfg, data)
}

fn spec(method: Method) -> ExperimentSpec {
    let (federation, data) = small(method);
    ExperimentSpec { data, federation, seeds: vec![5] }
}

#[test]
fn sampling_sizes_and_coverage() {
    let mut r = rng::stream(1, "t", 0);
    assert_eq!(sample_clients(7, 1.0, &mut r), (0..7).collect::<Vec<_>>());
    let s = sample_clients(50, 0.1, &mut r);
    assert_eq!(s.len(), 5);
    assert_eq!(s.iter().collect::<HashSet<_>>().len(), 5);
    let mut seen = HashSet::new();
    for _ in 0..200 {
        seen.extend(sample_clients(20, 0.1, &mut r));
    }
    assert_eq!(seen.len(), 20);
    let mut a = rng::stream(2, "t", 0);
    let mut b = rng::stream(2, "t", 0);
    assert_eq!(sample_clients(30, 0.3, &mut a), sample_clients(30, 0.3, &mut b));
}

fn fixed_logits(rows: Vec<Vec<f64>>) -> (Network, Dataset) {
    // identity dense on C inputs: logits equal the inputs
    let c = rows[0].len();
    let mut d = Dense::zeros(c, c);
    (0..c).for_each(|i| d.weight[i * c + i] = 1.0);
    let net = Network::new(c, vec![Layer::Dense(d)]).unwrap();
    let n = rows.len();
    let x = Tensor::matrix(n, c, rows.concat()).unwrap();
    (net, Dataset::new(x, vec![0; n], c).unwrap())
}

#[test]
fn evaluate_fixtures() {
    let (net, mut ds) = fixed_logits(vec![vec![0.9, 0.1, 0.0], vec![0.0, 0.2, 0.8], vec![0.3, 0.6, 0.1]]);
    ds.labels = vec![0, 2, 1];
    assert_eq!(evaluate(&net, &ds).unwrap(), 1.0);
    ds.labels = vec![0, 2, 0];
    assert!((evaluate(&net, &ds).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    let (net, mut ds) = fixed_logits(vec![vec![0.0; 4]; 8]);
    ds.labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
    assert_eq!(evaluate(&net, &ds).unwrap(), 0.25);
}

#[test]
fn parameter_averaging() {
    let w = EnsembleWeights::from_counts(&[5, 5]).unwrap();
    assert_eq!(average_params(&[vec![0.0; 3], vec![2.0; 3]], &w).unwrap(), vec![1.0; 3]);
    let same = vec![0.5, -1.0];
    let w3 = EnsembleWeights::from_counts(&[1, 2, 3]).unwrap();
    let avg = average_params(&[same.clone(), same.clone(), same.clone()], &w3).unwrap();
    assert!(avg.iter().zip(&same).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn fedzge_round_ledger_matches_formula() {
    let s = spec(Method::FedZge);
    let run = run_seed(&s, 5).unwrap();
    let (cfg, data) = (&s.federation, &s.data);
    let mcs = MethodCommSpec {
        method: CommMethod::FedZge,
        rounds: 1,
        clients: cfg.participants() as u64,
        q: cfg.zo.q as u64,
        sizes: batch_sizes(cfg.batch as u64, data.dim as u64, data.classes as u64),
    };
    let (down, up) = formula_bytes(&mcs).unwrap();
    for m in &run.metrics {
        assert_eq!((m.bytes_down, m.bytes_up), (down, up));
        assert_eq!(run.ledger.round_total(m.round, crate::comms::Direction::Down), m.bytes_down);
    }
    let allowed = [PayloadKind::SyntheticBatch, PayloadKind::PerturbedBatch, PayloadKind::LocalLogits, PayloadKind::EnsembleLogits];
    let kinds = run.ledger.kinds();
    assert_eq!(kinds.len(), 4);
    assert!(kinds.iter().all(|k| allowed.contains(k)));
}

#[test]
fn fedzge_trace_follows_round_order() {
    for method in [Method::FedZge, Method::WhiteboxDatafree] {
        let run = run_seed(&spec(method), 5).unwrap();
        for round in 1..=2 {
            let phases: Vec<Phase> = run.trace.iter().filter(|e| e.round == round).map(|e| e.phase).collect();
            assert_eq!(phases, Phase::FEDZGE_ORDER.to_vec(), "{method}");
        }
    }
}

#[test]
fn runs_are_deterministic_and_parallel_invariant() {
    for method in Method::ALL {
        let mut s = spec(method);
        let a = run_seed(&s, 9).unwrap();
        let b = run_seed(&s, 9).unwrap();
        s.federation.parallel = false;
        let c = run_seed(&s, 9).unwrap();
        assert_eq!(a, b, "{method}");
        assert_eq!(a, c, "{method}");
    }
}

#[test]
fn whitebox_uploads_parameters() {
    let s = spec(Method::WhiteboxDatafree);
    let run = run_seed(&s, 5).unwrap();
    let params = ClassifierSpec { input_dim: 6, hidden: vec![8], classes: 3, activation: Activation::Relu }.param_count();
    let mut sizes = batch_sizes(16, 6, 3);
    sizes.local_params = Some(PayloadShape::f32s(params as u64));
    let mcs = MethodCommSpec { method: CommMethod::WhiteBoxDataFree, rounds: 2, clients: 3, q: 3, sizes };
    assert_eq!(run.ledger.totals(), formula_bytes(&mcs).unwrap());
    assert!(run.ledger.kinds().contains(&PayloadKind::ModelParameters));
}

#[test]
fn distillation_baselines_match_formulas() {
    for (method, comm) in [(Method::Mhat, CommMethod::Mhat), (Method::DsFl, CommMethod::DsFl)] {
        let run = run_seed(&spec(method), 5).unwrap();
        let mcs = MethodCommSpec { method: comm, rounds: 2, clients: 3, q: 0, sizes: batch_sizes(16, 6, 3) };
        assert_eq!(run.ledger.totals(), formula_bytes(&mcs).unwrap(), "{method}");
    }
}

#[test]
fn fedavg_ledger_is_parameters_only() {
    let run = run_seed(&spec(Method::FedAvg), 5).unwrap();
    assert!(run.ledger.kinds().iter().all(|k| k.is_parameters()));
    let n = (6 * 8 + 8 + 8 * 3 + 3) as u64 * 4;
    assert_eq!(run.ledger.totals(), (2 * 3 * n, 2 * 3 * n));
}

#[test]
fn fedavg_rejects_heterogeneous_clients() {
    let mut s = spec(Method::FedAvg);
    s.federation.client_hidden = vec![vec![8], vec![4, 4]];
    assert!(matches!(run_seed(&s, 1), Err(Error::Unsupported(_))));
}

#[test]
fn fedavg_learns_iid_separable_task() {
    let mut s = spec(Method::FedAvg);
    s.data = DataConfig { classes: 2, dim: 4, train_per_class: 60, test_per_class: 50, aux_per_class: 5, spread: 0.1, alpha: 1e9 };
    s.federation.rounds = 10;
    s.federation.local_epochs = 2;
    let run = run_seed(&s, 3).unwrap();
    assert!(run.final_accuracy() >= 0.95, "{}", run.final_accuracy());
}

#[test]
fn black_box_discipline_in_fedzge() {
    let (cfg, d) = small(Method::FedZge);
    let data = prepare_data(&d, cfg.clients, 1).unwrap();
    let sim = Simulation::new(cfg, data.shards, data.test, None).unwrap();
    for c in sim.clients() {
        assert_eq!(c.access(), Access::BlackBox);
        assert!(matches!(c.upload_model(), Err(Error::Capability(_))));
    }
}

#[test]
fn identical_client_and_global_start_at_zero_distill_loss() {
    let (mut cfg, _) = small(Method::FedZge);
    cfg.clients = 1;
    cfg.local_lr = 0.0;
    cfg.global_distill_epochs = 1;
    let shard = make_synthetic(3, 6, 10, 0.2, 1).unwrap();
    let test = make_synthetic(3, 6, 5, 0.2, 2).unwrap();
    let arch = ClassifierSpec { input_dim: 6, hidden: vec![8], classes: 3, activation: Activation::Relu };
    let global = build_classifier(&arch, 11).unwrap();
    let gen = build_generator(&GeneratorSpec { noise_dim: 4, classes: 3, hidden: vec![12], output_dim: 6 }, 3).unwrap();
    let client = ClientHandle::new(0, shard, global.clone(), rng::stream(0, "c", 0), Access::BlackBox).unwrap();
    let mut sim = Simulation::from_parts(cfg.clone(), ServerState::new(global, gen, 0), vec![client], test, None).unwrap();
    let m = sim.run_round().unwrap();
    assert!(m.loss_gd.abs() < 1e-12, "{}", m.loss_gd);
    assert!(m.loss_adv.abs() < 1e-12);
    assert_eq!(sim.server().round(), 1);
}

#[test]
fn masked_terms_stay_zero() {
    let mut s = spec(Method::FedZge);
    s.federation.mask = LossMask::FID_ONLY;
    let run = run_seed(&s, 2).unwrap();
    for m in &run.metrics {
        assert_eq!((m.loss_adv, m.loss_div, m.loss_info), (0.0, 0.0, 0.0));
        assert!(m.loss_fid > 0.0);
    }
}

#[test]
fn distillation_pulls_global_toward_single_client() {
    // one client, aux data equal to its shard: global distillation on the
    // aux batch moves global logits toward the client's
    let (mut cfg, _) = small(Method::DsFl);
    cfg.clients = 1;
    cfg.local_lr = 0.0;
    cfg.global_distill_epochs = 60;
    cfg.batch = 30;
    let shard = make_synthetic(3, 6, 10, 0.2, 1).unwrap();
    let test = make_synthetic(3, 6, 5, 0.2, 2).unwrap();
    let arch = ClassifierSpec { input_dim: 6, hidden: vec![8], classes: 3, activation: Activation::Relu };
    let local = build_classifier(&arch, 21).unwrap();
    let global = build_classifier(&arch, 22).unwrap();
    let gen = build_generator(&GeneratorSpec { noise_dim: 4, classes: 3, hidden: vec![12], output_dim: 6 }, 3).unwrap();
    let x = shard.samples.clone();
    let target = local.infer(&x).unwrap();
    let gap = |g: &Network| crate::objectives::distill_loss(&target, &g.infer(&x).unwrap(), 5.0).unwrap();
    let before = gap(&global);
    let client = ClientHandle::new(0, shard.clone(), local, rng::stream(0, "c", 0), Access::BlackBox).unwrap();
    let mut sim = Simulation::from_parts(cfg, ServerState::new(global, gen, 0), vec![client], test, Some(shard)).unwrap();
    sim.run_round().unwrap();
    let after = gap(&sim.server().global);
    assert!(after < 0.2 * before, "{before} -> {after}");
}

#[test]
fn summary_of_identical_seeds() {
    let mut s = spec(Method::FedZge);
    s.seeds = vec![4, 4, 4];
    let r = run_experiment(&s).unwrap();
    assert_eq!(r.summary.accuracy_std, 0.0);
    assert_eq!(r.runs[0], r.runs[2]);
    s.seeds = vec![4];
    assert_eq!(run_experiment(&s).unwrap().summary.accuracy_std, 0.0);
}

#[test]
fn local_distill_switch_and_balance_probe() {
    let mut s = spec(Method::FedZge);
    let on = run_seed(&s, 2).unwrap();
    assert!(on.metrics.iter().all(|m| m.loss_ld > 0.0));
    s.federation.local_distill = false;
    let off = run_seed(&s, 2).unwrap();
    assert!(off.metrics.iter().all(|m| m.loss_ld == 0.0));
    assert!(off.trace.iter().any(|e| e.phase == Phase::LocalDistill));

    let (cfg, d) = small(Method::FedZge);
    let data = prepare_data(&d, cfg.clients, 1).unwrap();
    let sim = Simulation::new(cfg, data.shards, data.test, None).unwrap();
    let h = sim.synthetic_class_entropy(200).unwrap();
    assert!(h > 0.0 && h <= 3f64.ln() + 1e-12);
    assert_eq!(h, sim.synthetic_class_entropy(200).unwrap());
    assert!(sim.ledger().entries().is_empty());
}
