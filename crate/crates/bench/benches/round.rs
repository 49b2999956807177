use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fedzge_core::federation::{prepare_data, DataConfig, FederationConfig, Method, Simulation};
use fedzge_core::zo::ZoConfig;

fn simulation(method: Method) -> Simulation {
    let cfg = FederationConfig {
        method,
        clients: 5,
        rounds: 1,
        batch: 128,
        local_epochs: 1,
        local_distill_epochs: 1,
        global_distill_epochs: 1,
        zo: ZoConfig { q: 10, ..ZoConfig::default() },
        ..FederationConfig::default()
    };
    let data = DataConfig { alpha: 0.1, ..DataConfig::default() };
    let d = prepare_data(&data, cfg.clients, 0).unwrap();
    let aux = method.needs_aux_data().then_some(d.aux);
    Simulation::new(cfg, d.shards, d.test, aux).unwrap()
}

fn rounds(c: &mut Criterion) {
    let mut g = c.benchmark_group("round");
    g.sample_size(20);
    for method in [Method::FedZge, Method::WhiteboxDatafree, Method::FedAvg, Method::DsFl] {
        g.bench_function(method.as_str(), |b| {
            b.iter_batched(|| simulation(method), |mut sim| sim.run_round().unwrap(), BatchSize::LargeInput)
        });
    }
    g.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
