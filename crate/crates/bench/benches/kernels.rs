use criterion::{criterion_group, criterion_main, Criterion};
use fedzge_core::models::{build_classifier, build_generator, generator_input, ClassifierSpec, GeneratorSpec};
use fedzge_core::nn::Activation;
use fedzge_core::rng;
use fedzge_core::zo::{sample_perturbations, zo_input_grad, ZoConfig};
use fedzge_core::Tensor;
use std::hint::black_box;

fn forward_backward(c: &mut Criterion) {
    let spec = ClassifierSpec { input_dim: 16, hidden: vec![64, 64], classes: 4, activation: Activation::Relu };
    let mut net = build_classifier(&spec, 1).unwrap();
    let mut r = rng::stream(0, "bench", 0);
    let x = Tensor::randn(&[128, 16], &mut r);
    let up = Tensor::randn(&[128, 4], &mut r);
    c.bench_function("classifier_forward_b128", |b| b.iter(|| black_box(net.infer(&x).unwrap())));
    c.bench_function("classifier_forward_backward_b128", |b| {
        b.iter(|| {
            net.forward(&x).unwrap();
            black_box(net.backward(&up).unwrap())
        })
    });

    let gspec = GeneratorSpec { noise_dim: 16, classes: 4, hidden: vec![64, 64], output_dim: 16 };
    let mut gen = build_generator(&gspec, 2).unwrap();
    let z = Tensor::randn(&[128, 16], &mut r);
    let labels: Vec<usize> = (0..128).map(|i| i % 4).collect();
    let input = generator_input(&z, &labels).unwrap();
    let gup = Tensor::randn(&[128, 16], &mut r);
    c.bench_function("generator_forward_backward_b128", |b| {
        b.iter(|| {
            gen.forward(&input).unwrap();
            black_box(gen.backward(&gup).unwrap())
        })
    });
}

fn zo_estimate(c: &mut Criterion) {
    let cfg = ZoConfig { q: 10, ..ZoConfig::default() };
    let mut r = rng::stream(0, "bench-zo", 0);
    let dirs = sample_perturbations(128, 16, &cfg, &mut r).unwrap();
    let losses: Vec<f64> = (0..cfg.q).map(|i| 1.0 + i as f64 * 1e-4).collect();
    c.bench_function("sample_perturbations_q10_b128", |b| b.iter(|| black_box(sample_perturbations(128, 16, &cfg, &mut r).unwrap())));
    c.bench_function("zo_input_grad_q10_b128", |b| b.iter(|| black_box(zo_input_grad(1.0, &losses, &dirs, &cfg).unwrap())));
}

criterion_group!(benches, forward_backward, zo_estimate);
criterion_main!(benches);
