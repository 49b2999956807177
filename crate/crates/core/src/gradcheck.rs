//! Central finite-difference checks for every layer, every loss and the
//! generator gradient chain. Each check builds a small random instance and
//! reports the norm-wise relative error between analytic and numeric
//! gradients.

use crate::error::Result;
use crate::models::{build_classifier, build_generator, generator_input, ClassifierSpec, GeneratorSpec};
use crate::nn::{cross_entropy, loss::cross_entropy_grad, Activation, BatchNorm1d, Dense, LabelEmbedding, Layer, Network};
use crate::objectives::{
    aux_distill_loss, class_frequency, distill_grads, diversity_grad, diversity_loss, fidelity_grad, fidelity_loss,
    generator_loss, generator_loss_grads, generator_loss_parts, global_distill_loss, info_entropy_grad,
    info_entropy_loss, local_distill_loss, adversarial_loss, EnsembleWeights, LossMask, LossWeights,
};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::zo::{chain_to_generator, true_input_grad};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub rel_err: f64,
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x` for the coordinates in `coords`;
/// other coordinates are reported as 0.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut p = x.to_vec();
    for &i in coords {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

fn tensor_like(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.shape().to_vec(), data.to_vec()).expect("same shape")
}

/// Check parameter and input gradients of ⟨upstream, net(x)⟩ in the
/// network's current mode. `input_cols` restricts the input check to
/// differentiable columns.
pub fn check_network(name: &str, net: &Network, x: &Tensor, upstream: &Tensor, input_cols: &[usize]) -> Result<Vec<GradCheck>> {
    let mut work = net.clone();
    work.forward(x)?;
    let (pg, ig) = work.backward(upstream)?;
    let params = net.params();
    let objective = |n: &mut Network, input: &Tensor| n.forward(input).map(|y| y.dot(upstream).expect("same shape")).expect("finite");
    let all: Vec<usize> = (0..params.len()).collect();
    let fd_p = central_diff(
        |p| {
            let mut n = net.clone();
            n.set_params(p).expect("length");
            objective(&mut n, x)
        },
        &params,
        &all,
        FD_STEP,
    );
    let coords: Vec<usize> = (0..x.rows()).flat_map(|r| input_cols.iter().map(move |&c| r * x.cols() + c)).collect();
    let fd_x = central_diff(|d| objective(&mut net.clone(), &tensor_like(x, d)), x.data(), &coords, FD_STEP);
    let mut ig_masked = vec![0.0; x.len()];
    coords.iter().for_each(|&i| ig_masked[i] = ig.data()[i]);
    let mut out = vec![GradCheck { name: format!("{name} input"), rel_err: rel_err(&ig_masked, &fd_x) }];
    if !params.is_empty() {
        out.push(GradCheck { name: format!("{name} params"), rel_err: rel_err(&pg, &fd_p) });
    }
    Ok(out)
}

fn randn(shape: &[usize], r: &mut Rng) -> Tensor {
    Tensor::randn(shape, r)
}

/// Every layer type, singly and composed.
pub fn layer_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut r = rng::stream(seed, "gradcheck-layers", 0);
    let (b, d) = (5, 4);
    let mut out = Vec::new();
    let x = randn(&[b, d], &mut r);
    let dense = Network::new(d, vec![Layer::Dense(Dense::init(d, 3, &mut r))])?;
    out.extend(check_network("dense", &dense, &x, &randn(&[b, 3], &mut r), &(0..d).collect::<Vec<_>>())?);
    for (name, act) in [
        ("identity", Activation::Identity),
        ("tanh", Activation::Tanh),
        ("relu", Activation::Relu),
        ("leaky_relu", Activation::LeakyRelu(0.2)),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let net = Network::new(d, vec![Layer::Activation(act)])?;
        out.extend(check_network(name, &net, &x, &randn(&[b, d], &mut r), &(0..d).collect::<Vec<_>>())?);
    }
    let mut bn = BatchNorm1d::new(d);
    bn.gamma.iter_mut().for_each(|g| *g = 1.0 + 0.5 * r.random::<f64>());
    bn.beta.iter_mut().for_each(|v| *v = r.random::<f64>() - 0.5);
    let bn_net = Network::new(d, vec![Layer::BatchNorm(bn.clone())])?;
    out.extend(check_network("batch_norm train", &bn_net, &x, &randn(&[b, d], &mut r), &(0..d).collect::<Vec<_>>())?);
    let mut bn_eval = bn_net.clone();
    bn_eval.forward(&randn(&[8, d], &mut r))?;
    bn_eval.set_training(false);
    out.extend(check_network("batch_norm eval", &bn_eval, &x, &randn(&[b, d], &mut r), &(0..d).collect::<Vec<_>>())?);

    let (dz, classes) = (3, 4);
    let emb = Network::new(dz + 1, vec![Layer::LabelEmbedding(LabelEmbedding::init(dz, classes, dz, &mut r))])?;
    let labels: Vec<usize> = (0..b).map(|i| i % classes).collect();
    let zin = generator_input(&randn(&[b, dz], &mut r), &labels)?;
    out.extend(check_network("label_embedding", &emb, &zin, &randn(&[b, 2 * dz], &mut r), &(0..dz).collect::<Vec<_>>())?);

    let spec = ClassifierSpec { input_dim: d, hidden: vec![6], classes: 3, activation: Activation::Tanh };
    let mlp = build_classifier(&spec, seed)?;
    out.extend(check_network("two_layer_tanh", &mlp, &x, &randn(&[b, 3], &mut r), &(0..d).collect::<Vec<_>>())?);

    let gspec = GeneratorSpec { noise_dim: dz, classes, hidden: vec![7, 5], output_dim: d };
    let gen = build_generator(&gspec, seed)?;
    out.extend(check_network("generator", &gen, &zin, &randn(&[b, d], &mut r), &(0..dz).collect::<Vec<_>>())?);
    Ok(out)
}

fn scalar_check(name: &str, analytic: &Tensor, at: &Tensor, f: impl Fn(&Tensor) -> f64) -> GradCheck {
    let all: Vec<usize> = (0..at.len()).collect();
    let fd = central_diff(|d| f(&tensor_like(at, d)), at.data(), &all, FD_STEP);
    GradCheck { name: name.to_string(), rel_err: rel_err(analytic.data(), &fd) }
}

/// Every loss term and the combined generator objective.
pub fn loss_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut r = rng::stream(seed, "gradcheck-losses", 0);
    let (b, c, d, dz) = (6, 4, 5, 3);
    let tau = 5.0;
    let logits = randn(&[b, c], &mut r).scale(2.0);
    let other = randn(&[b, c], &mut r).scale(2.0);
    let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
    let x = randn(&[b, d], &mut r);
    let z = randn(&[b, dz], &mut r);
    let ev = |v: Result<f64>| v.expect("finite loss");
    let mut out = vec![
        scalar_check("cross_entropy", &cross_entropy_grad(&logits, &labels)?, &logits, |t| ev(cross_entropy(t, &labels))),
        scalar_check("fidelity", &fidelity_grad(&logits, &labels)?, &logits, |t| ev(fidelity_loss(t, &labels))),
    ];
    let (gt, gs) = distill_grads(&logits, &other, tau)?;
    out.push(scalar_check("global_distill teacher", &gt, &logits, |t| ev(global_distill_loss(t, &other, tau))));
    out.push(scalar_check("global_distill student", &gs, &other, |t| ev(global_distill_loss(&logits, t, tau))));
    out.push(scalar_check("adversarial student", &gs.scale(-1.0), &other, |t| ev(adversarial_loss(&logits, t, tau))));
    out.push(scalar_check("adversarial teacher", &gt.scale(-1.0), &logits, |t| ev(adversarial_loss(t, &other, tau))));
    out.push(scalar_check("local_distill student", &gs, &other, |t| ev(local_distill_loss(&logits, t, tau))));
    out.push(scalar_check("aux_distill student", &gs, &other, |t| ev(aux_distill_loss(&logits, t, tau))));
    out.push(scalar_check("diversity", &diversity_grad(&x, &z)?, &x, |t| ev(diversity_loss(t, &z))));
    out.push(scalar_check("info_entropy", &info_entropy_grad(&logits)?, &logits, |t| {
        info_entropy_loss(&class_frequency(t).expect("shape"))
    }));
    let w = LossWeights { adv: 0.7, div: 1.3, info: 0.9, ..LossWeights::default() };
    let mask = LossMask::ALL;
    let g = generator_loss_grads(&logits, &other, &x, &z, &labels, &w, &mask)?;
    let total = |e: &Tensor, gl: &Tensor, xs: &Tensor| {
        generator_loss(&generator_loss_parts(e, gl, xs, &z, &labels, w.tau, &mask).expect("parts"), &w, &mask)
    };
    out.push(scalar_check("generator_loss ens", &g.ens, &logits, |t| total(t, &other, &x)));
    out.push(scalar_check("generator_loss global", &g.global, &other, |t| total(&logits, t, &x)));
    out.push(scalar_check("generator_loss x", &g.x, &x, |t| total(&logits, &other, t)));
    Ok(out)
}

/// A tiny white-box system: generator, two local classifiers and a global
/// classifier.
pub struct TinySystem {
    pub generator: Network,
    pub locals: Vec<Network>,
    pub global: Network,
    pub weights: EnsembleWeights,
    pub z: Tensor,
    pub labels: Vec<usize>,
    pub gen_input: Tensor,
}

impl TinySystem {
    pub fn new(seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "tiny-system", 0);
        let (b, c, d, dz) = (6, 3, 5, 3);
        let spec = |h: usize| ClassifierSpec { input_dim: d, hidden: vec![h], classes: c, activation: Activation::Tanh };
        let locals = vec![build_classifier(&spec(6), seed)?, build_classifier(&spec(4), seed + 1)?];
        let global = build_classifier(&spec(7), seed + 2)?;
        let generator = build_generator(&GeneratorSpec { noise_dim: dz, classes: c, hidden: vec![8], output_dim: d }, seed)?;
        let z = randn(&[b, dz], &mut r);
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
        let gen_input = generator_input(&z, &labels)?;
        Ok(Self { generator, locals, global, weights: EnsembleWeights::new(vec![0.4, 0.6])?, z, labels, gen_input })
    }

    /// The full generator loss as a function of the synthetic batch.
    pub fn loss_at(&self, x: &Tensor, w: &LossWeights, mask: &LossMask) -> Result<f64> {
        let logits = self.locals.iter().map(|m| m.infer(x)).collect::<Result<Vec<_>>>()?;
        let ens = crate::objectives::ensemble(&logits, &self.weights)?;
        let glob = self.global.infer(x)?;
        Ok(generator_loss(&generator_loss_parts(&ens, &glob, x, &self.z, &self.labels, w.tau, mask)?, w, mask))
    }
}

/// The exact input gradient against finite differences of the full loss.
pub fn true_input_grad_check(seed: u64) -> Result<GradCheck> {
    let mut sys = TinySystem::new(seed)?;
    let w = LossWeights { tau: 2.0, ..LossWeights::default() };
    let mask = LossMask::ALL;
    let x = sys.generator.forward(&sys.gen_input)?;
    let mut locals = sys.locals.clone();
    let analytic = true_input_grad(&mut locals, &sys.weights, &mut sys.global, &x, &sys.z, &sys.labels, &w, &mask)?;
    Ok(scalar_check("true_input_grad", &analytic, &x, |t| sys.loss_at(t, &w, &mask).expect("finite")))
}

/// chain_to_generator fed the exact input gradient, against backprop through
/// generator and classifier stacked into one network, and against finite
/// differences on the generator parameters.
pub fn chain_checks(seed: u64) -> Result<(GradCheck, GradCheck)> {
    let mut sys = TinySystem::new(seed)?;
    let mut local = sys.locals[0].clone();
    let w = LossWeights::default();
    let mask = LossMask { fid: true, adv: false, div: false, info: true };
    let single = EnsembleWeights::new(vec![1.0])?;

    let x = sys.generator.forward(&sys.gen_input)?;
    let gx = true_input_grad(&mut vec![local.clone()], &single, &mut sys.global, &x, &sys.z, &sys.labels, &w, &mask)?;
    let chained = chain_to_generator(&sys.generator, &gx)?;

    let mut layers = sys.generator.layers().to_vec();
    layers.extend(local.layers().iter().cloned());
    let mut stacked = Network::new(sys.generator.input_width(), layers)?;
    let ens = stacked.forward(&sys.gen_input)?;
    let g = generator_loss_grads(&ens, &ens, &x, &sys.z, &sys.labels, &w, &mask)?;
    let (all, _) = stacked.backward(&g.ens)?;
    let end_to_end = &all[..sys.generator.param_count()];
    let backprop = GradCheck { name: "chain vs end-to-end backprop".into(), rel_err: rel_err(&chained, end_to_end) };

    let theta = sys.generator.params();
    let coords: Vec<usize> = (0..theta.len()).collect();
    let fd = central_diff(
        |p| {
            let mut gen = sys.generator.clone();
            gen.set_params(p).expect("length");
            let xs = gen.forward(&sys.gen_input).expect("finite");
            let e = local.forward(&xs).expect("finite");
            generator_loss(&generator_loss_parts(&e, &e, &xs, &sys.z, &sys.labels, w.tau, &mask).expect("parts"), &w, &mask)
        },
        &theta,
        &coords,
        FD_STEP,
    );
    let finite = GradCheck { name: "chain vs finite differences".into(), rel_err: rel_err(&chained, &fd) };
    Ok((backprop, finite))
}

/// All checks at once, in a fixed order.
pub fn all_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut out = layer_checks(seed)?;
    out.extend(loss_checks(seed)?);
    out.push(true_input_grad_check(seed)?);
    let (a, b) = chain_checks(seed)?;
    out.push(a);
    out.push(b);
    Ok(out)
}
