//! Finite-difference check of the fine-tuning objective on a 1x3x16x16
//! input in double precision: the analytic gradient of one entry of every
//! parameter tensor against a central difference. The guidance targets are
//! held fixed, as they are detached in training.
//!
//! cargo run --release --example gradient_check

use noisecodec::net::{ArchConfig, CodecModel, Metric, Quality};
use noisecodec::tensor::{Graph, Shape, Tensor};
use noisecodec::train::{guidance_targets, objective_with_targets, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Problem {
    noisy: Tensor<f64>,
    clean: Tensor<f64>,
    targets: (Tensor<f64>, Tensor<f64>),
}

fn loss(model: &CodecModel<f64>, p: &Problem, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let b = model.bind(&mut g, grads).unwrap();
    let x = g.constant(p.noisy.clone()).unwrap();
    let y = g.constant(p.clean.clone()).unwrap();
    let t0 = g.constant(p.targets.0.clone()).unwrap();
    let t1 = g.constant(p.targets.1.clone()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let obj = objective_with_targets(&mut g, &b, model, x, y, Stage::Finetune, Some((3.0, (t0, t1))), &mut rng).unwrap();
    let value = g.value(obj.total).item();
    if !grads {
        return (value, Vec::new());
    }
    g.backward(obj.total).unwrap();
    let gs = b
        .vars()
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.shape().numel()]))
        .collect();
    (value, gs)
}

fn main() {
    let arch = ArchConfig { n: 4, m: 4, hyper: 2, ..ArchConfig::desk() };
    let mut model = CodecModel::<f64>::new(arch, Quality::new(5).unwrap(), Metric::Mse, 1).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    // Give the zero-initialised denoiser outputs some weight so every path carries gradient.
    for id in model.denoiser_output_params() {
        for v in model.params.get_mut(id).data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let shape = Shape::new(1, 3, 16, 16);
    let clean = Tensor::from_fn(shape, |_| rng.random_range(0.2..0.8));
    let noisy = Tensor::from_fn(shape, |i| clean.data()[i] + rng.random_range(-0.05..0.05));
    let targets = guidance_targets(&model, &clean).unwrap();
    let problem = Problem { noisy, clean, targets };
    let (_, grads) = loss(&model, &problem, true);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let count = model.params.len();
    for p in 0..count {
        let n = model.params.tensors()[p].shape().numel();
        let j = rng.random_range(0..n);
        let orig = model.params.tensors()[p].data()[j];
        model.params.tensors_mut()[p].data_mut()[j] = orig + h;
        let (up, _) = loss(&model, &problem, false);
        model.params.tensors_mut()[p].data_mut()[j] = orig - h;
        let (down, _) = loss(&model, &problem, false);
        model.params.tensors_mut()[p].data_mut()[j] = orig;
        let (a, b) = (grads[p][j], (up - down) / (2.0 * h));
        worst = worst.max((a - b).abs() / 1f64.max(a.abs()).max(b.abs()));
    }
    println!("{count} parameter tensors checked, worst relative error {worst:.2e}");
}
