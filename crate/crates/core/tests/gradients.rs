//! Finite-difference checks of every differentiable op and of the full
//! fine-tuning objective.

mod common;

use common::{ObjectiveCase, OpCase, KINDS};
use noisecodec::net::Metric;
use noisecodec::tensor::{Graph, Tensor};
use noisecodec::train::{objective, objective_with_targets, Stage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const TOL_F64: f64 = 1e-5;
const TOL_F32: f64 = 1e-3;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn op_gradients_f64(kind in 0..KINDS, seed in any::<u64>()) {
        let case = OpCase::random(kind, seed);
        let err = case.check::<f64>(24).unwrap();
        prop_assert!(err <= TOL_F64, "{:?}: relative error {err:.3e}", case.op);
    }

    #[test]
    fn op_gradients_f32(kind in 0..KINDS, seed in any::<u64>()) {
        let case = OpCase::random(kind, seed);
        let err = case.check::<f32>(24).unwrap();
        prop_assert!(err <= TOL_F32, "{:?}: relative error {err:.3e}", case.op);
    }
}

#[test]
fn every_kind_is_exercised() {
    for kind in 0..KINDS {
        for seed in 0..3 {
            let case = OpCase::random(kind, seed);
            assert!(case.check::<f64>(8).unwrap() <= TOL_F64, "{:?}", case.op);
        }
    }
}

#[test]
fn full_objective_mse() {
    let case = ObjectiveCase::random(1, Metric::Mse);
    let (err, n) = case.check::<f64>(2, 3).unwrap();
    assert!(n > 100, "{n} coordinates");
    assert!(err <= TOL_F64, "f64 relative error {err:.3e}");
    let (err, _) = case.check::<f32>(2, 4).unwrap();
    assert!(err <= TOL_F32, "f32 relative error {err:.3e}");
}

#[test]
fn full_objective_ms_ssim() {
    let case = ObjectiveCase::random(2, Metric::MsSsim);
    let (err, _) = case.check::<f64>(1, 5).unwrap();
    assert!(err <= TOL_F64, "f64 relative error {err:.3e}");
}

/// The detached-target objective and the explicit-target form agree in
/// value and in every parameter gradient.
#[test]
fn detached_targets_match_explicit_targets() {
    let case = ObjectiveCase::random(3, Metric::Mse);
    let model = &case.model;
    let run = |explicit: bool| {
        let mut g = Graph::<f64>::new();
        let b = model.bind(&mut g, true).unwrap();
        let x = g.constant(case.noisy.clone()).unwrap();
        let y = g.constant(case.clean.clone()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let obj = if explicit {
            let t0 = g.constant(case.targets.0.clone()).unwrap();
            let t1 = g.constant(case.targets.1.clone()).unwrap();
            objective_with_targets(&mut g, &b, model, x, y, Stage::Finetune, Some((3.0, (t0, t1))), &mut rng).unwrap()
        } else {
            objective(&mut g, &b, model, x, y, Stage::Finetune, Some(3.0), &mut rng).unwrap()
        };
        g.backward(obj.total).unwrap();
        let grads: Vec<Option<Vec<f64>>> = b.vars().iter().map(|&v| g.grad(v).map(<[f64]>::to_vec)).collect();
        (g.value(obj.total).item(), grads)
    };
    let (va, ga) = run(false);
    let (vb, gb) = run(true);
    assert_eq!(va, vb);
    for (a, b) in ga.iter().zip(&gb) {
        let a = a.clone().unwrap_or_default();
        let b = b.clone().unwrap_or_default();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
    let _ = Tensor::<f64>::scalar(0.0);
}
