use grainxai::model::{build_model, ArchConfig, ForwardMode, ModelParams};
use grainxai::par::Execution;
use grainxai::rng::SplitMix64;
use grainxai::tensor::{softmax, Tensor};
use grainxai::training::{argmax, gradient_check, GradCheckConfig, OptimizerConfig, OptimizerKind, OptimizerState};
use proptest::prelude::*;

const SEQ: Execution = Execution::Sequential;

fn random_batch(b: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(&[b, 50, 50, 3], |_| rng.unit_f64() as f32)
}

fn onehot(labels: &[usize]) -> Tensor<f64> {
    let mut t = Tensor::zeros(&[labels.len(), 5]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * 5 + l] = 1.0;
    }
    t
}

fn canonical(seed: u64) -> ModelParams<f32> {
    build_model(&ArchConfig::default(), seed).unwrap()
}

#[test]
fn identical_images_give_identical_rows() {
    let m = canonical(2);
    let one = random_batch(1, 8);
    let many = Tensor::new(vec![4, 50, 50, 3], one.data().repeat(4)).unwrap();
    let probs = m.predict(&many, SEQ).unwrap();
    for i in 1..4 {
        assert_eq!(probs.row(i), probs.row(0));
    }
    assert_eq!(m.predict(&many, SEQ).unwrap(), probs);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let m = canonical(4).cast::<f64>();
    let batch = random_batch(2, 1).cast::<f64>();
    let out = m.forward(&batch, ForwardMode::Training { dropout_seed: 0 }, SEQ).unwrap();
    let g = m.backward(out.cache.as_ref().unwrap(), &Tensor::zeros(&[2, 5]), 0.0, SEQ).unwrap();
    assert!(g.tensors().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn duplicating_a_sample_leaves_the_mean_gradient_unchanged() {
    let m = canonical(5).cast::<f64>();
    let x = random_batch(1, 3).cast::<f64>();
    let xx = Tensor::new(vec![2, 50, 50, 3], x.data().repeat(2)).unwrap();
    let grads = |batch: &Tensor<f64>, labels: &[usize]| {
        let out = m.forward(batch, ForwardMode::Training { dropout_seed: 0 }, SEQ).unwrap();
        let (_, gl) = m.loss_and_logit_grads(&out, &onehot(labels), 1e-4).unwrap();
        m.backward(out.cache.as_ref().unwrap(), &gl, 1e-4, SEQ).unwrap()
    };
    let single = grads(&x, &[2]);
    let double = grads(&xx, &[2, 2]);
    for (a, b) in single.tensors().zip(double.tensors()) {
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0), "{p} vs {q}");
        }
    }
}

/// With a zero data gradient only the weight-decay term drives the step.
#[test]
fn weight_decay_alone_shrinks_weights_and_spares_biases() {
    for kind in [OptimizerKind::Adamax, OptimizerKind::Adam] {
        let mut m = canonical(6).cast::<f64>();
        let before = m.clone();
        let flags = m.weight_flags();
        let smallest = m
            .tensors()
            .zip(&flags)
            .filter(|(_, &w)| w)
            .flat_map(|(t, _)| t.data().iter().copied())
            .filter(|v| *v != 0.0)
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        // Keep the step below every weight so it cannot overshoot zero.
        let cfg = OptimizerConfig { kind, learning_rate: smallest / 4.0, ..Default::default() };
        let batch = random_batch(2, 2).cast::<f64>();
        let out = m.forward(&batch, ForwardMode::Training { dropout_seed: 0 }, SEQ).unwrap();
        let g = m.backward(out.cache.as_ref().unwrap(), &Tensor::zeros(&[2, 5]), 1e-2, SEQ).unwrap();
        let mut opt = OptimizerState::for_model(cfg, &m);
        opt.step_model(&mut m, &g).unwrap();
        for ((old, new), &is_weight) in before.tensors().zip(m.tensors()).zip(&flags) {
            for (&o, &n) in old.data().iter().zip(new.data()) {
                if is_weight && o != 0.0 {
                    assert!(n.abs() < o.abs(), "{kind}: {o} -> {n}");
                    assert_eq!(n.signum(), o.signum());
                } else {
                    assert_eq!(n.to_bits(), o.to_bits());
                }
            }
        }
    }
}

#[test]
fn canonical_gradients_match_finite_differences_with_l2() {
    let model = canonical(11).cast::<f64>();
    let batch = random_batch(2, 12).cast::<f64>();
    let targets = onehot(&[1, 4]);
    for l2 in [0.0, 1e-2] {
        let cfg = GradCheckConfig { samples_per_tensor: 30, l2, seed: 3, ..Default::default() };
        let report = gradient_check(&model, &batch, &targets, &cfg).unwrap();
        assert_eq!(report.tensors.len(), 8);
        assert!(report.max_rel_err <= 1e-3, "l2 {l2}: {report:#?}");
    }
}

#[test]
fn repeated_checks_cover_every_tensor() {
    let model = canonical(13).cast::<f64>();
    let batch = random_batch(2, 14).cast::<f64>();
    let targets = onehot(&[0, 3]);
    let mut covered = vec![0usize; 8];
    for seed in 0..3 {
        let cfg = GradCheckConfig { samples_per_tensor: 5, seed, l2: 1e-3, ..Default::default() };
        for (i, t) in gradient_check(&model, &batch, &targets, &cfg).unwrap().tensors.iter().enumerate() {
            covered[i] += t.checked;
        }
    }
    assert!(covered.iter().all(|&c| c > 0), "{covered:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rows_are_distributions(seed in any::<u64>(), init in 0u64..4, b in 1usize..4) {
        let probs = canonical(init).predict(&random_batch(b, seed), SEQ).unwrap();
        for i in 0..b {
            let row = probs.row(i);
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-5);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn argmax_ignores_a_logit_shift(seed in any::<u64>(), shift in -50.0f32..50.0) {
        let out = canonical(1).forward(&random_batch(1, seed), ForwardMode::Inference, SEQ).unwrap();
        let logits = out.logits.row(0);
        let shifted: Vec<f32> = logits.iter().map(|v| v + shift).collect();
        prop_assert_eq!(argmax(&softmax(&shifted)), argmax(out.probs.row(0)));
        prop_assert_eq!(argmax(&shifted), argmax(logits));
    }
}
