use grainxai::dataset::{ClassLabel, LabeledImages};
use grainxai::model::ModelParams;
use grainxai::par::Execution;
use grainxai::synth::synthetic_images;
use grainxai::training::{evaluate_loss, fit, fit_observed, OptimizerConfig, OptimizerKind, TrainingConfig};

/// Arborio and Basmati grains only: round versus long, trivially separable.
fn two_class(per_class: usize, seed: u64) -> LabeledImages {
    let all = synthetic_images(per_class, seed, Execution::Parallel);
    let mut out = LabeledImages::default();
    for i in 0..all.len() {
        if matches!(all.labels[i], ClassLabel::Arborio | ClassLabel::Basmati) {
            out.push(&all.raster(i), all.labels[i], all.paths[i].clone());
        }
    }
    out
}

fn bits(m: &ModelParams<f32>) -> Vec<u32> {
    m.tensors().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
}

fn first_epoch_losses(seed: u64, train: &LabeledImages, val: &LabeledImages) -> Vec<f64> {
    let cfg = TrainingConfig { max_epochs: 1, batch_size: 16, augment: false, seed, ..Default::default() };
    let mut losses = Vec::new();
    fit_observed(&cfg, train, val, |_, _, l| losses.push(l)).unwrap();
    losses
}

#[test]
fn separable_set_is_fit_perfectly() {
    let train = two_class(40, 1);
    let val = two_class(10, 2);
    let cfg = TrainingConfig { max_epochs: 20, patience: 20, batch_size: 16, augment: false, seed: 3, ..Default::default() };
    let out = fit(&cfg, &train, &val).unwrap();
    let (_, acc) = evaluate_loss(&out.model, &train, cfg.l2 as f32, 64, Execution::Parallel).unwrap();
    assert_eq!(acc, 1.0, "{:#?}", out.history);
    assert!(out.divergence.is_none());
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let train = two_class(12, 4);
    let val = two_class(4, 5);
    for kind in [OptimizerKind::Adamax, OptimizerKind::Adam] {
        let cfg = TrainingConfig {
            max_epochs: 3,
            patience: 3,
            batch_size: 8,
            optimizer: OptimizerConfig { kind, ..Default::default() },
            ..Default::default()
        };
        let a = fit(&cfg, &train, &val).unwrap();
        let b = fit(&cfg, &train, &val).unwrap();
        assert_eq!(bits(&a.model), bits(&b.model));
        let strip = |h: &[grainxai::training::EpochReport]| -> Vec<[u64; 4]> {
            h.iter().map(|r| [r.train_loss, r.train_acc, r.val_loss, r.val_acc].map(f64::to_bits)).collect()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
    }
}

#[test]
fn early_stopping_returns_the_best_epoch_weights() {
    let train = two_class(16, 6);
    let val = two_class(6, 7);
    // A large step makes validation loss wander, so the best epoch is rarely the last.
    let cfg = TrainingConfig {
        max_epochs: 8,
        patience: 2,
        batch_size: 8,
        optimizer: OptimizerConfig { learning_rate: 0.02, ..Default::default() },
        ..Default::default()
    };
    let out = fit(&cfg, &train, &val).unwrap();
    let min = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    let best = out.best_epoch.unwrap();
    assert_eq!(out.history[best - 1].val_loss, min);
    let (recomputed, _) = evaluate_loss(&out.model, &val, cfg.l2 as f32, cfg.batch_size, cfg.execution).unwrap();
    assert_eq!(recomputed, min);
    if out.stopped_early {
        assert_eq!(out.history.len(), best + cfg.patience);
    }
}

#[test]
fn reported_loss_includes_the_weight_penalty() {
    let train = two_class(8, 8);
    let val = two_class(4, 9);
    let cfg = TrainingConfig { max_epochs: 1, batch_size: 8, l2: 0.05, ..Default::default() };
    let out = fit(&cfg, &train, &val).unwrap();
    let (with, _) = evaluate_loss(&out.model, &val, 0.05, 8, Execution::Sequential).unwrap();
    let (without, _) = evaluate_loss(&out.model, &val, 0.0, 8, Execution::Sequential).unwrap();
    let penalty = out.model.l2_penalty(0.05) as f64;
    assert!(penalty > 0.0);
    assert!((with - without - penalty).abs() < 1e-9);
    assert_eq!(out.history[0].val_loss, with);
}

/// Over the first epoch the loss falls from the first batch to the last in
/// nearly every seed.
#[test]
fn first_epoch_loss_falls() {
    let train = two_class(40, 1);
    let val = two_class(10, 2);
    let seeds = 20;
    let falling = (0..seeds)
        .filter(|&s| {
            let l = first_epoch_losses(s, &train, &val);
            l.last() < l.first()
        })
        .count();
    println!("last batch below first in {falling}/{seeds} seeds");
    assert!(falling * 10 >= seeds as usize * 9, "{falling}/{seeds}");
}

/// Strict batch-to-batch decrease is too strong under mini-batch noise: it
/// holds for roughly a third to a half of seeds on this set.
#[test]
#[ignore = "does not hold; run with --ignored to measure"]
fn first_epoch_loss_decreases_every_batch() {
    let train = two_class(40, 1);
    let val = two_class(10, 2);
    let seeds = 20;
    let monotone = (0..seeds)
        .filter(|&s| first_epoch_losses(s, &train, &val).windows(2).all(|w| w[1] < w[0]))
        .count();
    println!("strictly decreasing in {monotone}/{seeds} seeds");
    assert!(monotone * 10 >= seeds as usize * 9, "{monotone}/{seeds}");
}
