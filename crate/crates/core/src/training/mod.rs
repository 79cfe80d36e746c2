//! Optimizers, the epoch loop with early stopping, gradient checking and
//! hyperparameter sweeps.

mod gradcheck;
mod optim;
mod sweep;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{BatchIter, BatchOptions, LabeledImages, PreprocessMode};
use crate::error::{Error, Result};
use crate::model::{build_model, ArchConfig, ForwardMode, ModelParams};
use crate::par::Execution;
use crate::rng::derive_seed;
use crate::tensor::Tensor;
use crate::{IMAGE_CHANNELS, IMAGE_SIZE, NUM_CLASSES};

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport, TensorCheck};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use sweep::{run_sweep, write_sweep_csv, SweepGrid, SweepRow, SWEEP_CSV_HEADER};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub image_size: usize,
    pub channels: usize,
    pub arch: ArchConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Weight decay coefficient; the objective gains `λ/2·Σ‖w‖²`.
    pub l2: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub augment: bool,
    pub preprocess: PreprocessMode,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            image_size: IMAGE_SIZE,
            channels: IMAGE_CHANNELS,
            arch: ArchConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            l2: 1e-4,
            max_epochs: 15,
            patience: 3,
            seed: 42,
            augment: true,
            preprocess: PreprocessMode::Raw,
            execution: Execution::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.image_size != IMAGE_SIZE || self.channels != IMAGE_CHANNELS {
            return bad(format!("input must be {IMAGE_SIZE}×{IMAGE_SIZE}×{IMAGE_CHANNELS}"));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1".into());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", o.learning_rate));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return bad("betas must lie in [0,1) and epsilon must be positive".into());
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

pub fn write_epochs_csv(path: impl AsRef<Path>, history: &[EpochReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{EPOCH_CSV_HEADER}")?;
    for r in history {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Validation-loss patience tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    /// `None` when the validation loss, not a training batch, went non-finite.
    pub batch: Option<usize>,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Weights from the best validation epoch, or the initial weights if no
    /// epoch completed.
    pub model: ModelParams<f32>,
    pub history: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub divergence: Option<Divergence>,
}

/// Trains from a fresh seeded initialization.
pub fn fit(config: &TrainingConfig, train: &LabeledImages, val: &LabeledImages) -> Result<FitOutcome> {
    fit_observed(config, train, val, |_, _, _| {})
}

/// [`fit`] with a callback receiving `(epoch, batch, loss)` after every step.
pub fn fit_observed(
    config: &TrainingConfig,
    train: &LabeledImages,
    val: &LabeledImages,
    mut on_batch: impl FnMut(usize, usize, f64),
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let exec = config.execution;
    let l2 = config.l2 as f32;
    let mut model = build_model(&config.arch, derive_seed(config.seed, 0x1417))?;
    let mut opt = OptimizerState::for_model(config.optimizer, &model);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let opts = BatchOptions {
            batch_size: config.batch_size,
            shuffle_seed: Some(derive_seed(config.seed, epoch as u64)),
            augment: config.augment,
        };
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (bi, batch) in BatchIter::new(train, opts)?.enumerate() {
            let mode = ForwardMode::Training { dropout_seed: derive_seed(derive_seed(config.seed, 0xD20), (epoch << 32 | bi) as u64) };
            let out = model.forward(&batch.images, mode, exec)?;
            let (loss, grad_logits) = model.loss_and_logit_grads(&out, &batch.onehot, l2)?;
            let loss = loss as f64;
            let cache = out.cache.as_ref().expect("training pass keeps a cache");
            let grads = if loss.is_finite() { Some(model.backward(cache, &grad_logits, l2, exec)?) } else { None };
            match grads {
                Some(g) if g.all_finite() => opt.step_model(&mut model, &g)?,
                _ => {
                    let detail = format!("non-finite loss or gradient at epoch {epoch}, batch {bi} (loss {loss})");
                    log::error!("{detail}; keeping the last stable checkpoint");
                    return Ok(FitOutcome {
                        model: best,
                        best_epoch: stopper.best_epoch(),
                        best_val_loss: stopper.best_loss(),
                        history,
                        stopped_early: false,
                        divergence: Some(Divergence { epoch, batch: Some(bi), detail }),
                    });
                }
            }
            on_batch(epoch, bi, loss);
            let b = batch.labels.len();
            loss_sum += loss * b as f64;
            correct += count_correct(&out.probs, &batch.labels);
            seen += b;
        }
        let (val_loss, val_acc) = evaluate_loss(&model, val, l2, config.batch_size, exec)?;
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | val loss {:.4} acc {:.4} | {:.1}s",
            report.train_loss,
            report.train_acc,
            report.val_loss,
            report.val_acc,
            report.seconds
        );
        history.push(report);
        if !val_loss.is_finite() {
            let detail = format!("non-finite validation loss after epoch {epoch}");
            log::error!("{detail}; keeping the last stable checkpoint");
            return Ok(FitOutcome {
                model: best,
                best_epoch: stopper.best_epoch(),
                best_val_loss: stopper.best_loss(),
                history,
                stopped_early: false,
                divergence: Some(Divergence { epoch, batch: None, detail }),
            });
        }
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    Ok(FitOutcome {
        model: best,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
        history,
        stopped_early,
        divergence: None,
    })
}

fn count_correct(probs: &Tensor<f32>, labels: &[usize]) -> usize {
    labels.iter().enumerate().filter(|&(i, &l)| argmax(probs.row(i)) == l).count()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    xs.iter().enumerate().fold(0, |best, (i, &v)| if v > xs[best] { i } else { best })
}

/// Mean cross-entropy plus the L2 term, and accuracy, in inference mode.
pub fn evaluate_loss(
    model: &ModelParams<f32>,
    data: &LabeledImages,
    l2: f32,
    batch_size: usize,
    exec: Execution,
) -> Result<(f64, f64)> {
    let opts = BatchOptions { batch_size, shuffle_seed: None, augment: false };
    let (mut ce, mut correct) = (0.0f64, 0usize);
    for batch in BatchIter::new(data, opts)? {
        let out = model.forward(&batch.images, ForwardMode::Inference, exec)?;
        let (loss, _) = model.loss_and_logit_grads(&out, &batch.onehot, 0.0)?;
        ce += loss as f64 * batch.labels.len() as f64;
        correct += count_correct(&out.probs, &batch.labels);
    }
    let n = data.len().max(1) as f64;
    Ok((ce / n + model.l2_penalty(l2) as f64, correct as f64 / n))
}

/// Softmax probabilities for every image, in order.
pub fn predict_probs(
    model: &ModelParams<f32>,
    data: &LabeledImages,
    batch_size: usize,
    exec: Execution,
) -> Result<Vec<[f32; NUM_CLASSES]>> {
    let opts = BatchOptions { batch_size, shuffle_seed: None, augment: false };
    let mut out = Vec::with_capacity(data.len());
    for batch in BatchIter::new(data, opts)? {
        let probs = model.predict(&batch.images, exec)?;
        for i in 0..batch.labels.len() {
            out.push(probs.row(i).try_into().expect("five classes"));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_trace() {
        let mut s = EarlyStopping::new(3);
        let losses = [0.9, 0.5, 0.6, 0.7, 0.8];
        let decisions: Vec<_> = losses.iter().enumerate().map(|(i, &l)| s.observe(i + 1, l)).collect();
        assert_eq!(
            decisions,
            [StopDecision::Improved, StopDecision::Improved, StopDecision::Continue, StopDecision::Continue, StopDecision::Stop]
        );
        assert_eq!(s.best_epoch(), Some(2));
    }

    #[test]
    fn patience_beyond_budget_never_stops() {
        let mut s = EarlyStopping::new(20);
        let losses = [0.4, 0.5, 0.3, 0.35, 0.6, 0.7, 0.8, 0.9];
        for (i, &l) in losses.iter().enumerate() {
            assert_ne!(s.observe(i + 1, l), StopDecision::Stop);
        }
        assert_eq!(s.best_epoch(), Some(3));
        assert_eq!(s.best_loss(), 0.3);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4, 0.0, 0.0]), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let mut c = TrainingConfig { batch_size: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c.batch_size = 8;
        c.optimizer.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
