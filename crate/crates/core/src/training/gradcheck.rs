use serde::Serialize;

use crate::error::{shape_err, Result};
use crate::model::{ForwardMode, ModelParams};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub samples_per_tensor: usize,
    /// Central-difference step.
    pub epsilon: f64,
    pub l2: f64,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so that coordinates
    /// whose true gradient is zero are judged by absolute error.
    pub denominator_floor: f64,
    pub execution: Execution,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples_per_tensor: 30,
            epsilon: 1e-4,
            l2: 0.0,
            seed: 0,
            denominator_floor: 1e-8,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub layer: usize,
    pub layer_kind: &'static str,
    /// `weights` or `bias`.
    pub role: &'static str,
    pub checked: usize,
    /// Draws rejected because the difference stencil crossed a kink.
    pub kinks_skipped: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backpropagated gradients of the training objective (mean
/// cross-entropy plus `λ/2·Σ‖w‖²`) with central differences on randomly
/// chosen coordinates of every trainable tensor. Dropout masks are held
/// fixed between the analytic and numeric passes.
pub fn gradient_check(
    model: &ModelParams<f64>,
    batch: &Tensor<f64>,
    onehot: &Tensor<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let b = batch.shape().first().copied().unwrap_or(0);
    if onehot.shape() != [b, crate::NUM_CLASSES] {
        return Err(shape_err("gradient_check", format!("targets {:?} for batch of {b}", onehot.shape())));
    }
    let dropout_seed = derive_seed(cfg.seed, 0xD20);
    let out = model.forward(batch, ForwardMode::Training { dropout_seed }, Execution::Sequential)?;
    let (_, grad_logits) = model.loss_and_logit_grads(&out, onehot, cfg.l2)?;
    let grads = model.backward(out.cache.as_ref().expect("training cache"), &grad_logits, cfg.l2, Execution::Sequential)?;

    let sample_seeds: Vec<u64> = (0..b).map(|i| derive_seed(dropout_seed, i as u64)).collect();
    let acts: Vec<Vec<Tensor<f64>>> = (0..b)
        .map(|i| model.layer_inputs(Tensor::new(model.input_shape().to_vec(), batch.row(i).to_vec())?, Some(sample_seeds[i])))
        .collect::<Result<_>>()?;
    let targets: Vec<Tensor<f64>> =
        (0..b).map(|i| Tensor::new(vec![crate::NUM_CLASSES], onehot.row(i).to_vec())).collect::<Result<_>>()?;

    // Objective recomputed from layer `start` onward; earlier activations
    // are reused. Also returns the per-sample piecewise-linear regimes.
    let objective = |m: &ModelParams<f64>, start: usize| -> Result<(f64, Vec<Vec<u64>>)> {
        let mut total = 0.0;
        let mut traces = Vec::with_capacity(b);
        for i in 0..b {
            let (logits, trace) = m.forward_from_traced(start, acts[i][start].clone(), Some(sample_seeds[i]))?;
            let logits = Tensor::new(vec![logits.len()], logits)?;
            total += tensor::softmax_cross_entropy(&logits, &targets[i])?.loss;
            traces.push(trace);
        }
        Ok((total / b as f64 + m.l2_penalty(cfg.l2), traces))
    };

    let mut rng = SplitMix64::new(derive_seed(cfg.seed, 0x6C));
    let mut tensors = Vec::new();
    let mut flat = 0usize;
    for (l, layer) in model.layers().iter().enumerate() {
        if layer.params.is_empty() {
            continue;
        }
        let base_traces = objective(model, l)?.1;
        for (j, t) in layer.params.iter().enumerate() {
            let mut order: Vec<usize> = (0..t.len()).collect();
            crate::rng::shuffle(&mut order, &mut rng);
            let want = cfg.samples_per_tensor.min(t.len());
            let mut check = TensorCheck {
                layer: l,
                layer_kind: layer.spec.kind(),
                role: role(j),
                checked: 0,
                kinks_skipped: 0,
                max_rel_err: 0.0,
                max_abs_err: 0.0,
            };
            let mut pos = 0;
            // Coordinates whose stencil crosses a ReLU or max-pool switch are
            // not differentiable there; they are replaced by fresh draws.
            while check.checked < want && pos < order.len() {
                let take = (want - check.checked).min(order.len() - pos);
                let batch = &order[pos..pos + take];
                pos += take;
                let results = par::map_slice(cfg.execution, batch, |&c| -> Result<Option<(f64, f64)>> {
                    let mut work = model.clone();
                    let mut eval = |delta: f64| -> Result<(f64, Vec<Vec<u64>>)> {
                        let t = work.tensors_mut().nth(flat).expect("tensor index");
                        let orig = t.data()[c];
                        t.data_mut()[c] = orig + delta;
                        let v = objective(&work, l);
                        work.tensors_mut().nth(flat).expect("tensor index").data_mut()[c] = orig;
                        v
                    };
                    let (plus, tp) = eval(cfg.epsilon)?;
                    let (minus, tm) = eval(-cfg.epsilon)?;
                    if tp != base_traces || tm != base_traces {
                        return Ok(None);
                    }
                    let numeric = (plus - minus) / (2.0 * cfg.epsilon);
                    let analytic = grads.layers[l][j].data()[c];
                    Ok(Some((relative_error(analytic, numeric, cfg.denominator_floor), (analytic - numeric).abs())))
                });
                for r in results {
                    match r? {
                        Some((rel, abs)) => {
                            check.checked += 1;
                            check.max_rel_err = check.max_rel_err.max(rel);
                            check.max_abs_err = check.max_abs_err.max(abs);
                        }
                        None => check.kinks_skipped += 1,
                    }
                }
            }
            tensors.push(check);
            flat += 1;
        }
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { tensors, max_rel_err })
}

fn role(j: usize) -> &'static str {
    if j == 0 {
        "weights"
    } else {
        "bias"
    }
}
