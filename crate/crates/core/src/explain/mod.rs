//! Perturbation-based explanations over superpixels: LIME surrogates,
//! KernelSHAP attributions and overlay rendering.

mod lime;
mod linalg;
mod overlay;
mod shap;
mod superpixels;

use serde_json::{json, Value};

use crate::dataset::ClassLabel;
use crate::error::{shape_err, Result};
use crate::imaging::RasterImage;
use crate::model::ModelParams;
use crate::par::{self, Execution};
use crate::tensor::Tensor;
use crate::{IMAGE_CHANNELS, NUM_CLASSES};

pub use lime::{lime_explain, lime_kernel, lime_samples, LimeConfig, LimeExplanation};
pub use linalg::{solve, weighted_ridge};
pub use overlay::{lime_outline, render_overlay, shap_heat, top_k_segments, OverlayStyle, HIGHLIGHT};
pub use shap::{
    global_importance, shap_explain, shap_kernel_weight, ShapExplanation, ShapMode, EXACT_MAX_SEGMENTS,
    SAMPLED_COALITIONS,
};
pub use superpixels::{grid_superpixels, mask_aware_superpixels, SuperpixelMap, MIN_FRAGMENT};

/// A function of which features are present. Explainers only ever see a
/// model through this interface.
pub trait CoalitionModel: Sync {
    fn features(&self) -> usize;
    fn outputs(&self) -> usize;
    /// One output vector per coalition (`true` = feature kept).
    fn evaluate(&self, coalitions: &[Vec<bool>]) -> Result<Vec<Vec<f64>>>;
}

/// Wraps a plain function as a [`CoalitionModel`].
pub struct FnModel<F> {
    pub features: usize,
    pub outputs: usize,
    pub f: F,
    pub execution: Execution,
}

impl<F: Fn(&[bool]) -> Vec<f64> + Sync + Send> CoalitionModel for FnModel<F> {
    fn features(&self) -> usize {
        self.features
    }

    fn outputs(&self) -> usize {
        self.outputs
    }

    fn evaluate(&self, coalitions: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
        Ok(par::map_slice(self.execution, coalitions, |z| (self.f)(z)))
    }
}

/// Replaces every pixel whose segment is absent from `z` with `baseline`
/// (given in the image's own intensity scale).
pub fn perturb(image: &RasterImage, spmap: &SuperpixelMap, z: &[bool], baseline: [f32; 3]) -> Result<RasterImage> {
    if z.len() != spmap.count() {
        return Err(shape_err("perturb", format!("{} flags for {} segments", z.len(), spmap.count())));
    }
    if (image.width(), image.height()) != (spmap.width(), spmap.height()) || image.channels() != IMAGE_CHANNELS {
        return Err(shape_err("perturb", "image and superpixel map disagree".to_string()));
    }
    let mut out = image.clone();
    for (i, px) in out.pixels_mut().chunks_exact_mut(3).enumerate() {
        if !z[spmap.labels()[i] as usize] {
            px.copy_from_slice(&baseline);
        }
    }
    Ok(out)
}

/// The classifier seen as a function of superpixel presence, outputting
/// softmax probabilities.
pub struct ImageModel<'a> {
    pub model: &'a ModelParams<f32>,
    /// 8-bit scale, 50×50×3.
    pub image: &'a RasterImage,
    pub spmap: &'a SuperpixelMap,
    pub baseline: [f32; 3],
    pub batch_size: usize,
    pub execution: Execution,
}

impl<'a> ImageModel<'a> {
    /// Black baseline, batches of 64.
    pub fn new(model: &'a ModelParams<f32>, image: &'a RasterImage, spmap: &'a SuperpixelMap, execution: Execution) -> Self {
        Self { model, image, spmap, baseline: [0.0; 3], batch_size: 64, execution }
    }
}

impl CoalitionModel for ImageModel<'_> {
    fn features(&self) -> usize {
        self.spmap.count()
    }

    fn outputs(&self) -> usize {
        NUM_CLASSES
    }

    fn evaluate(&self, coalitions: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
        let shape = self.model.input_shape();
        let per: usize = shape.iter().product();
        let mut out = Vec::with_capacity(coalitions.len());
        for chunk in coalitions.chunks(self.batch_size.max(1)) {
            let mut data = Vec::with_capacity(chunk.len() * per);
            for z in chunk {
                let img = perturb(self.image, self.spmap, z, self.baseline)?;
                let scale = if img.is_normalized() { 1.0 } else { 255.0 };
                data.extend(img.pixels().iter().map(|v| v / scale));
            }
            let batch = Tensor::new(vec![chunk.len(), shape[0], shape[1], shape[2]], data)?;
            let probs = self.model.predict(&batch, self.execution)?;
            out.extend((0..chunk.len()).map(|i| probs.row(i).iter().map(|&p| p as f64).collect()));
        }
        Ok(out)
    }
}

/// The `explain_<method>.json` document.
pub fn lime_json(e: &LimeExplanation, run_config: &Value) -> Value {
    json!({
        "method": "lime",
        "class_names": ClassLabel::names(),
        "target_class": ClassLabel::from_index(e.target).map(|c| c.name()),
        "segments": e.coefficients.len(),
        "weights": e.coefficients,
        "intercept": e.intercept,
        "top_k": e.top_k,
        "fidelity_r2": e.fidelity_r2,
        "seed": e.seed,
        "params": {"samples": e.samples, "kernel_width": e.kernel_width, "ridge": e.ridge, "k": e.k},
        "run_config": run_config,
    })
}

pub fn shap_json(e: &ShapExplanation, run_config: &Value) -> Value {
    let phi: serde_json::Map<String, Value> = ClassLabel::ALL
        .iter()
        .zip(&e.phi)
        .map(|(c, p)| (c.name().to_string(), json!(p)))
        .collect();
    json!({
        "method": "shap",
        "mode": e.mode_tag(),
        "class_names": ClassLabel::names(),
        "segments": e.phi.first().map_or(0, Vec::len),
        "phi": phi,
        "base_values": e.base_values,
        "full_values": e.full_values,
        "efficiency_gap": e.efficiency_gap(),
        "seed": e.seed,
        "params": {"coalitions": e.coalitions},
        "run_config": run_config,
    })
}
