use serde::Serialize;

use super::linalg::weighted_ridge;
use super::overlay::top_k_segments;
use super::CoalitionModel;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LimeConfig {
    /// Perturbation samples, including the unperturbed one.
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self { samples: 1000, kernel_width: 0.25, ridge: 1.0, k: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimeExplanation {
    pub target: usize,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Segment ids by descending `|coefficient|`.
    pub top_k: Vec<usize>,
    /// Weighted R² of the surrogate on its own samples.
    pub fidelity_r2: f64,
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    pub k: usize,
    pub seed: u64,
}

/// The all-ones vector followed by `n − 1` fair-coin vectors.
pub fn lime_samples(m: usize, n: usize, seed: u64) -> Vec<Vec<bool>> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(n);
    if n > 0 {
        out.push(vec![true; m]);
    }
    for _ in 1..n {
        out.push((0..m).map(|_| rng.coin()).collect());
    }
    out
}

/// `exp(−D²/σ²)` with `D` the cosine distance between `z` and all-ones.
pub fn lime_kernel(z: &[bool], width: f64) -> f64 {
    let on = z.iter().filter(|&&b| b).count();
    let d = if on == 0 { 1.0 } else { 1.0 - (on as f64 / z.len() as f64).sqrt() };
    (-(d * d) / (width * width)).exp()
}

/// Fits a weighted ridge surrogate of the target-class output on segment
/// presence around the unperturbed input.
pub fn lime_explain(model: &dyn CoalitionModel, target: usize, cfg: &LimeConfig) -> Result<LimeExplanation> {
    let m = model.features();
    if target >= model.outputs() {
        return Err(Error::LabelOutOfRange { label: target, classes: model.outputs() });
    }
    if cfg.samples < 2 || m == 0 {
        return Err(Error::InvalidArgument("LIME needs at least two samples and one segment".into()));
    }
    if !(cfg.kernel_width > 0.0) || !(cfg.ridge >= 0.0) {
        return Err(Error::InvalidArgument("kernel width must be positive and ridge non-negative".into()));
    }
    let zs = lime_samples(m, cfg.samples, cfg.seed);
    let outputs = model.evaluate(&zs)?;
    let y: Vec<f64> = outputs.iter().map(|o| o[target]).collect();
    let w: Vec<f64> = zs.iter().map(|z| lime_kernel(z, cfg.kernel_width)).collect();
    let rows: Vec<Vec<f64>> = zs.iter().map(|z| z.iter().map(|&b| b as u8 as f64).collect()).collect();
    let (coefficients, intercept) = weighted_ridge(&rows, &y, &w, cfg.ridge)?;

    let wsum: f64 = w.iter().sum();
    let ybar = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((r, &yi), &wi) in rows.iter().zip(&y).zip(&w) {
        let fit = intercept + r.iter().zip(&coefficients).map(|(x, b)| x * b).sum::<f64>();
        ss_res += wi * (yi - fit).powi(2);
        ss_tot += wi * (yi - ybar).powi(2);
    }
    let fidelity_r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(LimeExplanation {
        target,
        top_k: top_k_segments(&coefficients, cfg.k),
        coefficients,
        intercept,
        fidelity_r2,
        samples: cfg.samples,
        kernel_width: cfg.kernel_width,
        ridge: cfg.ridge,
        k: cfg.k,
        seed: cfg.seed,
    })
}
