use super::SuperpixelMap;
use crate::error::{shape_err, Result};
use crate::imaging::RasterImage;

/// Outline colour for LIME overlays.
pub const HIGHLIGHT: [f32; 3] = [255.0, 255.0, 0.0];
const POSITIVE: [f32; 3] = [255.0, 0.0, 0.0];
const NEGATIVE: [f32; 3] = [0.0, 0.0, 255.0];
/// Opacity of the strongest SHAP tint.
const MAX_ALPHA: f32 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlayStyle {
    LimeOutline { k: usize },
    ShapHeat,
}

/// Indices of the `k` largest `|w|`, ties broken by lower index.
pub fn top_k_segments(weights: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    idx.truncate(k.min(weights.len()));
    idx
}

fn prepare(img: &RasterImage, spmap: &SuperpixelMap, weights: &[f64]) -> Result<RasterImage> {
    if weights.len() != spmap.count() {
        return Err(shape_err("overlay", format!("{} weights for {} segments", weights.len(), spmap.count())));
    }
    if (img.width(), img.height(), img.channels()) != (spmap.width(), spmap.height(), 3) {
        return Err(shape_err("overlay", "image and superpixel map disagree".to_string()));
    }
    let scale = if img.is_normalized() { 255.0 } else { 1.0 };
    RasterImage::new(img.width(), img.height(), 3, img.pixels().iter().map(|v| v * scale).collect(), false)
}

/// Traces the boundary pixels of the top-`k` segments in [`HIGHLIGHT`].
pub fn lime_outline(img: &RasterImage, spmap: &SuperpixelMap, weights: &[f64], k: usize) -> Result<RasterImage> {
    let mut out = prepare(img, spmap, weights)?;
    let mut chosen = vec![false; spmap.count()];
    for s in top_k_segments(weights, k) {
        chosen[s] = true;
    }
    for y in 0..spmap.height() {
        for x in 0..spmap.width() {
            if chosen[spmap.label(x, y)] && spmap.is_boundary(x, y) {
                for (c, &v) in HIGHLIGHT.iter().enumerate() {
                    out.set(x, y, c, v);
                }
            }
        }
    }
    Ok(out)
}

/// Blends each segment toward red (positive) or blue (negative) with
/// opacity `0.6·|φ|/max|φ|`.
pub fn shap_heat(img: &RasterImage, spmap: &SuperpixelMap, phi: &[f64]) -> Result<RasterImage> {
    let mut out = prepare(img, spmap, phi)?;
    let max = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Ok(out);
    }
    for (i, px) in out.pixels_mut().chunks_exact_mut(3).enumerate() {
        let p = phi[spmap.labels()[i] as usize];
        if p == 0.0 {
            continue;
        }
        let alpha = MAX_ALPHA * (p.abs() / max) as f32;
        let tint = if p > 0.0 { POSITIVE } else { NEGATIVE };
        for (v, t) in px.iter_mut().zip(tint) {
            *v = (1.0 - alpha) * *v + alpha * t;
        }
    }
    Ok(out)
}

pub fn render_overlay(img: &RasterImage, spmap: &SuperpixelMap, weights: &[f64], style: OverlayStyle) -> Result<RasterImage> {
    match style {
        OverlayStyle::LimeOutline { k } => lime_outline(img, spmap, weights, k),
        OverlayStyle::ShapHeat => shap_heat(img, spmap, weights),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::grid_superpixels;

    fn gray_img() -> RasterImage {
        RasterImage::filled(20, 20, 3, 100.0)
    }

    #[test]
    fn zero_weights_leave_image_untouched() {
        let sp = grid_superpixels(20, 20, 4).unwrap();
        let img = gray_img();
        assert_eq!(shap_heat(&img, &sp, &[0.0; 16]).unwrap(), img);
    }

    #[test]
    fn single_positive_segment_tinted_red() {
        let sp = grid_superpixels(20, 20, 4).unwrap();
        let mut phi = [0.0; 16];
        phi[5] = 0.3;
        let out = shap_heat(&gray_img(), &sp, &phi).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let px = [out.get(x, y, 0), out.get(x, y, 1), out.get(x, y, 2)];
                let expect = if sp.label(x, y) == 5 { [193.0, 40.0, 40.0] } else { [100.0; 3] };
                for (a, b) in px.iter().zip(expect) {
                    assert!((a - b).abs() < 1e-3, "({x},{y}): {px:?}");
                }
            }
        }
    }

    #[test]
    fn outline_traces_top_two() {
        let sp = grid_superpixels(20, 20, 4).unwrap();
        let mut w = [0.01; 16];
        w[2] = -0.9;
        w[9] = 0.5;
        w[4] = 0.2;
        assert_eq!(top_k_segments(&w, 2), vec![2, 9]);
        let out = lime_outline(&gray_img(), &sp, &w, 2).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let s = sp.label(x, y);
                let expect = (s == 2 || s == 9) && sp.is_boundary(x, y);
                let is_hl = [out.get(x, y, 0), out.get(x, y, 1), out.get(x, y, 2)] == HIGHLIGHT;
                assert_eq!(is_hl, expect, "({x},{y})");
            }
        }
    }
}
