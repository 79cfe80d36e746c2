//! Image decoding and the per-image preprocessing stage.

mod canny;
mod segment;

use std::path::Path;

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use canny::{canny_edges, detect_edges, gaussian_blur, gaussian_kernel, CannyConfig, EdgeMap};
pub use segment::{connected_components, otsu_threshold, segment_grain, GrainMask};

/// A decoded raster with interleaved channels, either in the raw 8-bit range
/// `[0,255]` or normalized to `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
    normalized: bool,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>, normalized: bool) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!("unsupported channel count {channels}")));
        }
        if width * height * channels != pixels.len() || width == 0 || height == 0 {
            return Err(shape_err(
                "RasterImage::new",
                format!("{width}×{height}×{channels} needs {} values, got {}", width * height * channels, pixels.len()),
            ));
        }
        if normalized && pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("normalized image has values outside [0,1]".into()));
        }
        Ok(Self { width, height, channels, pixels, normalized })
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, channels, bytes.iter().map(|&b| b as f32).collect(), false)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self { width, height, channels, pixels: vec![value; width * height * channels], normalized: false }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    /// Rounds to 8-bit, rescaling normalized images back to `[0,255]`.
    pub fn to_u8(&self) -> Vec<u8> {
        let scale = if self.normalized { 255.0 } else { 1.0 };
        self.pixels.iter().map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_u8();
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 3 {
            image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path.as_ref()))
        } else {
            image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path.as_ref()))
        };
        match res {
            Some(Ok(())) => Ok(()),
            Some(Err(e)) => Err(Error::Image { path: path.as_ref().to_path_buf(), reason: e.to_string() }),
            None => unreachable!("buffer length validated at construction"),
        }
    }
}

/// Decodes a JPEG/PNG file to RGB and resamples it to `target×target` with a
/// bilinear (triangle) filter. Sources already at the target size are passed
/// through untouched.
pub fn decode_and_resize(path: impl AsRef<Path>, target: usize) -> Result<RasterImage> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })?;
    let rgb = decoded.to_rgb8();
    let rgb = if rgb.width() as usize == target && rgb.height() as usize == target {
        rgb
    } else {
        image::imageops::resize(&rgb, target as u32, target as u32, FilterType::Triangle)
    };
    RasterImage::from_u8(target, target, 3, rgb.as_raw())
}

/// ITU-R BT.601 luma.
pub fn to_grayscale(img: &RasterImage) -> Result<RasterImage> {
    if img.channels == 1 {
        return Ok(img.clone());
    }
    let pixels = img.pixels.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
    Ok(RasterImage { width: img.width, height: img.height, channels: 1, pixels, normalized: img.normalized })
}

/// Scales raw 8-bit values into `[0,1]`.
pub fn normalize(img: &RasterImage) -> Result<RasterImage> {
    if img.normalized {
        return Err(Error::AlreadyNormalized);
    }
    let pixels = img.pixels.iter().map(|&v| (v / 255.0).clamp(0.0, 1.0)).collect();
    Ok(RasterImage { pixels, normalized: true, ..img.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Quarter turn clockwise.
    Rot90,
    Rot180,
    /// Mirror left-right.
    FlipH,
    /// Mirror top-bottom.
    FlipV,
}

/// Exact pixel permutation; no interpolation.
pub fn augment(img: &RasterImage, transform: Transform) -> RasterImage {
    let (w, h, c) = (img.width, img.height, img.channels);
    let (ow, oh) = match transform {
        Transform::Rot90 => (h, w),
        _ => (w, h),
    };
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = match transform {
                Transform::Identity => (x, y),
                Transform::Rot90 => (y, h - 1 - x),
                Transform::Rot180 => (w - 1 - x, h - 1 - y),
                Transform::FlipH => (w - 1 - x, y),
                Transform::FlipV => (x, h - 1 - y),
            };
            let src = (sy * w + sx) * c;
            let dst = (y * ow + x) * c;
            out[dst..dst + c].copy_from_slice(&img.pixels[src..src + c]);
        }
    }
    RasterImage { width: ow, height: oh, channels: c, pixels: out, normalized: img.normalized }
}

/// Zeroes every background pixel of `img`.
pub fn apply_mask(img: &RasterImage, mask: &GrainMask) -> Result<RasterImage> {
    if mask.width() != img.width || mask.height() != img.height {
        return Err(shape_err(
            "apply_mask",
            format!("mask {}×{} vs image {}×{}", mask.width(), mask.height(), img.width, img.height),
        ));
    }
    let mut out = img.clone();
    for (i, px) in out.pixels.chunks_exact_mut(img.channels).enumerate() {
        if !mask.flags()[i] {
            px.fill(0.0);
        }
    }
    Ok(out)
}
