use serde::{Deserialize, Serialize};

use super::{to_grayscale, RasterImage};
use crate::error::{Error, Result};

/// Binary edge flags, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    flags: Vec<bool>,
}

impl EdgeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// White-on-black rendering.
    pub fn to_image(&self) -> RasterImage {
        let px = self.flags.iter().map(|&f| if f { 255.0 } else { 0.0 }).collect();
        RasterImage::new(self.width, self.height, 1, px, false).expect("dimensions match")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyConfig {
    pub sigma: f64,
    /// Hysteresis thresholds on the Sobel gradient magnitude of 8-bit intensities.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self { sigma: 1.4, low: 50.0, high: 150.0 }
    }
}

/// Normalized 1-D Gaussian with radius `max(1, round(1.5σ))`; 5 taps at σ = 1.4.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let radius = ((1.5 * sigma).round() as i64).max(1);
    let weights: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

/// Separable Gaussian blur of a single-channel image with edge replication.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Result<RasterImage> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("gaussian_blur expects a single-channel image".into()));
    }
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.pixels();
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;

    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            horiz[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(i, &k)| k * src[(y * w) as usize + clamp(x + i as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(i, &k)| k * horiz[clamp(y + i as isize - r, h) * w as usize + x as usize])
                .sum();
            out[(y * w + x) as usize] = v as f32;
        }
    }
    RasterImage::new(img.width(), img.height(), 1, out, img.is_normalized())
}

/// Canny edge detection on an already-smoothed single-channel image.
///
/// Sobel gradients are computed for interior pixels; the one-pixel border is
/// never an edge. During non-maximum suppression a pixel survives when its
/// magnitude is strictly greater than the neighbour on the brighter side of
/// the gradient and at least the neighbour on the darker side, so a two-pixel
/// plateau across a step keeps exactly its brighter pixel.
pub fn canny_edges(img: &RasterImage, low: f64, high: f64) -> Result<EdgeMap> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("canny_edges expects a single-channel image".into()));
    }
    if !(low < high) {
        return Err(Error::InvalidArgument(format!("low threshold {low} must be below high {high}")));
    }
    let (w, h) = (img.width(), img.height());
    let mut flags = vec![false; w * h];
    if w < 3 || h < 3 {
        return Ok(EdgeMap { width: w, height: h, flags });
    }
    let px = |x: usize, y: usize| img.pixels()[y * w + x] as f64;

    let mut mag = vec![0.0f64; w * h];
    let mut grad = vec![(0.0f64, 0.0f64); w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            mag[y * w + x] = gx.hypot(gy);
            grad[y * w + x] = (gx, gy);
        }
    }

    let mut thin = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let (gx, gy) = grad[y * w + x];
            let (dx, dy) = direction_step(gx, gy);
            let at = |ox: isize, oy: isize| mag[(y as isize + oy) as usize * w + (x as isize + ox) as usize];
            let brighter = at(dx, dy);
            let darker = at(-dx, -dy);
            if m > brighter && m >= darker {
                thin[y * w + x] = m;
            }
        }
    }

    let mut stack = Vec::new();
    for i in 0..w * h {
        if thin[i] >= high && !flags[i] {
            flags[i] = true;
            stack.push(i);
            while let Some(p) = stack.pop() {
                let (px_, py) = ((p % w) as isize, (p / w) as isize);
                for oy in -1..=1 {
                    for ox in -1..=1 {
                        let (nx, ny) = (px_ + ox, py + oy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if !flags[q] && thin[q] >= low {
                            flags[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
    }
    Ok(EdgeMap { width: w, height: h, flags })
}

/// Neighbour offset for the gradient direction quantized to 0/45/90/135
/// degrees, oriented toward increasing intensity.
fn direction_step(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    let (sx, sy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    };
    if sx as f64 * gx + sy as f64 * gy < 0.0 {
        (-sx, -sy)
    } else {
        (sx, sy)
    }
}

/// Grayscale, blur, then Canny, in one call.
pub fn detect_edges(img: &RasterImage, cfg: &CannyConfig) -> Result<EdgeMap> {
    let gray = to_grayscale(img)?;
    let gray = if gray.is_normalized() {
        let px = gray.pixels().iter().map(|v| v * 255.0).collect();
        RasterImage::new(gray.width(), gray.height(), 1, px, false)?
    } else {
        gray
    };
    let blurred = gaussian_blur(&gray, cfg.sigma)?;
    canny_edges(&blurred, cfg.low, cfg.high)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f32) -> RasterImage {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        RasterImage::new(w, h, 1, px, false).unwrap()
    }

    #[test]
    fn kernel_normalized_and_sized() {
        assert_eq!(gaussian_kernel(1.4).unwrap().len(), 5);
        for i in 0..=25 {
            let s = 0.5 + i as f64 * 0.1;
            let k = gaussian_kernel(s).unwrap();
            let total: f64 = k.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        assert!(gaussian_kernel(0.0).is_err());
    }

    #[test]
    fn blur_constant_and_impulse() {
        let c = gray(9, 7, |_, _| 42.0);
        let b = gaussian_blur(&c, 1.4).unwrap();
        assert!(b.pixels().iter().all(|&v| (v - 42.0).abs() < 1e-4));

        let imp = gray(11, 11, |x, y| if x == 5 && y == 5 { 1.0 } else { 0.0 });
        let b = gaussian_blur(&imp, 1.4).unwrap();
        let k = gaussian_kernel(1.4).unwrap();
        for y in 0..11 {
            for x in 0..11 {
                let (dx, dy) = (x as isize - 5, y as isize - 5);
                let expect = if dx.abs() <= 2 && dy.abs() <= 2 {
                    k[(dy + 2) as usize] * k[(dx + 2) as usize]
                } else {
                    0.0
                };
                assert!((b.get(x, y, 0) as f64 - expect).abs() < 1e-6, "({x},{y})");
            }
        }
    }

    #[test]
    fn constant_image_has_no_edges() {
        let e = canny_edges(&gray(20, 20, |_, _| 128.0), 50.0, 150.0).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn vertical_step_gives_single_column() {
        // Columns 0..10 dark, 10..20 bright. Sobel responds equally at
        // columns 9 and 10; the brighter pixel (10) is kept.
        let img = gray(20, 12, |x, _| if x < 10 { 0.0 } else { 255.0 });
        let e = canny_edges(&img, 50.0, 150.0).unwrap();
        for y in 0..12 {
            for x in 0..20 {
                let expect = x == 10 && y >= 1 && y <= 10;
                assert_eq!(e.is_edge(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn rejects_inverted_thresholds() {
        assert!(canny_edges(&gray(5, 5, |_, _| 0.0), 150.0, 50.0).is_err());
    }
}
