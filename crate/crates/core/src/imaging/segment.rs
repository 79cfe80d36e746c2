use std::collections::VecDeque;

use super::{to_grayscale, RasterImage};
use crate::error::{shape_err, Error, Result};

/// Binary foreground mask of a single grain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrainMask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
    count: usize,
}

impl GrainMask {
    pub fn from_flags(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(shape_err("GrainMask::from_flags", format!("{width}×{height} vs {} flags", flags.len())));
        }
        let count = flags.iter().filter(|&&f| f).count();
        Ok(Self { width, height, flags, count })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.count
    }

    pub fn to_image(&self) -> RasterImage {
        let px = self.flags.iter().map(|&f| if f { 255.0 } else { 0.0 }).collect();
        RasterImage::new(self.width, self.height, 1, px, false).expect("dimensions match")
    }
}

/// Otsu's threshold over a 256-bin histogram of 8-bit intensities. Pixels
/// strictly above the returned level are foreground.
pub fn otsu_threshold(gray: &RasterImage) -> u8 {
    let mut hist = [0u64; 256];
    for &v in gray.pixels() {
        let v = if gray.is_normalized() { v * 255.0 } else { v };
        hist[v.round().clamp(0.0, 255.0) as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best_t, mut best_var) = (0u8, -1.0f64);
    for t in 0..256 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mu0 - mu1).powi(2);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Labels connected foreground regions (8- or 4-connectivity). Returns the
/// per-pixel label (`0` = background, regions numbered from 1 in raster
/// order of their first pixel) and the size of each region.
pub fn connected_components(flags: &[bool], width: usize, height: usize, eight: bool) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; flags.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..flags.len() {
        if !flags[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = ((p % width) as isize, (p / width) as isize);
            for (dx, dy) in neighbours(eight) {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let q = ny as usize * width + nx as usize;
                if flags[q] && labels[q] == 0 {
                    labels[q] = label;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

fn neighbours(eight: bool) -> &'static [(isize, isize)] {
    const FOUR: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    const EIGHT: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
    if eight {
        &EIGHT
    } else {
        &FOUR
    }
}

/// Otsu threshold, keep the largest 8-connected component, fill its holes.
pub fn segment_grain(img: &RasterImage) -> Result<GrainMask> {
    let gray = to_grayscale(img)?;
    let t = otsu_threshold(&gray) as f32;
    let scale = if gray.is_normalized() { 255.0 } else { 1.0 };
    let (w, h) = (gray.width(), gray.height());
    let fg: Vec<bool> = gray.pixels().iter().map(|&v| (v * scale).round() > t).collect();

    let (labels, sizes) = connected_components(&fg, w, h, true);
    let Some((best, _)) = sizes.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) else {
        return Err(Error::NoGrainFound);
    };
    let keep = best as u32 + 1;
    let grain: Vec<bool> = labels.iter().map(|&l| l == keep).collect();

    // Background regions (4-connected) that do not touch the border are holes.
    let background: Vec<bool> = grain.iter().map(|&g| !g).collect();
    let (bg_labels, bg_sizes) = connected_components(&background, w, h, false);
    let mut touches_border = vec![false; bg_sizes.len() + 1];
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                touches_border[bg_labels[y * w + x] as usize] = true;
            }
        }
    }
    let filled = grain
        .iter()
        .zip(&bg_labels)
        .map(|(&g, &l)| g || (l != 0 && !touches_border[l as usize]))
        .collect();
    GrainMask::from_flags(w, h, filled)
}
