//! Procedurally rendered single-grain images: one bright grain on black,
//! with per-variety size, elongation and tint. Used for tests, benches and
//! smoke runs when the photographic corpus is not available.

use std::path::Path;

use crate::dataset::{ClassLabel, LabeledImages};
use crate::error::Result;
use crate::imaging::RasterImage;
use crate::par::{self, Execution};
use crate::rng::{derive_seed, SplitMix64};
use crate::IMAGE_SIZE;

/// Shape and colour of a variety at 50×50 scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrainProfile {
    pub semi_major: f64,
    pub semi_minor: f64,
    pub color: [f64; 3],
}

pub fn profile(label: ClassLabel) -> GrainProfile {
    let (semi_major, semi_minor, color) = match label {
        ClassLabel::Arborio => (12.0, 8.0, [236.0, 231.0, 214.0]),
        ClassLabel::Basmati => (20.0, 4.5, [229.0, 224.0, 204.0]),
        ClassLabel::Ipsala => (15.0, 9.0, [242.0, 240.0, 230.0]),
        ClassLabel::Jasmine => (16.0, 5.5, [224.0, 221.0, 210.0]),
        ClassLabel::Karacadag => (9.5, 7.0, [214.0, 198.0, 172.0]),
    };
    GrainProfile { semi_major, semi_minor, color }
}

/// Renders one grain on a `size×size` canvas (8-bit scale). Axes jitter by
/// ±8 %, the centre by ±3 px (scaled), orientation is uniform.
pub fn render_grain(label: ClassLabel, size: usize, rng: &mut SplitMix64) -> RasterImage {
    let p = profile(label);
    let k = size as f64 / IMAGE_SIZE as f64;
    let mut jitter = |spread: f64| 1.0 + spread * (2.0 * rng.unit_f64() - 1.0);
    let a = p.semi_major * k * jitter(0.08);
    let b = p.semi_minor * k * jitter(0.08);
    let brightness = jitter(0.05);
    let cx = size as f64 / 2.0 + 3.0 * k * (2.0 * rng.unit_f64() - 1.0);
    let cy = size as f64 / 2.0 + 3.0 * k * (2.0 * rng.unit_f64() - 1.0);
    let theta = std::f64::consts::PI * rng.unit_f64();
    let (sin, cos) = theta.sin_cos();

    let mut px = vec![0.0f32; size * size * 3];
    const SS: usize = 3;
    for y in 0..size {
        for x in 0..size {
            let (mut cover, mut shade) = (0.0, 0.0);
            for sy in 0..SS {
                for sx in 0..SS {
                    let dx = x as f64 + (sx as f64 + 0.5) / SS as f64 - cx;
                    let dy = y as f64 + (sy as f64 + 0.5) / SS as f64 - cy;
                    let u = (dx * cos + dy * sin) / a;
                    let v = (-dx * sin + dy * cos) / b;
                    let r2 = u * u + v * v;
                    if r2 <= 1.0 {
                        cover += 1.0;
                        shade += 1.0 - 0.22 * r2;
                    }
                }
            }
            if cover == 0.0 {
                continue;
            }
            let frac = cover / (SS * SS) as f64;
            let tone = shade / cover * brightness;
            let noise = 6.0 * (rng.unit_f64() - 0.5);
            for c in 0..3 {
                let v = frac * (p.color[c] * tone + noise);
                px[(y * size + x) * 3 + c] = v.round().clamp(0.0, 255.0) as f32;
            }
        }
    }
    RasterImage::new(size, size, 3, px, false).expect("sized canvas")
}

/// `per_class` images of every variety at 50×50, class-major, each image
/// seeded independently.
pub fn synthetic_images(per_class: usize, seed: u64, exec: Execution) -> LabeledImages {
    let jobs: Vec<(ClassLabel, usize)> =
        ClassLabel::ALL.iter().flat_map(|&c| (0..per_class).map(move |i| (c, i))).collect();
    let images = par::map_slice(exec, &jobs, |&(c, i)| {
        let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, c.index() as u64), i as u64));
        render_grain(c, IMAGE_SIZE, &mut rng)
    });
    let mut data = LabeledImages::default();
    for ((c, i), img) in jobs.iter().zip(&images) {
        data.push(img, *c, format!("{c}/{c} ({}).png", i + 1));
    }
    data
}

/// Writes a corpus laid out like the photographic dataset:
/// `root/<Variety>/<Variety> (<n>).png`.
pub fn write_corpus(root: impl AsRef<Path>, per_class: usize, size: usize, seed: u64) -> Result<()> {
    let root = root.as_ref();
    for c in ClassLabel::ALL {
        let dir = root.join(c.name());
        std::fs::create_dir_all(&dir)?;
        for i in 0..per_class {
            let mut rng = SplitMix64::new(derive_seed(derive_seed(seed, c.index() as u64), i as u64));
            render_grain(c, size, &mut rng).save_png(dir.join(format!("{c} ({}).png", i + 1)))?;
        }
    }
    Ok(())
}
