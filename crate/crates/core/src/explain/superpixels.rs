use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{connected_components, GrainMask};

/// Fragments smaller than this are absorbed by a neighbour.
pub const MIN_FRAGMENT: usize = 8;

/// Partition of the image plane into `count` labelled regions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

impl SuperpixelMap {
    /// Validates that labels are dense in `0..count` and every region is
    /// non-empty and 4-connected.
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::InvalidArgument(format!("{} labels for a {width}×{height} image", labels.len())));
        }
        let count = *labels.iter().max().expect("non-empty") as usize + 1;
        let map = Self { width, height, labels, count };
        for s in 0..count {
            let flags: Vec<bool> = map.labels.iter().map(|&l| l as usize == s).collect();
            let (_, sizes) = connected_components(&flags, width, height, false);
            if sizes.len() != 1 {
                return Err(Error::InvalidArgument(format!("segment {s} has {} connected parts", sizes.len())));
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// True when the pixel touches another segment or the image border.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        let s = self.labels[y * self.width + x];
        if x == 0 || y == 0 || x + 1 == self.width || y + 1 == self.height {
            return true;
        }
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].iter().any(|&(nx, ny)| self.labels[ny * self.width + nx] != s)
    }
}

fn grid_cell(width: usize, height: usize, g: usize) -> Result<impl Fn(usize, usize) -> usize> {
    if g == 0 || g > width || g > height {
        return Err(Error::InvalidArgument(format!("grid {g} must lie in 1..={}", width.min(height))));
    }
    let (cw, ch) = (width / g, height / g);
    // The last row and column absorb the remainder.
    Ok(move |x: usize, y: usize| (y / ch).min(g - 1) * g + (x / cw).min(g - 1))
}

/// `g×g` rectangular cells numbered row-major.
pub fn grid_superpixels(width: usize, height: usize, g: usize) -> Result<SuperpixelMap> {
    let cell = grid_cell(width, height, g)?;
    let labels = (0..width * height).map(|i| cell(i % width, i / width) as u32).collect();
    Ok(SuperpixelMap { width, height, labels, count: g * g })
}

/// Grid cells split along the grain boundary. Each cell contributes one
/// segment per 4-connected foreground or background part; parts smaller
/// than [`MIN_FRAGMENT`] pixels merge into the neighbour sharing the longest
/// border (preferring the same cell). Segments are numbered in raster order
/// of their first pixel.
pub fn mask_aware_superpixels(mask: &GrainMask, g: usize) -> Result<SuperpixelMap> {
    let (w, h) = (mask.width(), mask.height());
    let cell_of = grid_cell(w, h, g)?;
    let cells: Vec<usize> = (0..w * h).map(|i| cell_of(i % w, i / w)).collect();

    // Flood fill within (cell, side) classes.
    let mut labels = vec![u32::MAX; w * h];
    let mut count = 0u32;
    for start in 0..w * h {
        if labels[start] != u32::MAX {
            continue;
        }
        let key = (cells[start], mask.flags()[start]);
        labels[start] = count;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for q in neighbours4(p, w, h) {
                if labels[q] == u32::MAX && (cells[q], mask.flags()[q]) == key {
                    labels[q] = count;
                    stack.push(q);
                }
            }
        }
        count += 1;
    }

    let mut cell_sizes = vec![0usize; g * g];
    for &c in &cells {
        cell_sizes[c] += 1;
    }
    loop {
        let mut sizes = vec![0usize; count as usize];
        let mut home = vec![0usize; count as usize];
        for (i, &l) in labels.iter().enumerate() {
            sizes[l as usize] += 1;
            home[l as usize] = cells[i];
        }
        let victim = (0..count as usize)
            .filter(|&s| sizes[s] > 0 && sizes[s] < MIN_FRAGMENT && sizes[s] < cell_sizes[home[s]])
            .min_by_key(|&s| (sizes[s], s));
        let Some(victim) = victim else { break };
        let mut shared = std::collections::BTreeMap::<u32, (bool, usize)>::new();
        for p in (0..w * h).filter(|&p| labels[p] as usize == victim) {
            for q in neighbours4(p, w, h) {
                if labels[q] as usize != victim {
                    let e = shared.entry(labels[q]).or_insert((cells[q] == cells[p], 0));
                    e.1 += 1;
                }
            }
        }
        let Some((&target, _)) = shared.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else { break };
        for l in labels.iter_mut().filter(|l| **l as usize == victim) {
            *l = target;
        }
    }

    // Dense relabel in raster order of first pixel.
    let mut remap = vec![u32::MAX; count as usize];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if remap[*l as usize] == u32::MAX {
            remap[*l as usize] = next;
            next += 1;
        }
        *l = remap[*l as usize];
    }
    Ok(SuperpixelMap { width: w, height: h, labels, count: next as usize })
}

fn neighbours4(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    [
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_mask(r: f32) -> GrainMask {
        let flags = (0..2500).map(|i| ((i % 50) as f32 - 24.5).powi(2) + ((i / 50) as f32 - 24.5).powi(2) <= r * r).collect();
        GrainMask::from_flags(50, 50, flags).unwrap()
    }

    #[test]
    fn grid_arithmetic() {
        let m = grid_superpixels(50, 50, 5).unwrap();
        assert_eq!(m.count(), 25);
        assert!(m.sizes().iter().all(|&s| s == 100));
        assert_eq!(grid_superpixels(50, 50, 1).unwrap().sizes(), vec![2500]);
        let m = grid_superpixels(50, 50, 7).unwrap();
        assert_eq!(m.count(), 49);
        assert_eq!(m.label(49, 0), 6);
        assert_eq!(m.label(41, 0), 5);
        assert_eq!(m.label(42, 0), 6);
        assert_eq!(m.sizes()[6], 8 * 7);
        assert_eq!(m.sizes()[48], 8 * 8);
        assert!(grid_superpixels(50, 50, 0).is_err());
        assert!(grid_superpixels(50, 50, 51).is_err());
    }

    #[test]
    fn full_mask_matches_grid() {
        let mask = GrainMask::from_flags(50, 50, vec![true; 2500]).unwrap();
        for g in [1, 3, 6, 7] {
            assert_eq!(mask_aware_superpixels(&mask, g).unwrap(), grid_superpixels(50, 50, g).unwrap());
        }
    }

    #[test]
    fn blob_splits_crossing_cells() {
        let mask = disc_mask(14.0);
        let m = mask_aware_superpixels(&mask, 5).unwrap();
        assert!(m.count() > 25);
        // Validation re-checks density and connectivity.
        let checked = SuperpixelMap::from_labels(50, 50, m.labels().to_vec()).unwrap();
        assert_eq!(checked.count(), m.count());
        assert!(m.sizes().iter().all(|&s| s >= MIN_FRAGMENT));
        // Every cell the boundary crosses with sizeable parts on both sides is split.
        let grid = grid_superpixels(50, 50, 5).unwrap();
        let mut crossed = 0;
        for c in 0..25 {
            let px: Vec<usize> = (0..2500).filter(|&i| grid.labels()[i] as usize == c).collect();
            let fg = px.iter().filter(|&&i| mask.flags()[i]).count();
            if fg >= MIN_FRAGMENT && px.len() - fg >= MIN_FRAGMENT {
                crossed += 1;
                let segs: std::collections::BTreeSet<u32> = px.iter().map(|&i| m.labels()[i]).collect();
                assert!(segs.len() >= 2, "cell {c}");
            }
        }
        assert!(crossed >= 8);
    }

    #[test]
    fn boundary_pixels() {
        let m = grid_superpixels(10, 10, 2).unwrap();
        assert!(m.is_boundary(4, 2));
        assert!(m.is_boundary(0, 2));
        assert!(!m.is_boundary(2, 2));
    }
}
