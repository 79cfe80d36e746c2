use std::collections::HashMap;

use serde::Serialize;

use super::linalg::solve;
use super::CoalitionModel;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Largest segment count for which all `2^M` coalitions are enumerated.
pub const EXACT_MAX_SEGMENTS: usize = 12;
/// Default coalition budget in sampled mode.
pub const SAMPLED_COALITIONS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ShapMode {
    Exact,
    Sampled { coalitions: usize, seed: u64 },
}

impl ShapMode {
    /// Exact when `m` allows it, otherwise sampled with the default budget.
    pub fn auto(m: usize, seed: u64) -> Self {
        if m <= EXACT_MAX_SEGMENTS {
            ShapMode::Exact
        } else {
            ShapMode::Sampled { coalitions: SAMPLED_COALITIONS, seed }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapExplanation {
    /// `φ[class][segment]`.
    pub phi: Vec<Vec<f64>>,
    /// Output with every segment removed.
    pub base_values: Vec<f64>,
    /// Output of the unperturbed input.
    pub full_values: Vec<f64>,
    pub mode: ShapMode,
    /// Coalitions evaluated besides the empty and full ones.
    pub coalitions: usize,
    pub seed: Option<u64>,
}

impl ShapExplanation {
    pub fn mode_tag(&self) -> &'static str {
        match self.mode {
            ShapMode::Exact => "exact",
            ShapMode::Sampled { .. } => "sampled",
        }
    }

    /// `max_k |Σφ_k + base_k − f_k(x)|`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi
            .iter()
            .zip(self.base_values.iter().zip(&self.full_values))
            .map(|(p, (b, f))| (p.iter().sum::<f64>() + b - f).abs())
            .fold(0.0, f64::max)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel `(M−1) / (C(M,s)·s·(M−s))` for coalition size `0 < s < M`.
pub fn shap_kernel_weight(m: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= m {
        return Err(Error::InvalidArgument(format!(
            "coalition size {s} of {m} is an endpoint; endpoints are constraints, not weights"
        )));
    }
    Ok((m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64))
}

/// KernelSHAP with the efficiency constraint `Σφ = f(x) − f(∅)` enforced
/// exactly by eliminating the last segment's value.
pub fn shap_explain(model: &dyn CoalitionModel, mode: ShapMode) -> Result<ShapExplanation> {
    let m = model.features();
    if m == 0 {
        return Err(Error::InvalidArgument("SHAP needs at least one segment".into()));
    }
    let (samples, seed) = match mode {
        ShapMode::Exact => {
            if m > EXACT_MAX_SEGMENTS {
                return Err(Error::TooManySegments { segments: m, max: EXACT_MAX_SEGMENTS });
            }
            (exact_coalitions(m)?, None)
        }
        ShapMode::Sampled { coalitions, seed } => {
            if coalitions == 0 {
                return Err(Error::InvalidArgument("sampled SHAP needs a positive coalition budget".into()));
            }
            (sampled_coalitions(m, coalitions, seed), Some(seed))
        }
    };

    let mut all: Vec<Vec<bool>> = vec![vec![true; m], vec![false; m]];
    all.extend(samples.iter().map(|(z, _)| z.clone()));
    let values = model.evaluate(&all)?;
    let k = model.outputs();
    let full_values = values[0].clone();
    let base_values = values[1].clone();

    let phi = if m == 1 {
        (0..k).map(|c| vec![full_values[c] - base_values[c]]).collect()
    } else {
        // Regress v(z) − v(∅) − z_last·Δ on (z_i − z_last) for i < last.
        let n = m - 1;
        let mut a = vec![0.0; n * n];
        let mut bs = vec![vec![0.0; n]; k];
        let mut x = vec![0.0; n];
        for ((z, w), v) in samples.iter().zip(&values[2..]) {
            let zl = z[n] as u8 as f64;
            for i in 0..n {
                x[i] = z[i] as u8 as f64 - zl;
            }
            for i in 0..n {
                if x[i] == 0.0 {
                    continue;
                }
                for j in i..n {
                    a[i * n + j] += w * x[i] * x[j];
                }
            }
            for c in 0..k {
                let y = v[c] - base_values[c] - zl * (full_values[c] - base_values[c]);
                for i in 0..n {
                    bs[c][i] += w * x[i] * y;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                a[i * n + j] = a[j * n + i];
            }
        }
        bs.into_iter()
            .enumerate()
            .map(|(c, b)| {
                let mut p = solve(a.clone(), b, "KernelSHAP normal equations are singular")?;
                let rest: f64 = p.iter().sum();
                p.push(full_values[c] - base_values[c] - rest);
                Ok(p)
            })
            .collect::<Result<_>>()?
    };
    Ok(ShapExplanation { phi, base_values, full_values, mode, coalitions: samples.len(), seed })
}

fn exact_coalitions(m: usize) -> Result<Vec<(Vec<bool>, f64)>> {
    (1u64..(1u64 << m) - 1)
        .map(|bits| {
            let z: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
            let s = bits.count_ones() as usize;
            Ok((z, shap_kernel_weight(m, s)?))
        })
        .collect()
}

/// Budgeted coalition design: the smallest (and, paired, largest) sizes are
/// enumerated completely while the budget covers them at their kernel
/// share; the remainder is filled by size-stratified random draws, each
/// added with its complement, and duplicates accumulate weight.
fn sampled_coalitions(m: usize, budget: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let total = if m >= 63 { usize::MAX } else { (1usize << m) - 2 };
    if budget >= total {
        return exact_coalitions(m).expect("sizes are interior");
    }
    let num_subset_sizes = (m - 1).div_ceil(2);
    let num_paired = (m - 1) / 2;
    let mut weight_vector: Vec<f64> = (1..=num_subset_sizes)
        .map(|s| {
            let w = (m - 1) as f64 / (s * (m - s)) as f64;
            if s <= num_paired {
                2.0 * w
            } else {
                w
            }
        })
        .collect();
    let norm: f64 = weight_vector.iter().sum();
    weight_vector.iter_mut().for_each(|w| *w /= norm);

    let mut out: Vec<(Vec<bool>, f64)> = Vec::new();
    let mut left = budget as f64;
    let mut remaining = weight_vector.clone();
    let mut full = 0;
    for s in 1..=num_subset_sizes {
        let paired = s <= num_paired;
        let n_subsets = binomial(m, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / n_subsets < 1.0 - 1e-8 {
            break;
        }
        full += 1;
        left -= n_subsets;
        if remaining[s - 1] < 1.0 {
            let r = remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= 1.0 - r);
        }
        let mut w = weight_vector[s - 1] / binomial(m, s);
        if paired {
            w /= 2.0;
        }
        for_each_subset(m, s, |z| {
            out.push((z.to_vec(), w));
            if paired {
                out.push((z.iter().map(|b| !b).collect(), w));
            }
        });
    }

    let mut left = left.round() as usize;
    if full < num_subset_sizes && left > 0 {
        let weight_left: f64 = weight_vector[full..].iter().sum();
        let mut probs: Vec<f64> = weight_vector
            .iter()
            .enumerate()
            .map(|(i, &w)| if i < num_paired { w / 2.0 } else { w })
            .skip(full)
            .collect();
        let pn: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= pn);

        let mut rng = SplitMix64::new(seed);
        let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
        let first_random = out.len();
        let mut attempts = 0usize;
        let max_attempts = budget.saturating_mul(100).max(10_000);
        while left > 0 && attempts < max_attempts {
            attempts += 1;
            let u = rng.unit_f64();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let s = full + pick + 1;
            let mut idx: Vec<usize> = (0..m).collect();
            for j in 0..s {
                let r = j + rng.below((m - j) as u64) as usize;
                idx.swap(j, r);
            }
            let mut z = vec![false; m];
            for &i in &idx[..s] {
                z[i] = true;
            }
            let mut add = |z: Vec<bool>, left: &mut usize| match index.get(&z) {
                Some(&at) => out[at].1 += 1.0,
                None => {
                    index.insert(z.clone(), out.len());
                    out.push((z, 1.0));
                    *left -= 1;
                }
            };
            let paired = s <= num_paired;
            let comp: Vec<bool> = z.iter().map(|b| !b).collect();
            add(z, &mut left);
            if paired && left > 0 {
                add(comp, &mut left);
            }
        }
        let raw: f64 = out[first_random..].iter().map(|(_, w)| w).sum();
        if raw > 0.0 {
            for (_, w) in &mut out[first_random..] {
                *w *= weight_left / raw;
            }
        }
    }
    out
}

/// Calls `f` with every size-`s` subset of `0..m`, in lexicographic order.
fn for_each_subset(m: usize, s: usize, mut f: impl FnMut(&[bool])) {
    let mut idx: Vec<usize> = (0..s).collect();
    let mut z = vec![false; m];
    loop {
        z.iter_mut().for_each(|b| *b = false);
        for &i in &idx {
            z[i] = true;
        }
        f(&z);
        let Some(pos) = (0..s).rev().find(|&p| idx[p] != p + m - s) else { return };
        idx[pos] += 1;
        for q in pos + 1..s {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Mean `|φ|` per class and segment over several explanations sharing a
/// segmentation.
pub fn global_importance(explanations: &[ShapExplanation]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = explanations.first() else { return Ok(Vec::new()) };
    let shape: Vec<usize> = first.phi.iter().map(Vec::len).collect();
    let mut acc: Vec<Vec<f64>> = shape.iter().map(|&n| vec![0.0; n]).collect();
    for e in explanations {
        if e.phi.iter().map(Vec::len).collect::<Vec<_>>() != shape {
            return Err(Error::InvalidArgument("explanations use different segmentations".into()));
        }
        for (a, p) in acc.iter_mut().zip(&e.phi) {
            for (av, pv) in a.iter_mut().zip(p) {
                *av += pv.abs();
            }
        }
    }
    let n = explanations.len() as f64;
    acc.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(acc)
}
