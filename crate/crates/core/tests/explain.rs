use grainxai::dataset::ClassLabel;
use grainxai::explain::{
    grid_superpixels, lime_explain, mask_aware_superpixels, perturb, shap_explain, CoalitionModel, FnModel, ImageModel,
    LimeConfig, ShapMode,
};
use grainxai::imaging::{segment_grain, RasterImage};
use grainxai::model::{build_model, ArchConfig};
use grainxai::par::Execution;
use grainxai::rng::SplitMix64;
use grainxai::synth::render_grain;
use grainxai::tensor::Tensor;

const SEQ: Execution = Execution::Sequential;

/// A game given by its full table of coalition values, indexed by bitmask.
fn table_model(m: usize, tables: Vec<Vec<f64>>) -> FnModel<impl Fn(&[bool]) -> Vec<f64> + Sync + Send> {
    let outputs = tables.len();
    FnModel {
        features: m,
        outputs,
        f: move |z: &[bool]| {
            let bits = z.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | (b as usize) << i);
            tables.iter().map(|t| t[bits]).collect()
        },
        execution: SEQ,
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// φ_i = Σ_{S ∌ i} |S|!(M−|S|−1)!/M! · (v(S∪{i}) − v(S)).
fn brute_shapley(m: usize, v: &[f64]) -> Vec<f64> {
    (0..m)
        .map(|i| {
            (0..1usize << m)
                .filter(|s| s >> i & 1 == 0)
                .map(|s| {
                    let size = s.count_ones() as usize;
                    factorial(size) * factorial(m - size - 1) / factorial(m) * (v[s | 1 << i] - v[s])
                })
                .sum()
        })
        .collect()
}

fn random_table(m: usize, rng: &mut SplitMix64) -> Vec<f64> {
    (0..1usize << m).map(|_| rng.unit_f64() * 2.0 - 1.0).collect()
}

fn exact_phi(m: usize, tables: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    shap_explain(&table_model(m, tables), ShapMode::Exact).unwrap().phi
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{what}: {x} vs {y}");
    }
}

#[test]
fn exact_mode_matches_brute_force_on_fifty_games() {
    let mut rng = SplitMix64::new(2024);
    for g in 0..50 {
        let m = 4 + g % 7;
        let tables = vec![random_table(m, &mut rng), random_table(m, &mut rng)];
        let e = shap_explain(&table_model(m, tables.clone()), ShapMode::Exact).unwrap();
        assert_eq!(e.mode_tag(), "exact");
        for (c, t) in tables.iter().enumerate() {
            assert_close(&e.phi[c], &brute_shapley(m, t), 1e-6, &format!("game {g} (M={m}) output {c}"));
        }
        assert!(e.efficiency_gap() <= 1e-9);
    }
}

#[test]
fn dummy_segments_get_nothing() {
    let mut rng = SplitMix64::new(5);
    for m in 4..=10 {
        let dummy = (rng.below(m as u64)) as usize;
        let inner = random_table(m, &mut rng);
        let table: Vec<f64> = (0..1usize << m).map(|s| inner[s & !(1 << dummy)]).collect();
        let phi = &exact_phi(m, vec![table])[0];
        assert!(phi[dummy].abs() <= 1e-6, "M={m}: φ_dummy = {}", phi[dummy]);
    }
}

#[test]
fn interchangeable_segments_share_credit() {
    let mut rng = SplitMix64::new(6);
    for m in 4..=10 {
        let (i, j) = (0, m - 1 - (rng.below((m - 1) as u64) as usize));
        let base = random_table(m, &mut rng);
        let pair: Vec<f64> = (0..3).map(|_| rng.unit_f64()).collect();
        // Value depends on the rest of S plus how many of {i, j} are in it.
        let table: Vec<f64> = (0..1usize << m)
            .map(|s| base[s & !(1 << i) & !(1 << j)] + pair[(s >> i & 1) + (s >> j & 1)])
            .collect();
        let phi = &exact_phi(m, vec![table])[0];
        assert!((phi[i] - phi[j]).abs() <= 1e-6, "M={m}: {} vs {}", phi[i], phi[j]);
    }
}

#[test]
fn attributions_are_linear_in_the_game() {
    let mut rng = SplitMix64::new(7);
    for m in 4..=10 {
        let (v1, v2) = (random_table(m, &mut rng), random_table(m, &mut rng));
        let sum: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a + b).collect();
        let phi = exact_phi(m, vec![v1, v2, sum.clone()]);
        let added: Vec<f64> = phi[0].iter().zip(&phi[1]).map(|(a, b)| a + b).collect();
        assert_close(&phi[2], &added, 1e-6, &format!("M={m}"));
        assert_close(&phi[2], &brute_shapley(m, &sum), 1e-6, &format!("M={m} brute force"));
    }
}

/// Median over seeds of the mean absolute error against exact values, as
/// the coalition budget doubles.
#[test]
fn sampled_estimates_converge() {
    let m = 10;
    let mut rng = SplitMix64::new(31);
    let budgets = [256, 512, 1024, 2048];
    let mut medians = Vec::new();
    let games: Vec<Vec<f64>> = (0..20).map(|_| random_table(m, &mut rng)).collect();
    for &n in &budgets {
        let mut errs: Vec<f64> = games
            .iter()
            .enumerate()
            .map(|(seed, t)| {
                let exact = brute_shapley(m, t);
                let e = shap_explain(&table_model(m, vec![t.clone()]), ShapMode::Sampled { coalitions: n, seed: seed as u64 }).unwrap();
                assert!(e.efficiency_gap() <= 1e-9);
                e.phi[0].iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        medians.push((errs[9] + errs[10]) / 2.0);
    }
    println!("median mean |Δφ| for N = {budgets:?}: {medians:?}");
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");
    assert!(medians[1] < medians[0] && medians[2] < medians[1], "{medians:?}");
}

fn linear_model(m: usize, coef: Vec<f64>, c: f64) -> FnModel<impl Fn(&[bool]) -> Vec<f64> + Sync + Send> {
    FnModel {
        features: m,
        outputs: 1,
        f: move |z: &[bool]| vec![c + z.iter().zip(&coef).map(|(&b, w)| b as u8 as f64 * w).sum::<f64>()],
        execution: SEQ,
    }
}

#[test]
fn lime_recovers_a_single_segment_model() {
    let mut coef = vec![0.0; 10];
    coef[3] = 0.6;
    let cfg = LimeConfig { samples: 2000, ridge: 1e-6, k: 1, ..Default::default() };
    let e = lime_explain(&linear_model(10, coef, 0.1), 0, &cfg).unwrap();
    assert!((e.coefficients[3] - 0.6).abs() <= 0.02, "{:?}", e.coefficients);
    for (i, w) in e.coefficients.iter().enumerate() {
        if i != 3 {
            assert!(w.abs() < 0.02, "segment {i}: {w}");
        }
    }
    assert_eq!(e.top_k, [3]);
    assert!(e.fidelity_r2 >= 0.99);
}

#[test]
fn lime_finds_the_dominant_segment_in_every_trial() {
    let mut hits = 0;
    for trial in 0..100u64 {
        let mut rng = SplitMix64::new(1000 + trial);
        let m = 6 + rng.below(35) as usize;
        let target = rng.below(m as u64) as usize;
        let mut coef: Vec<f64> = (0..m).map(|_| 0.2 * rng.unit_f64() - 0.1).collect();
        coef[target] = 0.6;
        let cfg = LimeConfig { samples: 2000, ridge: 1e-6, k: 1, seed: trial, ..Default::default() };
        let e = lime_explain(&linear_model(m, coef, 0.1), 0, &cfg).unwrap();
        assert!(e.fidelity_r2 >= 0.99);
        hits += (e.top_k == [target]) as usize;
    }
    assert_eq!(hits, 100);
}

#[test]
fn lime_is_reproducible_and_constant_models_get_no_weight() {
    let mut coef = vec![0.05; 12];
    coef[7] = -0.4;
    let model = linear_model(12, coef, 0.3);
    let cfg = LimeConfig { seed: 99, ..Default::default() };
    let a = lime_explain(&model, 0, &cfg).unwrap();
    let b = lime_explain(&model, 0, &cfg).unwrap();
    assert_eq!(a, b);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.coefficients), bits(&b.coefficients));

    let flat = lime_explain(&linear_model(12, vec![0.0; 12], 0.42), 0, &cfg).unwrap();
    assert!(flat.coefficients.iter().all(|w| w.abs() <= 1e-6), "{:?}", flat.coefficients);
}

fn grain(label: ClassLabel, seed: u64) -> RasterImage {
    render_grain(label, 50, &mut SplitMix64::new(seed))
}

fn predict_one(model: &grainxai::model::ModelParams<f32>, img: &RasterImage) -> Vec<f32> {
    let data: Vec<f32> = img.pixels().iter().map(|v| v / 255.0).collect();
    model.predict(&Tensor::new(vec![1, 50, 50, 3], data).unwrap(), SEQ).unwrap().row(0).to_vec()
}

#[test]
fn perturbing_with_all_or_nothing() {
    let img = grain(ClassLabel::Jasmine, 3);
    let spmap = mask_aware_superpixels(&segment_grain(&img).unwrap(), 6).unwrap();
    let m = spmap.count();
    assert_eq!(perturb(&img, &spmap, &vec![true; m], [0.0; 3]).unwrap(), img);
    let blank = perturb(&img, &spmap, &vec![false; m], [0.0; 3]).unwrap();
    assert!(blank.pixels().iter().all(|&v| v == 0.0));

    let model = build_model(&ArchConfig::default(), 8).unwrap();
    let wrapped = ImageModel::new(&model, &img, &spmap, SEQ);
    let out = wrapped.evaluate(&[vec![true; m], vec![false; m]]).unwrap();
    let direct = predict_one(&model, &img);
    let dark = predict_one(&model, &blank);
    for c in 0..5 {
        assert_eq!(out[0][c], direct[c] as f64);
        assert_eq!(out[1][c], dark[c] as f64);
    }
}

#[test]
fn image_model_attributions_are_efficient() {
    let model = build_model(&ArchConfig::default(), 21).unwrap();
    for (i, label) in ClassLabel::ALL.into_iter().enumerate() {
        let img = grain(label, 40 + i as u64);
        let spmap = grid_superpixels(50, 50, 3).unwrap();
        let e = shap_explain(&ImageModel::new(&model, &img, &spmap, Execution::Parallel), ShapMode::Exact).unwrap();
        assert!(e.efficiency_gap() <= 1e-4, "{label}: {}", e.efficiency_gap());
        let direct = predict_one(&model, &img);
        assert_close(&e.full_values, &direct.iter().map(|&p| p as f64).collect::<Vec<_>>(), 0.0, "f(x)");
    }
}

/// Masking a background segment should move the prediction less than
/// masking a grain segment. Reported, not asserted: an untrained model has
/// no reason to obey it.
#[test]
fn background_versus_grain_sensitivity_report() {
    let model = build_model(&ArchConfig::default(), 2).unwrap();
    let img = grain(ClassLabel::Basmati, 12);
    let mask = segment_grain(&img).unwrap();
    let spmap = mask_aware_superpixels(&mask, 6).unwrap();
    let m = spmap.count();
    let wrapped = ImageModel::new(&model, &img, &spmap, SEQ);
    let mut coalitions = vec![vec![true; m]];
    coalitions.extend((0..m).map(|i| (0..m).map(|j| j != i).collect()));
    let out = wrapped.evaluate(&coalitions).unwrap();
    let shift = |o: &[f64]| o.iter().zip(&out[0]).map(|(a, b)| (a - b).abs()).sum::<f64>();
    let mut fg = 0;
    for y in 0..50 {
        for x in 0..50 {
            fg += mask.contains(x, y) as usize;
        }
    }
    let labels = spmap.labels();
    let (mut grain_shift, mut grain_n, mut bg_shift, mut bg_n) = (0.0, 0, 0.0, 0);
    for seg in 0..m {
        let on_grain = labels.iter().enumerate().any(|(p, &l)| l as usize == seg && mask.contains(p % 50, p / 50));
        if on_grain {
            grain_shift += shift(&out[seg + 1]);
            grain_n += 1;
        } else {
            bg_shift += shift(&out[seg + 1]);
            bg_n += 1;
        }
    }
    println!(
        "{fg} grain px; mean |Δp| grain segments {:.2e} (n={grain_n}), background {:.2e} (n={bg_n})",
        grain_shift / grain_n.max(1) as f64,
        bg_shift / bg_n.max(1) as f64
    );
    assert!(grain_n > 0 && bg_n > 0);
}
