//! Sequential vs data-parallel execution of the hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grainxai::dataset::ClassLabel;
use grainxai::explain::{grid_superpixels, shap_explain, ImageModel, ShapMode};
use grainxai::model::{build_model, ArchConfig};
use grainxai::par::Execution;
use grainxai::rng::SplitMix64;
use grainxai::synth::{render_grain, synthetic_images};
use grainxai::tensor::Tensor;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn forward(c: &mut Criterion) {
    let model = build_model(&ArchConfig::default(), 0).unwrap();
    let mut rng = SplitMix64::new(1);
    let batch = Tensor::from_fn(&[32, 50, 50, 3], |_| rng.unit_f64() as f32);
    let mut group = c.benchmark_group("predict_batch32");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| model.predict(&batch, exec).unwrap()));
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let mut group = c.benchmark_group("synthetic_images_20_per_class");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| synthetic_images(20, 3, exec)));
    }
    group.finish();
}

fn shap(c: &mut Criterion) {
    let model = build_model(&ArchConfig::default(), 0).unwrap();
    let img = render_grain(ClassLabel::Karacadag, 50, &mut SplitMix64::new(2));
    let spmap = grid_superpixels(50, 50, 3).unwrap();
    let mut group = c.benchmark_group("shap_exact_grid3");
    group.sample_size(10);
    for (name, exec) in MODES {
        let wrapped = ImageModel::new(&model, &img, &spmap, exec);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| shap_explain(&wrapped, ShapMode::Exact).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward, synthesis, shap);
criterion_main!(benches);
