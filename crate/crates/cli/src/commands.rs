use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde_json::{json, Value};

use grainxai::dataset::{
    load_records, preprocess_file, scan_dataset, stratified_split, validate_ratios, ClassLabel, LabeledImages,
    LoadReport, PreprocessMode, Split, SplitManifest,
};
use grainxai::explain::{
    grid_superpixels, lime_explain, lime_json, lime_outline, mask_aware_superpixels, shap_explain, shap_heat,
    shap_json, CoalitionModel, ImageModel, LimeConfig, ShapMode, SuperpixelMap, EXACT_MAX_SEGMENTS,
};
use grainxai::imaging::{self, CannyConfig};
use grainxai::model::{self, ArchConfig};
use grainxai::par::Execution;
use grainxai::training::{
    argmax, fit, run_sweep, write_epochs_csv, write_sweep_csv, OptimizerConfig, SweepGrid, TrainingConfig,
};
use grainxai::Error;

use crate::run_config::{recorded_preprocess, run_config, write_json};
use crate::{
    Command, EvalArgs, ExplainArgs, Method, PreprocessArgs, SplitArgs, StatsArgs, SuperpixelKind, SweepArgs,
    SynthArgs, TrainArgs,
};

/// An error carrying its own exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Failure { code: 2, message: message.into() }.into()
}

fn training_failure(message: impl Into<String>) -> anyhow::Error {
    Failure { code: 3, message: message.into() }.into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::ModelFile(_) => 4,
                Error::Diverged { .. } => 3,
                Error::InvalidArgument(_)
                | Error::UnknownClass { .. }
                | Error::MissingClass { .. }
                | Error::EmptyClass(_)
                | Error::TooFewSamples { .. }
                | Error::TooManySegments { .. }
                | Error::Image { .. }
                | Error::Json(_) => 2,
                Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

pub fn run(command: Command, exec: Execution) -> Result<()> {
    match command {
        Command::Split(a) => split(a),
        Command::Train(a) => train(a, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Explain(a) => explain(a, exec),
        Command::Preprocess(a) => preprocess(a),
        Command::Stats(a) => stats(a),
        Command::Sweep(a) => sweep(a, exec),
        Command::Synth(a) => synth(a),
    }
}

fn split(a: SplitArgs) -> Result<()> {
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("--ratios takes three comma-separated values, got {}", a.ratios.len())))?;
    validate_ratios(ratios)?;
    let (_, samples) = scan_dataset(&a.data)?;
    let manifest = stratified_split(&samples, a.seed, ratios)?;
    let mut doc = serde_json::to_value(&manifest)?;
    doc["run_config"] = run_config("split", &a, Value::Null);
    write_json(&a.manifest, &doc)?;

    println!("{:<10} {:>7} {:>7} {:>7}", "class", "train", "val", "test");
    for class in ClassLabel::ALL {
        let cs = manifest.class_split(class);
        println!("{:<10} {:>7} {:>7} {:>7}", class.name(), cs.train.len(), cs.val.len(), cs.test.len());
    }
    println!(
        "{:<10} {:>7} {:>7} {:>7}",
        "total",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    println!("manifest written to {}", a.manifest.display());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<SplitManifest> {
    SplitManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

/// Per-class cap for `split` when `train` is capped at `n`: the split keeps
/// its share relative to the training fraction.
pub fn subset_cap(manifest: &SplitManifest, split: Split, n: usize) -> usize {
    let r = manifest.ratios;
    match split {
        Split::Train => n,
        Split::Val => (n as f64 * r[1] / r[0]).round() as usize,
        Split::Test => (n as f64 * r[2] / r[0]).round() as usize,
    }
}

fn load_split(
    data: &Path,
    manifest: &SplitManifest,
    split: Split,
    subset: Option<usize>,
    mode: PreprocessMode,
    exec: Execution,
) -> Result<(LabeledImages, LoadReport)> {
    let manifest = match subset {
        Some(0) => return Err(usage("--subset must be at least 1")),
        Some(n) => manifest.truncated(split, subset_cap(manifest, split, n).max(1)),
        None => manifest.clone(),
    };
    let records = manifest.records(split);
    if records.is_empty() {
        return Err(usage(format!("the {split} split is empty")));
    }
    let (images, report) = load_records(data, &records, mode, exec);
    if images.is_empty() {
        return Err(usage(format!("none of the {} {split} images could be loaded", records.len())));
    }
    if !report.skipped.is_empty() {
        log::warn!("{split}: skipped {} of {} images", report.skipped.len(), records.len());
    }
    Ok((images, report))
}

fn training_config(
    arch: ArchConfig,
    optimizer: OptimizerConfig,
    (batch_size, l2, max_epochs, patience, seed): (usize, f64, usize, usize, u64),
    augment: bool,
    preprocess: PreprocessMode,
    execution: Execution,
) -> TrainingConfig {
    TrainingConfig {
        arch,
        optimizer,
        batch_size,
        l2,
        max_epochs,
        patience,
        seed,
        augment,
        preprocess,
        execution,
        ..TrainingConfig::default()
    }
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let cfg = training_config(
        ArchConfig { depth: a.depth.into(), ..ArchConfig::default() },
        OptimizerConfig { kind: a.optimizer.into(), learning_rate: a.lr, ..OptimizerConfig::default() },
        (a.batch, a.l2, a.epochs, a.patience, a.seed),
        a.augment.enabled(),
        a.preprocess.into(),
        exec,
    );
    cfg.validate()?;
    let manifest = load_manifest(&a.manifest)?;
    let (train, train_report) = load_split(&a.data, &manifest, Split::Train, a.subset, cfg.preprocess, exec)?;
    let (val, val_report) = load_split(&a.data, &manifest, Split::Val, a.subset, cfg.preprocess, exec)?;
    log::info!("training on {} images, validating on {}", train.len(), val.len());

    let outcome = fit(&cfg, &train, &val).map_err(|e| training_failure(format!("training failed: {e}")))?;
    std::fs::create_dir_all(&a.outdir).with_context(|| format!("creating {}", a.outdir.display()))?;
    let model_path = a.out.clone().unwrap_or_else(|| a.outdir.join("model.rgc"));
    model::save_model(&outcome.model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    write_epochs_csv(a.outdir.join("epochs.csv"), &outcome.history)?;

    let rc = run_config(
        "train",
        &a,
        json!({
            "training": cfg,
            "model_path": model_path,
            "parameters": outcome.model.parameter_count(),
            "train_images": train.len(),
            "val_images": val.len(),
            "skipped": train_report.skipped.iter().chain(&val_report.skipped).map(|(p, _)| p).collect::<Vec<_>>(),
        }),
    );
    let mut doc = rc;
    doc["outcome"] = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss.is_finite().then_some(outcome.best_val_loss),
        "epochs_run": outcome.history.len(),
        "stopped_early": outcome.stopped_early,
        "divergence": outcome.divergence,
    });
    write_json(&a.outdir.join("run_config.json"), &doc)?;

    println!("parameters: {}", outcome.model.parameter_count());
    if let Some(best) = outcome.best_epoch.and_then(|e| outcome.history.get(e - 1)) {
        println!("best epoch {}: val_loss {:.4} val_acc {:.4}", best.epoch, best.val_loss, best.val_acc);
    }
    println!("model written to {}", model_path.display());
    if let Some(d) = outcome.divergence {
        return Err(training_failure(format!("training diverged: {}; last stable checkpoint kept", d.detail)));
    }
    Ok(())
}

fn resolve_preprocess(flag: Option<crate::Preprocess>, model: &Path) -> Result<PreprocessMode> {
    if let Some(p) = flag {
        return Ok(p.into());
    }
    match recorded_preprocess(model) {
        Some(s) => Ok(PreprocessMode::from_str(&s)?),
        None => Ok(PreprocessMode::Raw),
    }
}

fn eval(a: EvalArgs, exec: Execution) -> Result<()> {
    let model = model::load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mode = resolve_preprocess(a.preprocess, &a.model)?;
    let split: Split = a.split.into();
    let manifest = load_manifest(&a.manifest)?;
    let (data, report) = load_split(&a.data, &manifest, split, a.subset, mode, exec)?;
    let eval = grainxai::metrics::evaluate(&model, &data, report.skipped.len(), a.batch.max(1), exec)?;
    let rc = run_config("eval", &a, json!({ "preprocess": mode, "split": split }));
    eval.write_artifacts(&a.outdir, &rc)?;
    write_json(&a.outdir.join("run_config.json"), &rc)?;

    println!("split {split}: {} images evaluated, {} skipped", eval.n_evaluated, eval.n_skipped);
    println!("accuracy: {:.4}", eval.report.accuracy);
    println!("{:<10} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "auc");
    for (k, m) in eval.report.per_class.iter().enumerate() {
        let auc = eval.roc[k].auc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            eval.confusion.class_names[k], m.precision, m.recall, m.f1, auc
        );
    }
    Ok(())
}

fn superpixels_for(img: &imaging::RasterImage, kind: SuperpixelKind, grid: usize) -> Result<(SuperpixelMap, &'static str)> {
    if kind == SuperpixelKind::Mask {
        match imaging::segment_grain(img) {
            Ok(mask) => return Ok((mask_aware_superpixels(&mask, grid)?, "mask")),
            Err(Error::NoGrainFound) => log::warn!("no grain found; falling back to plain grid superpixels"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok((grid_superpixels(img.width(), img.height(), grid)?, "grid"))
}

fn explain(a: ExplainArgs, exec: Execution) -> Result<()> {
    let requested = match a.class.as_str() {
        "auto" => None,
        name => Some(ClassLabel::from_str(name)?),
    };
    let model = model::load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mode = resolve_preprocess(a.preprocess, &a.model)?;
    let img = preprocess_file(&a.image, mode)?;
    let (spmap, sp_kind) = superpixels_for(&img, a.superpixels, a.grid)?;
    let im = ImageModel::new(&model, &img, &spmap, exec);
    let probs = im.evaluate(&[vec![true; spmap.count()]])?.remove(0);
    let predicted = argmax(&probs.iter().map(|&p| p as f32).collect::<Vec<_>>());
    let target = requested.map_or(predicted, ClassLabel::index);
    let target_name = ClassLabel::ALL[target].name();
    let predicted_name = ClassLabel::ALL[predicted].name();

    let resolved = json!({
        "preprocess": mode,
        "superpixels": sp_kind,
        "segments": spmap.count(),
        "target_class": target_name,
    });
    let rc = run_config("explain", &a, resolved);
    std::fs::create_dir_all(&a.outdir).with_context(|| format!("creating {}", a.outdir.display()))?;
    img.save_png(a.outdir.join("input.png"))?;

    let mut doc = match a.method {
        Method::Lime => {
            let cfg = LimeConfig { samples: a.samples, kernel_width: a.kernel_width, ridge: a.ridge, k: a.top_k, seed: a.seed };
            let e = lime_explain(&im, target, &cfg)?;
            lime_outline(&img, &spmap, &e.coefficients, a.top_k)?.save_png(a.outdir.join("overlay_lime.png"))?;
            println!("lime: {} segments, fidelity R² {:.4}, top segments {:?}", spmap.count(), e.fidelity_r2, e.top_k);
            lime_json(&e, &rc)
        }
        Method::Shap => {
            let m = spmap.count();
            let shap_mode = if m <= EXACT_MAX_SEGMENTS {
                ShapMode::Exact
            } else {
                ShapMode::Sampled { coalitions: a.coalitions, seed: a.seed }
            };
            let e = shap_explain(&im, shap_mode)?;
            for (k, class) in ClassLabel::ALL.iter().enumerate() {
                shap_heat(&img, &spmap, &e.phi[k])?.save_png(a.outdir.join(format!("shap_{class}.png")))?;
            }
            println!("shap ({}): {m} segments, efficiency gap {:.2e}", e.mode_tag(), e.efficiency_gap());
            let mut doc = shap_json(&e, &rc);
            doc["target_class"] = json!(target_name);
            doc
        }
    };
    doc["predicted_class"] = json!(predicted_name);
    doc["probabilities"] = json!(probs);
    doc["segment_labels"] = json!(spmap.labels());
    let name = match a.method {
        Method::Lime => "explain_lime.json",
        Method::Shap => "explain_shap.json",
    };
    write_json(&a.outdir.join(name), &doc)?;
    println!("predicted {predicted_name} ({:.4}); explained {target_name}", probs[predicted]);
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let resized = imaging::decode_and_resize(&a.image, a.size)?;
    std::fs::create_dir_all(&a.outdir).with_context(|| format!("creating {}", a.outdir.display()))?;
    let out = |name: &str| -> PathBuf { a.outdir.join(name) };
    resized.save_png(out("resized.png"))?;
    let gray = imaging::to_grayscale(&resized)?;
    gray.save_png(out("gray.png"))?;
    let edges = imaging::detect_edges(&resized, &CannyConfig { sigma: a.sigma, low: a.low, high: a.high })?;
    edges.to_image().save_png(out("edges.png"))?;
    let grain_pixels = match imaging::segment_grain(&resized) {
        Ok(mask) => {
            mask.to_image().save_png(out("mask.png"))?;
            imaging::apply_mask(&resized, &mask)?.save_png(out("masked.png"))?;
            Some(mask.foreground_count())
        }
        Err(Error::NoGrainFound) => {
            log::warn!("no grain found; mask stages skipped");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let doc = json!({
        "width": resized.width(),
        "height": resized.height(),
        "otsu_threshold": imaging::otsu_threshold(&gray),
        "edge_pixels": edges.count(),
        "grain_pixels": grain_pixels,
        "run_config": run_config("preprocess", &a, Value::Null),
    });
    write_json(&out("preprocess.json"), &doc)?;
    println!("edge pixels: {}; grain pixels: {}", edges.count(), grain_pixels.map_or("none".into(), |n| n.to_string()));
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let (stats, _) = scan_dataset(&a.data)?;
    for (class, n) in &stats.counts {
        println!("{class:<10} {n:>7}");
    }
    println!("{:<10} {:>7}", "total", stats.total);
    let fractions: serde_json::Map<String, Value> = stats
        .counts
        .iter()
        .map(|(c, &n)| (c.clone(), json!(n as f64 / stats.total as f64)))
        .collect();
    let doc = json!({
        "counts": stats.counts,
        "total": stats.total,
        "fractions": fractions,
        "run_config": run_config("stats", &a, Value::Null),
    });
    write_json(&a.outdir.join("stats.json"), &doc)?;
    Ok(())
}

fn sweep(a: SweepArgs, exec: Execution) -> Result<()> {
    let text = std::fs::read_to_string(&a.grid).with_context(|| format!("reading grid {}", a.grid.display()))?;
    let grid = SweepGrid::from_json(&text).map_err(|e| usage(format!("invalid grid {}: {e}", a.grid.display())))?;
    let base = training_config(
        ArchConfig::default(),
        OptimizerConfig::default(),
        (32, 1e-4, a.epochs, a.patience, a.seed),
        a.augment.enabled(),
        a.preprocess.into(),
        exec,
    );
    let points = grid.points(&base);
    if points.is_empty() {
        return Err(usage("the grid declares no values on some axis (or no axes at all)"));
    }
    for p in &points {
        p.validate()?;
    }
    let manifest = load_manifest(&a.manifest)?;
    let (train, _) = load_split(&a.data, &manifest, Split::Train, a.subset, base.preprocess, exec)?;
    let (val, _) = load_split(&a.data, &manifest, Split::Val, a.subset, base.preprocess, exec)?;
    log::info!("sweeping {} configurations on {} train / {} val images", points.len(), train.len(), val.len());

    let rows = run_sweep(&grid, &base, &train, &val);
    std::fs::create_dir_all(&a.outdir).with_context(|| format!("creating {}", a.outdir.display()))?;
    write_sweep_csv(a.outdir.join("sweep.csv"), &rows)?;
    let rc = run_config("sweep", &a, json!({ "grid": grid, "base": base, "runs": rows.len() }));
    write_json(&a.outdir.join("run_config.json"), &rc)?;

    println!("{:>4} {:>8} {:>6} {:>8} {:>8} {:>6} {:>8}  status", "run", "lr", "batch", "filters", "dropout", "dense", "val_acc");
    for r in &rows {
        let acc = r.val_acc.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>4} {:>8} {:>6} {:>8} {:>8} {:>6} {:>8}  {}",
            r.run, r.lr, r.batch, r.filters, r.dropout, r.dense_layers, acc, r.status
        );
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    if a.per_class == 0 || a.size < 8 {
        return Err(usage("--per-class must be positive and --size at least 8"));
    }
    grainxai::synth::write_corpus(&a.outdir, a.per_class, a.size, a.seed)?;
    println!("wrote {} images per class to {}", a.per_class, a.outdir.display());
    Ok(())
}
