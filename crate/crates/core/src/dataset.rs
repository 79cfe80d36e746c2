//! Class-per-folder corpus ingestion, seeded stratified splits, and batching.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{self, RasterImage, Transform};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, shuffle, SplitMix64};
use crate::tensor::Tensor;
use crate::{IMAGE_CHANNELS, IMAGE_SIZE, NUM_CLASSES};

/// Grain variety. Indices follow alphabetical order of the names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Arborio,
    Basmati,
    Ipsala,
    Jasmine,
    Karacadag,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] =
        [Self::Arborio, Self::Basmati, Self::Ipsala, Self::Jasmine, Self::Karacadag];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Arborio => "Arborio",
            Self::Basmati => "Basmati",
            Self::Ipsala => "Ipsala",
            Self::Jasmine => "Jasmine",
            Self::Karacadag => "Karacadag",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|c| c.name()).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownClass { name: s.to_string(), valid: Self::names().join(", ") })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}` (train|val|test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// An image file found during scanning; `path` is relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub path: String,
    pub label: ClassLabel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub path: String,
    pub label: ClassLabel,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
}

impl DatasetStats {
    pub fn from_samples(samples: &[Sample]) -> Self {
        let mut counts: BTreeMap<String, usize> = ClassLabel::ALL.iter().map(|c| (c.name().to_string(), 0)).collect();
        for s in samples {
            *counts.get_mut(s.label.name()).expect("known class") += 1;
        }
        Self { total: counts.values().sum(), counts }
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "jpg" | "jpeg" | "png"))
        .unwrap_or(false)
}

/// Enumerates `root/<Class>/*.{jpg,jpeg,png}` in sorted filename order.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<(DatasetStats, Vec<Sample>)> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidArgument(format!("dataset root {} is not a directory", root.display())));
    }
    let mut samples = Vec::new();
    for class in ClassLabel::ALL {
        let dir = root.join(class.name());
        if !dir.is_dir() {
            return Err(Error::MissingClass { class: class.name().to_string(), root: root.to_path_buf() });
        }
        let mut names: Vec<String> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
            .collect();
        if names.is_empty() {
            return Err(Error::EmptyClass(class.name().to_string()));
        }
        names.sort();
        samples.extend(names.into_iter().map(|n| Sample { path: format!("{}/{n}", class.name()), label: class }));
    }
    Ok((DatasetStats::from_samples(&samples), samples))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl ClassSplit {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Seeded per-class assignment of samples to train/val/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub classes: BTreeMap<String, ClassSplit>,
    pub fingerprint: BTreeMap<String, usize>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

pub fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Per class: Fisher–Yates shuffle with a class-specific stream of `seed`,
/// then cut into train/val/test by [`apportion`].
pub fn stratified_split(samples: &[Sample], seed: u64, ratios: [f64; 3]) -> Result<SplitManifest> {
    validate_ratios(ratios)?;
    let mut classes = BTreeMap::new();
    let mut fingerprint = BTreeMap::new();
    for class in ClassLabel::ALL {
        let mut files: Vec<String> = samples.iter().filter(|s| s.label == class).map(|s| s.path.clone()).collect();
        let n = files.len();
        if n < Split::ALL.len() {
            return Err(Error::TooFewSamples { class: class.name().to_string(), count: n, splits: Split::ALL.len() });
        }
        let mut rng = SplitMix64::new(derive_seed(seed, class.index() as u64));
        shuffle(&mut files, &mut rng);
        let [n_train, n_val, _] = apportion(n, ratios);
        let test = files.split_off(n_train + n_val);
        let val = files.split_off(n_train);
        classes.insert(class.name().to_string(), ClassSplit { train: files, val, test });
        fingerprint.insert(class.name().to_string(), n);
    }
    Ok(SplitManifest { seed, ratios, classes, fingerprint })
}

/// Splits `n` into three counts summing to `n`, each within one of
/// `n·ratio`: floors first, leftovers to the largest fractional parts
/// (earlier split wins ties).
pub fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quota = ratios.map(|r| n as f64 * r);
    let mut counts = quota.map(|q| (q + 1e-9).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quota[a] - counts[a] as f64;
        let fb = quota[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut left = n.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

impl SplitManifest {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        validate_ratios(m.ratios)?;
        for class in ClassLabel::ALL {
            if !m.classes.contains_key(class.name()) {
                return Err(Error::InvalidArgument(format!("manifest lacks class `{class}`")));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn class_split(&self, class: ClassLabel) -> &ClassSplit {
        &self.classes[class.name()]
    }

    /// Records of one split in manifest order (class-major).
    pub fn records(&self, split: Split) -> Vec<SampleRecord> {
        ClassLabel::ALL
            .iter()
            .flat_map(|&c| {
                self.class_split(c).get(split).iter().map(move |p| SampleRecord { path: p.clone(), label: c, split })
            })
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.classes.values().map(|cs| cs.get(split).len()).sum()
    }

    /// Caps every class's list for `split` at its first `max_per_class` entries.
    pub fn truncated(&self, split: Split, max_per_class: usize) -> Self {
        let mut out = self.clone();
        for cs in out.classes.values_mut() {
            cs.get_mut(split).truncate(max_per_class);
        }
        out
    }
}

/// Input variant fed to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    /// Resized RGB.
    #[default]
    Raw,
    /// Resized RGB with the background zeroed by the grain mask.
    Mask,
}

impl FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Self::Raw),
            "mask" => Ok(Self::Mask),
            other => Err(Error::InvalidArgument(format!("unknown preprocess mode `{other}` (raw|mask)"))),
        }
    }
}

/// Decodes one file into the 8-bit network input for the given mode.
pub fn preprocess_file(path: &Path, mode: PreprocessMode) -> Result<RasterImage> {
    let img = imaging::decode_and_resize(path, IMAGE_SIZE)?;
    preprocess_image(img, mode)
}

pub fn preprocess_image(img: RasterImage, mode: PreprocessMode) -> Result<RasterImage> {
    match mode {
        PreprocessMode::Raw => Ok(img),
        PreprocessMode::Mask => {
            let mask = imaging::segment_grain(&img)?;
            imaging::apply_mask(&img, &mask)
        }
    }
}

/// Preprocessed 50×50×3 images held as raw bytes, with their labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledImages {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<ClassLabel>,
    pub paths: Vec<String>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, img: &RasterImage, label: ClassLabel, path: impl Into<String>) {
        assert_eq!(img.pixels().len(), IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS, "expected a 50×50×3 image");
        self.images.push(img.to_u8());
        self.labels.push(label);
        self.paths.push(path.into());
    }

    pub fn raster(&self, i: usize) -> RasterImage {
        RasterImage::from_u8(IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS, &self.images[i]).expect("stored with fixed size")
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: Vec<(String, String)>,
}

/// Decodes and preprocesses every record. Failures are logged and reported,
/// never fatal.
pub fn load_records(
    root: impl AsRef<Path>,
    records: &[SampleRecord],
    mode: PreprocessMode,
    exec: Execution,
) -> (LabeledImages, LoadReport) {
    let root: PathBuf = root.as_ref().to_path_buf();
    let results = par::map_slice(exec, records, |r| preprocess_file(&root.join(&r.path), mode));
    let mut data = LabeledImages::default();
    let mut report = LoadReport::default();
    for (rec, res) in records.iter().zip(results) {
        match res {
            Ok(img) => data.push(&img, rec.label, rec.path.clone()),
            Err(e) => {
                log::warn!("skipping {}: {e}", rec.path);
                report.skipped.push((rec.path.clone(), e.to_string()));
            }
        }
    }
    report.loaded = data.len();
    (data, report)
}

/// One network-ready batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `B×50×50×3`, normalized to `[0,1]`.
    pub images: Tensor<f32>,
    /// `B×5` one-hot targets.
    pub onehot: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Positions of the batch members in the source collection.
    pub indices: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// `None` keeps source order.
    pub shuffle_seed: Option<u64>,
    pub augment: bool,
}

/// Random dihedral augmentation: one of {none, 90°, 180°}, then horizontal
/// and vertical flips with probability ½ each.
pub fn random_augmentation(img: &RasterImage, rng: &mut SplitMix64) -> RasterImage {
    let rot = [Transform::Identity, Transform::Rot90, Transform::Rot180][rng.below(3) as usize];
    let mut out = imaging::augment(img, rot);
    if rng.coin() {
        out = imaging::augment(&out, Transform::FlipH);
    }
    if rng.coin() {
        out = imaging::augment(&out, Transform::FlipV);
    }
    out
}

/// Iterates `ceil(N/B)` batches covering every sample exactly once.
pub struct BatchIter<'a> {
    data: &'a LabeledImages,
    order: Vec<usize>,
    pos: usize,
    opts: BatchOptions,
    aug_seed: u64,
}

impl<'a> BatchIter<'a> {
    pub fn new(data: &'a LabeledImages, opts: BatchOptions) -> Result<Self> {
        if opts.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        if let Some(seed) = opts.shuffle_seed {
            shuffle(&mut order, &mut SplitMix64::new(seed));
        }
        let aug_seed = derive_seed(opts.shuffle_seed.unwrap_or(0), 0xA06);
        Ok(Self { data, order, pos: 0, opts, aug_seed })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.opts.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.opts.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let b = indices.len();
        let per = IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS;
        let mut pixels = Vec::with_capacity(b * per);
        let mut onehot = vec![0.0f32; b * NUM_CLASSES];
        let mut labels = Vec::with_capacity(b);
        for (row, &i) in indices.iter().enumerate() {
            if self.opts.augment {
                let mut rng = SplitMix64::new(derive_seed(self.aug_seed, i as u64));
                let img = random_augmentation(&self.data.raster(i), &mut rng);
                pixels.extend(img.pixels().iter().map(|&v| v / 255.0));
            } else {
                pixels.extend(self.data.images[i].iter().map(|&v| v as f32 / 255.0));
            }
            let label = self.data.labels[i].index();
            onehot[row * NUM_CLASSES + label] = 1.0;
            labels.push(label);
        }
        Some(Batch {
            images: Tensor::new(vec![b, IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS], pixels).expect("sized"),
            onehot: Tensor::new(vec![b, NUM_CLASSES], onehot).expect("sized"),
            labels,
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_samples(per_class: usize) -> Vec<Sample> {
        ClassLabel::ALL
            .iter()
            .flat_map(|&c| (0..per_class).map(move |i| Sample { path: format!("{c}/{c} ({i}).jpg"), label: c }))
            .collect()
    }

    #[test]
    fn class_order_and_parsing() {
        assert_eq!(ClassLabel::names(), ["Arborio", "Basmati", "Ipsala", "Jasmine", "Karacadag"]);
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassLabel::from_index(i), Some(*c));
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), *c);
        }
        assert!("Kainat".parse::<ClassLabel>().is_err());
    }

    #[test]
    fn small_split_counts() {
        let m = stratified_split(&fake_samples(10), 1, DEFAULT_RATIOS).unwrap();
        for c in ClassLabel::ALL {
            let cs = m.class_split(c);
            assert_eq!((cs.train.len(), cs.val.len(), cs.test.len()), (8, 1, 1));
        }
        let m = stratified_split(&fake_samples(20), 1, [0.5, 0.25, 0.25]).unwrap();
        assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (50, 25, 25));
    }

    #[test]
    fn split_rejections() {
        assert!(stratified_split(&fake_samples(10), 1, [0.8, 0.05, 0.05]).is_err());
        assert!(stratified_split(&fake_samples(10), 1, [1.0, 0.0, 0.0]).is_err());
        assert!(matches!(
            stratified_split(&fake_samples(2), 1, DEFAULT_RATIOS),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn manifest_json_round_trip_and_key_order() {
        let m = stratified_split(&fake_samples(10), 9, DEFAULT_RATIOS).unwrap();
        let json = m.to_json().unwrap();
        let keys: Vec<usize> = ["\"seed\"", "\"ratios\"", "\"classes\"", "\"fingerprint\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(SplitManifest::from_json(&json).unwrap(), m);
    }

    fn toy_images(n: usize) -> LabeledImages {
        let mut data = LabeledImages::default();
        for i in 0..n {
            let img = RasterImage::filled(IMAGE_SIZE, IMAGE_SIZE, 3, (i % 256) as f32);
            data.push(&img, ClassLabel::ALL[i % 5], format!("{i}"));
        }
        data
    }

    #[test]
    fn batches_cover_everything_once() {
        let data = toy_images(100);
        let it = BatchIter::new(&data, BatchOptions { batch_size: 32, shuffle_seed: Some(4), augment: true }).unwrap();
        assert_eq!(it.num_batches(), 4);
        let batches: Vec<Batch> = it.collect();
        let sizes: Vec<usize> = batches.iter().map(|b| b.labels.len()).collect();
        assert_eq!(sizes, [32, 32, 32, 4]);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn unshuffled_unaugmented_batches_are_exact() {
        let data = toy_images(7);
        let opts = BatchOptions { batch_size: 3, shuffle_seed: None, augment: false };
        let batches: Vec<Batch> = BatchIter::new(&data, opts).unwrap().collect();
        let order: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(order, (0..7).collect::<Vec<_>>());
        let first = &batches[0];
        for (row, &i) in first.indices.iter().enumerate() {
            let expect: Vec<f32> = data.images[i].iter().map(|&v| v as f32 / 255.0).collect();
            assert_eq!(first.images.row(row), expect.as_slice());
            assert_eq!(first.onehot.row(row)[data.labels[i].index()], 1.0);
        }
        assert!(BatchIter::new(&data, BatchOptions { batch_size: 0, ..opts }).is_err());
    }
}
