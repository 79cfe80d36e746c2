//! Confusion matrix, per-class precision/recall/F1 and one-vs-rest ROC.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::dataset::{ClassLabel, LabeledImages};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::par::Execution;
use crate::training::{argmax, predict_probs};
use crate::NUM_CLASSES;

/// Row = true class, column = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

fn default_names(k: usize) -> Vec<String> {
    if k == NUM_CLASSES {
        ClassLabel::names().into_iter().map(String::from).collect()
    } else {
        (0..k).map(|i| i.to_string()).collect()
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidArgument(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        for label in [t, p] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, classes: k });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { class_names: default_names(k), counts })
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }

    /// Header row of class names, then one row of counts per true class.
    pub fn to_csv(&self) -> String {
        let mut s = self.class_names.join(",");
        s.push('\n');
        for row in &self.counts {
            s.push_str(&row.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// `(num/den, undefined)`; a zero denominator yields `0` and raises the flag.
fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when a denominator was zero and the metric was reported as 0.
    pub zero_division: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub zero_division: bool,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> ClassReport {
    let k = cm.classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let (precision, p_undef) = ratio(cm.counts[c][c], cm.col_sum(c));
            let (recall, r_undef) = ratio(cm.counts[c][c], cm.row_sum(c));
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support: cm.row_sum(c), zero_division: p_undef || r_undef }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k.max(1) as f64;
    ClassReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: cm.accuracy(),
        zero_division: per_class.iter().any(|m| m.zero_division),
        per_class,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called positive; the first point uses `+∞`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub class: usize,
    pub points: Vec<RocPoint>,
    /// `None` when the ground truth has no positives or no negatives.
    pub auc: Option<f64>,
}

/// One-vs-rest ROC for `class`. Equal scores form a single threshold step,
/// so ties contribute a diagonal segment; AUC is the trapezoid integral.
pub fn roc_curve(scores: &[f64], labels: &[usize], class: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l == class).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Ok(RocCurve { class, points: Vec::new(), auc: None });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == class {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint { threshold: t, fpr: fp / neg, tpr: tp / pos });
    }
    let auc = points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    Ok(RocCurve { class, points, auc: Some(auc) })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let t = if p.threshold.is_infinite() { "inf".to_string() } else { format!("{}", p.threshold) };
            s.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
        }
        s
    }
}

/// Everything produced by one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub report: ClassReport,
    pub roc: Vec<RocCurve>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

/// Scores every image once and builds the full report. `n_skipped` counts
/// samples that failed to decode upstream.
pub fn evaluate(
    model: &ModelParams<f32>,
    data: &LabeledImages,
    n_skipped: usize,
    batch_size: usize,
    exec: Execution,
) -> Result<EvaluationReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let probs = predict_probs(model, data, batch_size, exec)?;
    report_from_probs(&probs, &data.label_indices(), n_skipped)
}

pub fn report_from_probs(probs: &[[f32; NUM_CLASSES]], truth: &[usize], n_skipped: usize) -> Result<EvaluationReport> {
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confusion = confusion_matrix(truth, &pred, NUM_CLASSES)?;
    let report = precision_recall_f1(&confusion);
    let roc = (0..NUM_CLASSES)
        .map(|k| {
            let scores: Vec<f64> = probs.iter().map(|p| p[k] as f64).collect();
            roc_curve(&scores, truth, k)
        })
        .collect::<Result<_>>()?;
    Ok(EvaluationReport { confusion, report, roc, n_evaluated: truth.len(), n_skipped })
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

impl EvaluationReport {
    /// The `metrics.json` document; `run_config` is embedded verbatim.
    pub fn to_json(&self, run_config: &Value) -> Value {
        let mut per_class = Map::new();
        for (k, m) in self.report.per_class.iter().enumerate() {
            per_class.insert(
                self.confusion.class_names[k].clone(),
                json!({
                    "precision": round4(m.precision),
                    "recall": round4(m.recall),
                    "f1": round4(m.f1),
                    "auc": self.roc[k].auc.map(round4),
                    "support": m.support,
                    "zero_division": m.zero_division,
                }),
            );
        }
        let aucs: Vec<f64> = self.roc.iter().filter_map(|r| r.auc).collect();
        let macro_auc = (!aucs.is_empty()).then(|| round4(aucs.iter().sum::<f64>() / aucs.len() as f64));
        json!({
            "accuracy": round4(self.report.accuracy),
            "per_class": per_class,
            "macro": {
                "precision": round4(self.report.macro_precision),
                "recall": round4(self.report.macro_recall),
                "f1": round4(self.report.macro_f1),
                "auc": macro_auc,
            },
            "n_evaluated": self.n_evaluated,
            "n_skipped": self.n_skipped,
            "zero_division": self.report.zero_division,
            "auc_undefined": self.roc.iter().filter(|r| r.auc.is_none()).map(|r| self.confusion.class_names[r.class].clone()).collect::<Vec<_>>(),
            "run_config": run_config,
        })
    }

    /// Writes `metrics.json`, `confusion.csv` and `roc_<class>.csv` into `outdir`.
    pub fn write_artifacts(&self, outdir: impl AsRef<Path>, run_config: &Value) -> Result<()> {
        let outdir = outdir.as_ref();
        std::fs::create_dir_all(outdir)?;
        let mut f = std::fs::File::create(outdir.join("metrics.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.to_json(run_config))?;
        writeln!(f)?;
        std::fs::write(outdir.join("confusion.csv"), self.confusion.to_csv())?;
        for r in &self.roc {
            std::fs::write(outdir.join(format!("roc_{}.csv", self.confusion.class_names[r.class])), r.to_csv())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion_matrix(&[0, 0, 1], &[0, 1, 1], 5).unwrap();
        assert_eq!(cm.counts[0][0], 1);
        assert_eq!(cm.counts[0][1], 1);
        assert_eq!(cm.counts[1][1], 1);
        assert_eq!(cm.total(), 3);
        assert!(matches!(confusion_matrix(&[5], &[0], 5), Err(Error::LabelOutOfRange { label: 5, .. })));
        assert!(confusion_matrix(&[0, 1], &[0], 5).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let truth: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let cm = confusion_matrix(&truth, &truth, 5).unwrap();
        let r = precision_recall_f1(&cm);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
    }

    #[test]
    fn two_class_by_hand() {
        let cm = ConfusionMatrix { class_names: default_names(2), counts: vec![vec![8, 2], vec![1, 9]] };
        let r = precision_recall_f1(&cm);
        assert!((r.per_class[0].precision - 8.0 / 9.0).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.8).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 0.842_105_263_157_894_7).abs() < 1e-12);
    }

    #[test]
    fn table5_arborio_recall() {
        let mut counts = vec![vec![0u64; 5]; 5];
        counts[0][0] = 1478;
        counts[0][1] = 22;
        let cm = ConfusionMatrix { class_names: default_names(5), counts };
        let r = precision_recall_f1(&cm);
        assert_eq!(format!("{:.3}", r.per_class[0].recall), "0.985");
    }

    #[test]
    fn constant_predictor() {
        let truth: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let cm = confusion_matrix(&truth, &[0; 50], 5).unwrap();
        let r = precision_recall_f1(&cm);
        assert_eq!(r.per_class[0].recall, 1.0);
        assert!(r.per_class[1..].iter().all(|m| m.recall == 0.0 && m.zero_division));
        assert!((r.accuracy - 0.2).abs() < 1e-12);
    }

    #[test]
    fn roc_extremes_and_ties() {
        let labels = [1, 1, 0, 0];
        assert_eq!(roc_curve(&[0.9, 0.8, 0.2, 0.1], &labels, 1).unwrap().auc, Some(1.0));
        assert_eq!(roc_curve(&[0.1, 0.2, 0.8, 0.9], &labels, 1).unwrap().auc, Some(0.0));
        let tied = roc_curve(&[0.5; 4], &labels, 1).unwrap();
        assert_eq!(tied.auc, Some(0.5));
        assert_eq!(tied.points.len(), 2);
        assert_eq!(roc_curve(&[0.3, 0.4], &[0, 0], 1).unwrap().auc, None);
        let c = roc_curve(&[0.9, 0.4, 0.4, 0.1], &labels, 1).unwrap();
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        assert_eq!((c.points.last().unwrap().fpr, c.points.last().unwrap().tpr), (1.0, 1.0));
    }

    #[test]
    fn confusion_csv_layout() {
        let cm = confusion_matrix(&[0, 1], &[0, 1], 5).unwrap();
        let csv = cm.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("Arborio,Basmati,Ipsala,Jasmine,Karacadag"));
        assert_eq!(lines.next(), Some("1,0,0,0,0"));
        assert_eq!(csv.lines().count(), 6);
    }
}
