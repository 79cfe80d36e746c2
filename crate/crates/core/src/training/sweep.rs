use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{fit, TrainingConfig};
use crate::dataset::LabeledImages;
use crate::error::Result;

/// Axes of a hyperparameter grid. Absent axes keep the base configuration's
/// value; the run set is the Cartesian product of the present ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<Vec<usize>>,
    /// Filters of the first convolution (later blocks double it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<Vec<f32>>,
    /// Dense layers including the output layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_layers: Option<Vec<usize>>,
}

impl SweepGrid {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// True when no axis carries any value.
    pub fn is_empty(&self) -> bool {
        self.axis_lengths().iter().all(|&n| n == 0)
    }

    fn axis_lengths(&self) -> [usize; 5] {
        [
            self.lr.as_ref().map_or(0, Vec::len),
            self.batch.as_ref().map_or(0, Vec::len),
            self.filters.as_ref().map_or(0, Vec::len),
            self.dropout.as_ref().map_or(0, Vec::len),
            self.dense_layers.as_ref().map_or(0, Vec::len),
        ]
    }

    /// Every grid point applied to `base`, in row-major order of the axes
    /// as declared (lr outermost). An axis listed with no values empties the grid.
    pub fn points(&self, base: &TrainingConfig) -> Vec<TrainingConfig> {
        let declared_but_empty = [
            self.lr.as_ref().map(Vec::len),
            self.batch.as_ref().map(Vec::len),
            self.filters.as_ref().map(Vec::len),
            self.dropout.as_ref().map(Vec::len),
            self.dense_layers.as_ref().map(Vec::len),
        ]
        .contains(&Some(0));
        if self.is_empty() || declared_but_empty {
            return Vec::new();
        }
        let mut out = vec![base.clone()];
        fn expand<V: Copy>(
            out: Vec<TrainingConfig>,
            axis: &Option<Vec<V>>,
            set: impl Fn(&mut TrainingConfig, V),
        ) -> Vec<TrainingConfig> {
            let Some(values) = axis else { return out };
            out.into_iter()
                .flat_map(|c| {
                    values.iter().map(|&v| {
                        let mut c = c.clone();
                        set(&mut c, v);
                        c
                    }).collect::<Vec<_>>()
                })
                .collect()
        }
        out = expand(out, &self.lr, |c, v| c.optimizer.learning_rate = v);
        out = expand(out, &self.batch, |c, v| c.batch_size = v);
        out = expand(out, &self.filters, |c, v| c.arch.filters = v);
        out = expand(out, &self.dropout, |c, v| c.arch.dropout = if v > 0.0 { Some(v) } else { None });
        out = expand(out, &self.dense_layers, |c, v| c.arch.dense_layers = v);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    /// Position of the grid point before ranking.
    pub run: usize,
    pub lr: f64,
    pub batch: usize,
    pub filters: usize,
    pub dropout: f32,
    pub dense_layers: usize,
    pub val_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub seconds: f64,
    /// `ok`, `diverged: …` or `failed: …`.
    pub status: String,
}

/// Fits every grid point and returns rows ranked by validation accuracy
/// (then validation loss, then run order). Failed runs rank last.
pub fn run_sweep(grid: &SweepGrid, base: &TrainingConfig, train: &LabeledImages, val: &LabeledImages) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = grid
        .points(base)
        .into_iter()
        .enumerate()
        .map(|(run, cfg)| {
            log::info!(
                "sweep run {run}: lr={} batch={} filters={} dropout={:?} dense_layers={}",
                cfg.optimizer.learning_rate,
                cfg.batch_size,
                cfg.arch.filters,
                cfg.arch.dropout,
                cfg.arch.dense_layers
            );
            let start = Instant::now();
            let mut row = SweepRow {
                run,
                lr: cfg.optimizer.learning_rate,
                batch: cfg.batch_size,
                filters: cfg.arch.filters,
                dropout: cfg.arch.dropout.unwrap_or(0.0),
                dense_layers: cfg.arch.dense_layers,
                val_acc: None,
                val_loss: None,
                best_epoch: None,
                epochs_run: 0,
                seconds: 0.0,
                status: "ok".into(),
            };
            match fit(&cfg, train, val) {
                Ok(outcome) => {
                    row.epochs_run = outcome.history.len();
                    row.best_epoch = outcome.best_epoch;
                    if let Some(best) = outcome.best_epoch.and_then(|e| outcome.history.iter().find(|r| r.epoch == e)) {
                        row.val_acc = Some(best.val_acc);
                        row.val_loss = Some(best.val_loss);
                    }
                    if let Some(d) = outcome.divergence {
                        row.status = format!("diverged: {}", d.detail);
                    }
                }
                Err(e) => row.status = format!("failed: {e}"),
            }
            row.seconds = start.elapsed().as_secs_f64();
            row
        })
        .collect();
    rows.sort_by(|a, b| {
        let ok = |r: &SweepRow| r.status == "ok";
        ok(b)
            .cmp(&ok(a))
            .then(b.val_acc.unwrap_or(-1.0).total_cmp(&a.val_acc.unwrap_or(-1.0)))
            .then(a.val_loss.unwrap_or(f64::INFINITY).total_cmp(&b.val_loss.unwrap_or(f64::INFINITY)))
            .then(a.run.cmp(&b.run))
    });
    rows
}

pub const SWEEP_CSV_HEADER: &str =
    "rank,run,lr,batch,filters,dropout,dense_layers,val_acc,val_loss,best_epoch,epochs_run,seconds,status";

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SWEEP_CSV_HEADER}")?;
    for (rank, r) in rows.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{:.3},\"{}\"",
            rank + 1,
            r.run,
            r.lr,
            r.batch,
            r.filters,
            r.dropout,
            r.dense_layers,
            opt(r.val_acc),
            opt(r.val_loss),
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            r.epochs_run,
            r.seconds,
            r.status.replace('"', "'")
        )?;
    }
    f.flush()?;
    Ok(())
}
