//! Plot-ready CSV data from run records. Nothing here renders.

use std::collections::BTreeMap;
use std::path::Path;

use super::run::RunRecord;
use super::sweep::SweepRow;
use crate::error::{Error, Result};
use crate::eval::harmony::{GAP_BINS, IOU_INTERVALS};
use crate::eval::io::csv_string;
use crate::fsutil;

pub const TP_SCATTER_FILE: &str = "tp_scatter.csv";
pub const GAP_HIST_FILE: &str = "gap_hist.csv";
pub const IOU_INTERVALS_FILE: &str = "iou_intervals.csv";
pub const ABLATION_FILE: &str = "ablation_table.csv";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `run, p, u`: one row per true positive of each run.
pub fn tp_scatter_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "p", "u"])?;
    for r in records {
        for s in &r.evaluation.harmony.joint_samples {
            w.write_record([r.name.clone(), s.p.to_string(), s.u.to_string()])?;
        }
    }
    csv_string(w)
}

/// `run, bin, lower, upper, count, proportion` over `|p - u|`.
pub fn gap_hist_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "bin", "lower", "upper", "count", "proportion"])?;
    for r in records {
        let h = &r.evaluation.harmony;
        for i in 0..GAP_BINS {
            w.write_record([
                r.name.clone(),
                i.to_string(),
                (i as f64 / 10.0).to_string(),
                ((i + 1) as f64 / 10.0).to_string(),
                h.gap_counts[i].to_string(),
                opt(h.gap_proportions.map(|p| p[i])),
            ])?;
        }
    }
    csv_string(w)
}

/// `run, interval, lower, upper, count, proportion` over TP IoU.
pub fn iou_intervals_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "interval", "lower", "upper", "count", "proportion"])?;
    for r in records {
        let h = &r.evaluation.harmony;
        for i in 0..IOU_INTERVALS {
            w.write_record([
                r.name.clone(),
                i.to_string(),
                ((i + 5) as f64 / 10.0).to_string(),
                ((i + 6) as f64 / 10.0).to_string(),
                h.iou_interval_counts[i].to_string(),
                opt(h.iou_interval_proportions.map(|p| p[i])),
            ])?;
        }
    }
    csv_string(w)
}

/// Seed means per `(bits, quant_mode, loss_mode)`. `gap_0` averages only
/// over runs that have true positives.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub bits: String,
    pub quant_mode: String,
    pub loss_mode: String,
    pub runs: usize,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub gap_0: Option<f64>,
    pub mean_gap: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn ablation_rows(records: &[RunRecord]) -> Vec<AblationRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<SweepRow>> = BTreeMap::new();
    for r in records {
        let row = SweepRow::from_record(r);
        groups
            .entry((row.bits.clone(), row.quant_mode.clone(), row.loss_mode.to_string()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((bits, quant_mode, loss_mode), rows)| {
            let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
            let gap0: Vec<f64> = rows.iter().filter_map(|r| r.gap_proportions.map(|g| g[0])).collect();
            let mean_gap: Vec<f64> = rows.iter().filter_map(|r| r.mean_gap).collect();
            AblationRow {
                bits,
                quant_mode,
                loss_mode,
                runs: rows.len(),
                map: mean(&col(|r| r.map)).expect("groups are nonempty"),
                ap50: mean(&col(|r| r.ap50)).expect("groups are nonempty"),
                ap75: mean(&col(|r| r.ap75)).expect("groups are nonempty"),
                gap_0: mean(&gap0),
                mean_gap: mean(&mean_gap),
            }
        })
        .collect()
}

pub fn ablation_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bits", "quant_mode", "loss_mode", "runs", "map", "ap50", "ap75", "gap_0", "mean_gap"])?;
    for r in ablation_rows(records) {
        w.write_record([
            r.bits,
            r.quant_mode,
            r.loss_mode,
            r.runs.to_string(),
            r.map.to_string(),
            r.ap50.to_string(),
            r.ap75.to_string(),
            opt(r.gap_0),
            opt(r.mean_gap),
        ])?;
    }
    csv_string(w)
}

/// Writes the four plot tables into `out_dir`. Records are exported in the
/// order given.
pub fn export_plot_data(records: &[RunRecord], out_dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Invalid("no run records to export".into()));
    }
    fsutil::write_atomic(&out_dir.join(TP_SCATTER_FILE), tp_scatter_csv(records)?.as_bytes())?;
    fsutil::write_atomic(&out_dir.join(GAP_HIST_FILE), gap_hist_csv(records)?.as_bytes())?;
    fsutil::write_atomic(&out_dir.join(IOU_INTERVALS_FILE), iou_intervals_csv(records)?.as_bytes())?;
    fsutil::write_atomic(&out_dir.join(ABLATION_FILE), ablation_csv(records)?.as_bytes())
}
