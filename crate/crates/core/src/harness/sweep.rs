//! Grids of runs over bit width, quantizer mode, loss mode and seed.
//!
//! Full-precision cells do not depend on the quantizer or loss mode, so each
//! seed gets exactly one of them; it is also the starting point of every QAT
//! cell with that seed.

use std::path::Path;

use super::config::RunConfig;
use super::run::{fp32_config, train_fp32, train_qat, write_run, RunKind, RunOutput, RunRecord, Splits};
use crate::error::{Error, Result};
use crate::eval::harmony::{GAP_BINS, IOU_INTERVALS};
use crate::eval::io::csv_string;
use crate::fsutil;
use crate::loss::LossMode;
use crate::parallel::{map_indexed, Exec};
use crate::quant::{BitPolicy, QuantMode, FULL_PRECISION_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepCell {
    pub seed: u64,
    pub bits: u32,
    pub quant_mode: QuantMode,
    pub loss_mode: LossMode,
}

impl SweepCell {
    pub fn fp32(seed: u64) -> Self {
        SweepCell {
            seed,
            bits: FULL_PRECISION_BITS,
            quant_mode: QuantMode::Lsq,
            loss_mode: LossMode::Baseline,
        }
    }

    pub fn qat(seed: u64, bits: u32, quant_mode: QuantMode, loss_mode: LossMode) -> Self {
        SweepCell {
            seed,
            bits,
            quant_mode,
            loss_mode,
        }
    }

    pub fn is_fp32(&self) -> bool {
        self.bits == FULL_PRECISION_BITS
    }

    /// The single-run config of this cell.
    pub fn config(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.seed = self.seed;
        c.bits = BitPolicy::uniform(self.bits);
        c.quant_mode = self.quant_mode;
        c.loss.mode = self.loss_mode;
        if self.is_fp32() {
            c = fp32_config(&c);
        }
        c
    }
}

/// Cells spanned by the sweep axes of `base`, seed-major.
pub fn sweep_cells(base: &RunConfig) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for &seed in &base.sweep_seeds {
        for &bits in &base.sweep_bits {
            if bits == FULL_PRECISION_BITS {
                let c = SweepCell::fp32(seed);
                if !cells.contains(&c) {
                    cells.push(c);
                }
                continue;
            }
            for &qm in &base.sweep_quant_modes {
                for &lm in &base.sweep_loss_modes {
                    cells.push(SweepCell::qat(seed, bits, qm, lm));
                }
            }
        }
    }
    cells
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub bits: String,
    /// Empty for full-precision runs.
    pub quant_mode: String,
    pub loss_mode: LossMode,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub tp_count: usize,
    pub mean_gap: Option<f64>,
    pub gap_proportions: Option<[f64; GAP_BINS]>,
    pub iou_interval_counts: [usize; IOU_INTERVALS],
    pub step_collapses: usize,
}

impl SweepRow {
    pub fn from_record(r: &RunRecord) -> Self {
        let h = &r.evaluation.harmony;
        SweepRow {
            name: r.name.clone(),
            config_hash: r.config_hash.clone(),
            seed: r.seed,
            bits: r.bits.clone(),
            quant_mode: r.quant_mode.map(|q| q.to_string()).unwrap_or_default(),
            loss_mode: r.loss_mode,
            map: r.evaluation.ap.map,
            ap50: r.evaluation.ap.ap50,
            ap75: r.evaluation.ap.ap75,
            tp_count: h.tp_count,
            mean_gap: h.mean_gap,
            gap_proportions: h.gap_proportions,
            iou_interval_counts: h.iou_interval_counts,
            step_collapses: r.step_collapses,
        }
    }
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = [
        "name", "config_hash", "seed", "bits", "quant_mode", "loss_mode", "map", "ap50", "ap75", "tp_count", "mean_gap",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..GAP_BINS).map(|i| format!("gap_{i}")));
    h.extend((0..IOU_INTERVALS).map(|i| format!("iou_{}", i + 5)));
    h.push("step_collapses".into());
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One header row plus one row per record. Floats use the shortest
/// representation that reads back to the same value.
pub fn table_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header())?;
    for r in rows {
        let mut rec = vec![
            r.name.clone(),
            r.config_hash.clone(),
            r.seed.to_string(),
            r.bits.clone(),
            r.quant_mode.clone(),
            r.loss_mode.to_string(),
            r.map.to_string(),
            r.ap50.to_string(),
            r.ap75.to_string(),
            r.tp_count.to_string(),
            opt(r.mean_gap),
        ];
        rec.extend((0..GAP_BINS).map(|i| opt(r.gap_proportions.map(|g| g[i]))));
        rec.extend(r.iou_interval_counts.iter().map(ToString::to_string));
        rec.push(r.step_collapses.to_string());
        w.write_record(rec)?;
    }
    csv_string(w)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let s = rec.get(i).unwrap_or("");
    s.parse()
        .map_err(|_| Error::Format(format!("row {line}, column {i}: cannot parse '{s}'")))
}

fn opt_field(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<f64>> {
    match rec.get(i) {
        Some("") | None => Ok(None),
        Some(_) => field(rec, i, line).map(Some),
    }
}

/// Inverse of [`table_csv`].
pub fn parse_table_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header() {
        return Err(Error::Format("unexpected sweep table header".into()));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let g0 = 11;
        let i0 = g0 + GAP_BINS;
        let gaps: Vec<Option<f64>> = (0..GAP_BINS).map(|i| opt_field(&rec, g0 + i, line)).collect::<Result<_>>()?;
        let gap_proportions = if gaps.iter().all(Option::is_some) {
            Some(std::array::from_fn(|i| gaps[i].expect("checked")))
        } else if gaps.iter().all(Option::is_none) {
            None
        } else {
            return Err(Error::Format(format!("row {line}: partial gap proportions")));
        };
        let counts: Vec<usize> = (0..IOU_INTERVALS).map(|i| field(&rec, i0 + i, line)).collect::<Result<_>>()?;
        rows.push(SweepRow {
            name: field(&rec, 0, line)?,
            config_hash: field(&rec, 1, line)?,
            seed: field(&rec, 2, line)?,
            bits: field(&rec, 3, line)?,
            quant_mode: field(&rec, 4, line)?,
            loss_mode: field(&rec, 5, line)?,
            map: field(&rec, 6, line)?,
            ap50: field(&rec, 7, line)?,
            ap75: field(&rec, 8, line)?,
            tp_count: field(&rec, 9, line)?,
            mean_gap: opt_field(&rec, 10, line)?,
            gap_proportions,
            iou_interval_counts: std::array::from_fn(|i| counts[i]),
            step_collapses: field(&rec, i0 + IOU_INTERVALS, line)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: SweepCell,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Successful cells, in cell order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn rows(&self) -> Vec<SweepRow> {
        self.records.iter().map(SweepRow::from_record).collect()
    }

    pub fn record(&self, cell: &SweepCell, base: &RunConfig) -> Option<&RunRecord> {
        let hash = cell.config(base).hash();
        let kind = if cell.is_fp32() { RunKind::Fp32 } else { RunKind::Qat };
        self.records.iter().find(|r| r.config_hash == hash && r.kind == kind)
    }
}

fn persist(out_dir: Option<&Path>, out: &RunOutput) -> Result<()> {
    match out_dir {
        Some(d) => write_run(&d.join("runs").join(&out.record.name), out),
        None => Ok(()),
    }
}

/// Runs `cells`. Each seed's full-precision model is trained once (even if
/// its cell is not listed) and every QAT cell fine-tunes from it. Independent
/// runs execute under `exec`; a failed cell is reported and the rest go on.
/// With `out_dir`, each run is written to `out_dir/runs/<name>`.
pub fn run_cells(base: &RunConfig, cells: &[SweepCell], exec: Exec, out_dir: Option<&Path>) -> Result<SweepOutcome> {
    base.validate()?;
    let splits = Splits::generate(base)?;
    let mut seeds: Vec<u64> = cells.iter().map(|c| c.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let pretrained = map_indexed(exec, seeds.len(), |i| {
        let cfg = SweepCell::fp32(seeds[i]).config(base);
        let out = train_fp32(&cfg, &splits)?;
        persist(out_dir, &out)?;
        Ok::<_, Error>(out)
    });
    let by_seed = |seed: u64| &pretrained[seeds.binary_search(&seed).expect("seed listed")];

    let qat_cells: Vec<&SweepCell> = cells.iter().filter(|c| !c.is_fp32()).collect();
    let qat = map_indexed(exec, qat_cells.len(), |i| {
        let cell = qat_cells[i];
        let init = by_seed(cell.seed)
            .as_ref()
            .map_err(|e| Error::Invalid(format!("full-precision run for seed {} failed: {e}", cell.seed)))?;
        let out = train_qat(&cell.config(base), &init.net, &splits)?;
        persist(out_dir, &out)?;
        Ok::<_, Error>(out.record)
    });

    let mut qat_iter = qat.into_iter();
    let mut outcome = SweepOutcome {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for cell in cells {
        let result = if cell.is_fp32() {
            by_seed(cell.seed).as_ref().map(|o| o.record.clone()).map_err(ToString::to_string)
        } else {
            qat_iter.next().expect("one result per QAT cell").map_err(|e| e.to_string())
        };
        match result {
            Ok(r) => outcome.records.push(r),
            Err(error) => {
                log::error!("cell {cell:?} failed: {error}");
                outcome.failures.push(CellFailure { cell: *cell, error });
            }
        }
    }
    Ok(outcome)
}

/// Runs the sweep described by `base`'s axes and writes `sweep.csv` (plus
/// `failures.csv` when any cell failed) into `base.out_dir`.
pub fn sweep(base: &RunConfig, exec: Exec) -> Result<SweepOutcome> {
    let cells = sweep_cells(base);
    if cells.is_empty() {
        return Err(Error::Config("sweep axes span no cells".into()));
    }
    let outcome = run_cells(base, &cells, exec, Some(&base.out_dir))?;
    fsutil::write_atomic(&base.out_dir.join("sweep.csv"), table_csv(&outcome.rows())?.as_bytes())?;
    if !outcome.failures.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["seed", "bits", "quant_mode", "loss_mode", "error"])?;
        for f in &outcome.failures {
            w.write_record([
                f.cell.seed.to_string(),
                f.cell.bits.to_string(),
                f.cell.quant_mode.to_string(),
                f.cell.loss_mode.to_string(),
                f.error.clone(),
            ])?;
        }
        fsutil::write_atomic(&base.out_dir.join("failures.csv"), csv_string(w)?.as_bytes())?;
    }
    Ok(outcome)
}
