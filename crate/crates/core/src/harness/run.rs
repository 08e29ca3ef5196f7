use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::data::Dataset;
use super::train::{batch_images, fit, EpochLog, FitSettings};
use crate::detector::net::DetectorNet;
use crate::detector::weights;
use crate::error::{Error, Result};
use crate::eval::io::{ap_csv, predictions_to_json, report_csv, write_json};
use crate::eval::{detect, eval_set_id, evaluate_detections, Evaluation, ImageDetections, InferenceSettings};
use crate::fsutil;
use crate::loss::LossMode;
use crate::parallel::Exec;
use crate::quant::{apply_bit_policy, QuantMode};

/// Validation scenes use indices from here on, disjoint from training.
pub const VAL_OFFSET: u64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}

impl Splits {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        Ok(Splits {
            train: Dataset::generate(cfg.data_seed, 0, cfg.train_size)?,
            val: Dataset::generate(cfg.data_seed, VAL_OFFSET, cfg.val_size)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Fp32,
    Qat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RunKind,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub bits: String,
    pub quant_mode: Option<QuantMode>,
    pub loss_mode: LossMode,
    /// Hash of the weights QAT started from.
    pub init_weights_hash: Option<String>,
    pub weights_hash: String,
    pub parameter_count: usize,
    pub epochs: Vec<EpochLog>,
    pub step_collapses: usize,
    pub inference: InferenceSettings,
    pub eval_set_id: String,
    pub evaluation: Evaluation,
    pub wall_time_secs: f64,
}

impl RunRecord {
    /// The record with wall time zeroed, for comparing reruns.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn weights_hash(net: &DetectorNet) -> String {
    hash_bytes(&weights::to_bytes(net))
}

/// A file-name-safe run name.
pub fn run_name(cfg: &RunConfig, kind: RunKind) -> String {
    let raw = match kind {
        RunKind::Fp32 => format!("fp32-s{}", cfg.seed),
        RunKind::Qat => format!("bw{}-{}-{}-s{}", cfg.bits, cfg.quant_mode, cfg.loss.mode, cfg.seed),
    };
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Post-NMS detections on `data` and their metrics.
pub fn evaluate_net(
    net: &DetectorNet,
    data: &Dataset,
    settings: &InferenceSettings,
) -> Result<(Evaluation, Vec<ImageDetections>)> {
    let dets = detect(Exec::default(), net, &data.pixels(), data.len(), settings)?;
    let id = eval_set_id(&data.annotations())?;
    let evaluation = evaluate_detections(Exec::default(), &dets, &data.ground_truth(), &id)?;
    let preds = data
        .image_ids()
        .into_iter()
        .zip(dets)
        .map(|(image_id, detections)| ImageDetections { image_id, detections })
        .collect();
    Ok((evaluation, preds))
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: RunConfig,
    pub net: DetectorNet,
    pub record: RunRecord,
    pub predictions: Vec<ImageDetections>,
}

fn finish(
    kind: RunKind,
    cfg: &RunConfig,
    net: DetectorNet,
    epochs: Vec<EpochLog>,
    init_weights_hash: Option<String>,
    splits: &Splits,
    started: Instant,
) -> Result<RunOutput> {
    let (evaluation, predictions) = evaluate_net(&net, &splits.val, &cfg.inference)?;
    let record = RunRecord {
        kind,
        name: run_name(cfg, kind),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        bits: cfg.bits.to_string(),
        quant_mode: (kind == RunKind::Qat).then_some(cfg.quant_mode),
        loss_mode: cfg.loss.mode,
        init_weights_hash,
        weights_hash: weights_hash(&net),
        parameter_count: net.parameter_count(),
        step_collapses: epochs.iter().map(|e| e.step_collapses).sum(),
        epochs,
        inference: cfg.inference,
        eval_set_id: evaluation.harmony.eval_set_id.clone(),
        evaluation,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        config: cfg.clone(),
        net,
        record,
        predictions,
    })
}

/// The config a full-precision pretraining run actually uses: no
/// quantization and the plain detection loss.
pub fn fp32_config(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    c.bits = crate::quant::BitPolicy::uniform(crate::quant::FULL_PRECISION_BITS);
    c.loss.mode = LossMode::Baseline;
    c
}

pub fn train_fp32(cfg: &RunConfig, splits: &Splits) -> Result<RunOutput> {
    cfg.validate()?;
    if !cfg.bits.is_full_precision() || cfg.loss.mode != LossMode::Baseline {
        return Err(Error::Config(
            "full-precision training needs bits = 32 and loss_mode = baseline".into(),
        ));
    }
    let started = Instant::now();
    let mut net = DetectorNet::new(cfg.seed);
    let settings = FitSettings {
        seed: cfg.seed,
        epochs: cfg.fp32_epochs,
        lr: cfg.fp32_lr,
        lr_decay_frac: cfg.lr_decay_frac,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        step_lr_scale: cfg.step_lr_scale,
        loss: cfg.loss,
    };
    let epochs = fit(&mut net, &splits.train, &settings)?;
    finish(RunKind::Fp32, cfg, net, epochs, None, splits, started)
}

pub fn train_qat(cfg: &RunConfig, init: &DetectorNet, splits: &Splits) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.bits.is_full_precision() {
        return Err(Error::Config("QAT needs a bit width below 32".into()));
    }
    let started = Instant::now();
    let n = cfg.calibration_images.min(splits.train.len());
    let calibration = batch_images(&splits.train, &(0..n).collect::<Vec<_>>())?;
    let mut net = apply_bit_policy(init, &cfg.bits, cfg.quant_mode, &calibration)?;
    let settings = FitSettings {
        seed: cfg.seed,
        epochs: cfg.qat_epochs,
        lr: cfg.qat_lr,
        lr_decay_frac: cfg.lr_decay_frac,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        step_lr_scale: cfg.step_lr_scale,
        loss: cfg.loss,
    };
    let epochs = fit(&mut net, &splits.train, &settings)?;
    if epochs.iter().any(|e| e.step_collapses > 0) {
        log::warn!("{}: quantizer steps collapsed below the minimum and were clamped", run_name(cfg, RunKind::Qat));
    }
    finish(RunKind::Qat, cfg, net, epochs, Some(weights_hash(init)), splits, started)
}

pub const RECORD_FILE: &str = "record.json";

/// Writes the run directory. `record.json` goes last, so its presence marks
/// a complete run.
pub fn write_run(dir: &Path, out: &RunOutput) -> Result<()> {
    write_json(&out.config, &dir.join("config.json"))?;
    fsutil::write_atomic(&dir.join("config.txt"), out.config.to_text().as_bytes())?;
    weights::save(&out.net, &dir.join("weights.bin"))?;
    fsutil::write_atomic(&dir.join("predictions.json"), predictions_to_json(&out.predictions)?.as_bytes())?;
    write_evaluation(dir, &out.record.evaluation)?;
    fsutil::write_atomic(&dir.join("epochs.csv"), epochs_csv(&out.record.epochs)?.as_bytes())?;
    write_json(&out.record, &dir.join(RECORD_FILE))
}

/// `ap.csv`, `harmony.csv` and `evaluation.json`.
pub fn write_evaluation(dir: &Path, e: &Evaluation) -> Result<()> {
    fsutil::write_atomic(&dir.join("ap.csv"), ap_csv(&e.ap)?.as_bytes())?;
    fsutil::write_atomic(&dir.join("harmony.csv"), report_csv(&e.harmony)?.as_bytes())?;
    write_json(e, &dir.join("evaluation.json"))
}

pub fn epochs_csv(epochs: &[EpochLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "lr", "batches", "total", "cls", "reg", "tcorr", "hiou", "positives", "negatives", "step_collapses"])?;
    for e in epochs {
        let l = &e.loss;
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.batches.to_string(),
            l.total.to_string(),
            l.cls.to_string(),
            l.reg.to_string(),
            l.tcorr.to_string(),
            l.hiou.to_string(),
            l.positives.to_string(),
            l.negatives.to_string(),
            e.step_collapses.to_string(),
        ])?;
    }
    crate::eval::io::csv_string(w)
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    Ok(serde_json::from_str(&fsutil::read_to_string(path)?)?)
}

/// `path` itself when it is a file, otherwise every `record.json` below it,
/// ordered by run name.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut records = if path.is_file() {
        vec![load_record(path)?]
    } else {
        let mut out = Vec::new();
        for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::Invalid(format!("cannot walk {}: {e}", path.display())))?;
            if entry.file_type().is_file() && entry.file_name() == RECORD_FILE {
                out.push(load_record(entry.path())?);
            }
        }
        out
    };
    records.sort_by(|a, b| a.name.cmp(&b.name).then(a.config_hash.cmp(&b.config_hash)));
    Ok(records)
}
