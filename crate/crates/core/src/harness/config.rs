//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; unknown or repeated keys are errors. List-valued keys take
//! comma-separated items.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::OptimizerKind;
use crate::error::{Error, Result};
use crate::eval::InferenceSettings;
use crate::fsutil;
use crate::loss::{LossConfig, LossMode};
use crate::quant::{BitPolicy, QuantMode, FULL_PRECISION_BITS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Seeds weight initialization and batch order.
    pub seed: u64,
    /// Seeds the synthetic dataset, shared by every run so that evaluations
    /// are comparable.
    pub data_seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub fp32_epochs: usize,
    pub fp32_lr: f64,
    pub qat_epochs: usize,
    pub qat_lr: f64,
    /// Fraction of the epochs after which the learning rate drops 10x.
    pub lr_decay_frac: f64,
    /// Learning-rate multiplier for quantizer steps.
    pub step_lr_scale: f64,
    pub bits: BitPolicy,
    pub quant_mode: QuantMode,
    pub loss: LossConfig,
    pub inference: InferenceSettings,
    /// Training images used to initialize activation steps.
    pub calibration_images: usize,
    pub out_dir: PathBuf,
    pub sweep_bits: Vec<u32>,
    pub sweep_quant_modes: Vec<QuantMode>,
    pub sweep_loss_modes: Vec<LossMode>,
    pub sweep_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_seed: 0,
            train_size: 2000,
            val_size: 500,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            fp32_epochs: 30,
            fp32_lr: 1e-3,
            qat_epochs: 20,
            qat_lr: 1e-4,
            lr_decay_frac: 0.8,
            step_lr_scale: 0.1,
            bits: BitPolicy::uniform(FULL_PRECISION_BITS),
            quant_mode: QuantMode::Lsq,
            loss: LossConfig::default(),
            inference: InferenceSettings::default(),
            calibration_images: 64,
            out_dir: PathBuf::from("runs/default"),
            sweep_bits: vec![FULL_PRECISION_BITS, 4, 2],
            sweep_quant_modes: vec![QuantMode::Lsq],
            sweep_loss_modes: LossMode::ALL.to_vec(),
            sweep_seeds: vec![0, 1, 2],
        }
    }
}

/// Keys excluded from the config hash: where results go and which sweep
/// they belong to do not change what a single run computes.
const UNHASHED: [&str; 5] = ["out_dir", "sweep_bits", "sweep_quant_modes", "sweep_loss_modes", "sweep_seeds"];

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    /// Every key with its value, in file order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("train_size", self.train_size.to_string()),
            ("val_size", self.val_size.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("fp32_epochs", self.fp32_epochs.to_string()),
            ("fp32_lr", self.fp32_lr.to_string()),
            ("qat_epochs", self.qat_epochs.to_string()),
            ("qat_lr", self.qat_lr.to_string()),
            ("lr_decay_frac", self.lr_decay_frac.to_string()),
            ("step_lr_scale", self.step_lr_scale.to_string()),
            ("bits", self.bits.to_string()),
            ("quant_mode", self.quant_mode.to_string()),
            ("loss_mode", self.loss.mode.to_string()),
            ("gamma", self.loss.gamma.to_string()),
            ("sigma", self.loss.sigma.to_string()),
            ("focal_gamma", self.loss.focal_gamma.to_string()),
            ("focal_alpha", self.loss.focal_alpha.to_string()),
            ("eps", self.loss.eps.to_string()),
            ("score_threshold", self.inference.score_threshold.to_string()),
            ("nms_iou", self.inference.nms_iou.to_string()),
            ("max_detections", self.inference.max_detections.to_string()),
            ("eval_batch_size", self.inference.batch_size.to_string()),
            ("calibration_images", self.calibration_images.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("sweep_bits", join(&self.sweep_bits)),
            ("sweep_quant_modes", join(&self.sweep_quant_modes)),
            ("sweep_loss_modes", join(&self.sweep_loss_modes)),
            ("sweep_seeds", join(&self.sweep_seeds)),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "train_size" => self.train_size = parse(key, v)?,
            "val_size" => self.val_size = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "fp32_epochs" => self.fp32_epochs = parse(key, v)?,
            "fp32_lr" => self.fp32_lr = parse(key, v)?,
            "qat_epochs" => self.qat_epochs = parse(key, v)?,
            "qat_lr" => self.qat_lr = parse(key, v)?,
            "lr_decay_frac" => self.lr_decay_frac = parse(key, v)?,
            "step_lr_scale" => self.step_lr_scale = parse(key, v)?,
            "bits" => self.bits = v.parse()?,
            "quant_mode" => self.quant_mode = v.parse()?,
            "loss_mode" => self.loss.mode = v.parse()?,
            "gamma" => self.loss.gamma = parse(key, v)?,
            "sigma" => self.loss.sigma = parse(key, v)?,
            "focal_gamma" => self.loss.focal_gamma = parse(key, v)?,
            "focal_alpha" => self.loss.focal_alpha = parse(key, v)?,
            "eps" => self.loss.eps = parse(key, v)?,
            "score_threshold" => self.inference.score_threshold = parse(key, v)?,
            "nms_iou" => self.inference.nms_iou = parse(key, v)?,
            "max_detections" => self.inference.max_detections = parse(key, v)?,
            "eval_batch_size" => self.inference.batch_size = parse(key, v)?,
            "calibration_images" => self.calibration_images = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "sweep_bits" => self.sweep_bits = parse_list(key, v)?,
            "sweep_quant_modes" => self.sweep_quant_modes = parse_list(key, v)?,
            "sweep_loss_modes" => self.sweep_loss_modes = parse_list(key, v)?,
            "sweep_seeds" => self.sweep_seeds = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            cfg.set(k, v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&fsutil::read_to_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The config in its own file format; [`RunConfig::parse_str`] reads it
    /// back unchanged.
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.train_size == 0 || self.val_size == 0 {
            return fail("dataset sizes must be positive".into());
        }
        if self.batch_size == 0 || self.inference.batch_size == 0 {
            return fail("batch sizes must be positive".into());
        }
        for (name, lr) in [("fp32_lr", self.fp32_lr), ("qat_lr", self.qat_lr), ("step_lr_scale", self.step_lr_scale)] {
            if !(lr.is_finite() && lr > 0.0) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..=1.0).contains(&self.lr_decay_frac) {
            return fail(format!("lr_decay_frac {} outside [0, 1]", self.lr_decay_frac));
        }
        if self.calibration_images == 0 {
            return fail("calibration_images must be positive".into());
        }
        let inf = &self.inference;
        if !(0.0..1.0).contains(&inf.score_threshold) || !(0.0..=1.0).contains(&inf.nms_iou) || inf.max_detections == 0 {
            return fail(format!("invalid inference settings {inf:?}"));
        }
        self.loss.validate()?;
        BitPolicy::check(&self.bits)?;
        for b in &self.sweep_bits {
            BitPolicy::check(&BitPolicy::uniform(*b))?;
        }
        Ok(())
    }

    /// Hex SHA-256 over every key that affects a single run's results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if !UNHASHED.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
