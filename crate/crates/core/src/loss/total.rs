use serde::{Deserialize, Serialize};

use super::harmony::{hiou_loss, tcorr_loss};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Detection loss only.
    Baseline,
    /// Detection loss plus the task-correlation term.
    Tcorr,
    /// Detection loss plus task-correlation and harmonious-IoU terms.
    Hqod,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Baseline, LossMode::Tcorr, LossMode::Hqod];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Baseline => "baseline",
            LossMode::Tcorr => "tcorr",
            LossMode::Hqod => "hqod",
        }
    }

    fn uses_tcorr(self) -> bool {
        self != LossMode::Baseline
    }

    fn uses_hiou(self) -> bool {
        self == LossMode::Hqod
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(LossMode::Baseline),
            "tcorr" => Ok(LossMode::Tcorr),
            "hqod" => Ok(LossMode::Hqod),
            other => Err(Error::Config(format!("unknown loss mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// HIoU exponent.
    pub gamma: f64,
    /// HIoU weight.
    pub sigma: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Floor for `p` and `u` in the task-correlation indicator.
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            mode: LossMode::Baseline,
            gamma: 0.8,
            sigma: 1.5,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn with_mode(mode: LossMode) -> Self {
        LossConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && self.sigma >= 0.0
            && self.eps > 0.0
            && self.eps < 1e-2
            && self.focal_gamma >= 0.0
            && (0.0..=1.0).contains(&self.focal_alpha)
            && [self.gamma, self.sigma, self.focal_gamma, self.eps].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss configuration {self:?}")))
        }
    }
}

/// Scalar loss values for one batch, each already divided by `max(P, 1)`.
/// Harmony components are reported in every mode; `total` only includes the
/// ones the mode enables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub tcorr: f64,
    /// Unweighted; `total` adds `σ · hiou` in HQOD mode.
    pub hiou: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// Differentiable summed components of one batch.
#[derive(Debug, Clone)]
pub struct LossComponents {
    /// Focal loss summed over all positive and negative elements.
    pub cls_sum: Tensor,
    /// Sums over positives; `None` when there are no positives.
    pub reg_sum: Option<Tensor>,
    pub tcorr_sum: Option<Tensor>,
    pub hiou_sum: Option<Tensor>,
    pub positives: usize,
    pub negatives: usize,
}

/// Per-positive inputs of the objective.
#[derive(Debug, Clone)]
pub struct PositiveTerms {
    /// Score of the matched class, `[P]`.
    pub p: Tensor,
    /// IoU of the decoded box with its target, `[P]`.
    pub u: Tensor,
    /// Regression loss, `[P]`.
    pub reg: Tensor,
}

impl LossComponents {
    pub fn from_terms(
        cls_sum: Tensor,
        positives: Option<&PositiveTerms>,
        negatives: usize,
        cfg: &LossConfig,
    ) -> Result<Self> {
        let Some(t) = positives else {
            return Ok(LossComponents {
                cls_sum,
                reg_sum: None,
                tcorr_sum: None,
                hiou_sum: None,
                positives: 0,
                negatives,
            });
        };
        let u = t.u.clamp(cfg.eps, 1.0)?;
        Ok(LossComponents {
            cls_sum,
            reg_sum: Some(t.reg.sum_all()),
            tcorr_sum: Some(tcorr_loss(&t.p, &u, cfg.eps)?.sum_all()),
            hiou_sum: Some(hiou_loss(&u, cfg.gamma)?.sum_all()),
            positives: t.p.len(),
            negatives,
        })
    }
}

/// `L_OD = (cls + Σ reg) / max(P, 1)`, plus `Σ tcorr / P` and
/// `σ Σ hiou / P` as the mode enables. Harmony terms vanish when `P = 0`.
pub fn hqod_total(c: &LossComponents, cfg: &LossConfig) -> Result<(Tensor, LossBreakdown)> {
    let inv = 1.0 / c.positives.max(1) as f64;
    let cls = c.cls_sum.scale(inv);
    let mut total = cls.clone();
    let mut b = LossBreakdown {
        cls: cls.item()?,
        positives: c.positives,
        negatives: c.negatives,
        ..Default::default()
    };
    if let Some(reg) = &c.reg_sum {
        let reg = reg.scale(inv);
        b.reg = reg.item()?;
        total = total.add(&reg)?;
    }
    if let Some(tc) = &c.tcorr_sum {
        let tc = tc.scale(inv);
        b.tcorr = tc.item()?;
        if cfg.mode.uses_tcorr() {
            total = total.add(&tc)?;
        }
    }
    if let Some(h) = &c.hiou_sum {
        let h = h.scale(inv);
        b.hiou = h.item()?;
        if cfg.mode.uses_hiou() {
            total = total.add(&h.scale(cfg.sigma))?;
        }
    }
    b.total = total.item()?;
    Ok((total, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn components(cls: f64, reg: f64, tc: f64, h: f64, p: usize) -> LossComponents {
        LossComponents {
            cls_sum: Tensor::scalar(cls),
            reg_sum: Some(Tensor::scalar(reg)),
            tcorr_sum: Some(Tensor::scalar(tc)),
            hiou_sum: Some(Tensor::scalar(h)),
            positives: p,
            negatives: 0,
        }
    }

    #[test]
    fn arithmetic_composition() {
        let c = components(0.1, 0.2, 0.3, 0.4, 1);
        let (_, hq) = hqod_total(&c, &LossConfig::with_mode(LossMode::Hqod)).unwrap();
        assert!((hq.total - 1.2).abs() < 1e-12);
        let (_, base) = hqod_total(&c, &LossConfig::with_mode(LossMode::Baseline)).unwrap();
        assert!((base.total - 0.3).abs() < 1e-12);
        let (_, tc) = hqod_total(&c, &LossConfig::with_mode(LossMode::Tcorr)).unwrap();
        assert!((tc.total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn no_positives_is_negative_classification_only() {
        let c = LossComponents {
            cls_sum: Tensor::scalar(0.7),
            reg_sum: None,
            tcorr_sum: None,
            hiou_sum: None,
            positives: 0,
            negatives: 64,
        };
        for mode in LossMode::ALL {
            let (t, b) = hqod_total(&c, &LossConfig::with_mode(mode)).unwrap();
            assert_eq!(t.item().unwrap(), 0.7);
            assert_eq!((b.reg, b.tcorr, b.hiou), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn divides_by_positive_count() {
        let c = components(1.0, 2.0, 3.0, 4.0, 4);
        let (_, b) = hqod_total(&c, &LossConfig::with_mode(LossMode::Hqod)).unwrap();
        assert!((b.total - (1.0 + 2.0 + 3.0 + 1.5 * 4.0) / 4.0).abs() < 1e-12);
        assert_eq!(b.cls, 0.25);
    }

    #[test]
    fn mode_parsing() {
        for m in LossMode::ALL {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
        }
        assert!("focal".parse::<LossMode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossConfig {
            sigma: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
