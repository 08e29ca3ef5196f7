use serde::{Deserialize, Serialize};

use crate::detector::net::{Param, ParamKind};
use crate::error::{Error, Result};
use crate::quant::MIN_STEP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain SGD with momentum 0.9.
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f64 = 0.9;

/// First-order optimizer over a parameter list. Quantizer steps use
/// `step_lr_scale` times the weight learning rate and learned step sizes are
/// clamped to [`MIN_STEP`] after every update.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step_lr_scale: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[Param], step_lr_scale: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Optimizer {
            kind,
            step_lr_scale,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; returns how many learned step sizes fell below
    /// [`MIN_STEP`] before clamping.
    pub fn step(&mut self, params: &mut [Param], grads: &[Option<Vec<f64>>], lr: f64) -> Result<usize> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.t += 1;
        let t = self.t as i32;
        let mut collapses = 0;
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if !p.trainable {
                continue;
            }
            let lr = if p.kind.is_quantizer() { lr * self.step_lr_scale } else { lr };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match self.kind {
                OptimizerKind::Adam => {
                    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
                    for k in 0..p.value.len() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                        p.value[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                    }
                }
                OptimizerKind::Sgd => {
                    for k in 0..p.value.len() {
                        m[k] = MOMENTUM * m[k] + g[k];
                        p.value[k] -= lr * m[k];
                    }
                }
            }
            if p.kind == ParamKind::Step {
                for s in p.value.iter_mut() {
                    if *s < MIN_STEP {
                        collapses += 1;
                        *s = MIN_STEP;
                    }
                }
            }
        }
        Ok(collapses)
    }
}
