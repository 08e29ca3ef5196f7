//! Simulated per-tensor symmetric quantization.
//!
//! `v̄ = clip(round(v / s), n_min, n_max)`, `v̂ = s · v̄`, with round-half-to-even.
//! In the backward pass the rounding is treated as identity inside the
//! clipping range and the gradient is zero outside it. The step `s` can be
//! fixed, learned directly (LSQ-style) or learned through a real-valued
//! exponent with `s = 2^round(θ)` (TQT-style power-of-two steps).

mod policy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{custom_grad, Tensor};

pub use policy::{apply_bit_policy, BitPolicy, FULL_PRECISION_BITS};

/// Lower bound applied to learned steps after each update.
pub const MIN_STEP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantMode {
    Fixed,
    Lsq,
    Tqt,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Fixed => "fixed",
            QuantMode::Lsq => "lsq",
            QuantMode::Tqt => "tqt",
        }
    }
}

impl std::str::FromStr for QuantMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(QuantMode::Fixed),
            "lsq" => Ok(QuantMode::Lsq),
            "tqt" => Ok(QuantMode::Tqt),
            other => Err(Error::Config(format!("unknown quantizer mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for QuantMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Integer range `(n_min, n_max)` for a `bits`-wide signed or unsigned code.
pub fn quant_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    pub signed: bool,
    pub mode: QuantMode,
    /// The step `s`, or the exponent `θ` for [`QuantMode::Tqt`].
    pub step: f64,
}

impl QuantParams {
    pub fn new(bits: u32, signed: bool, mode: QuantMode, step: f64) -> Result<Self> {
        if !(2..=16).contains(&bits) {
            return Err(Error::Invalid(format!("bit width {bits} outside [2, 16]")));
        }
        if !step.is_finite() || (mode != QuantMode::Tqt && step <= 0.0) {
            return Err(Error::Invalid(format!("quantization step {step} must be positive")));
        }
        Ok(Self {
            bits,
            signed,
            mode,
            step,
        })
    }

    /// Parameters with the step initialized from data via [`init_step`].
    pub fn initialized(bits: u32, signed: bool, mode: QuantMode, values: &[f64]) -> Result<Self> {
        let (_, n_max) = quant_range(bits, signed);
        let s0 = init_step(values, n_max);
        let stored = match mode {
            QuantMode::Tqt => s0.log2(),
            _ => s0,
        };
        Self::new(bits, signed, mode, stored)
    }

    pub fn n_min(&self) -> i64 {
        quant_range(self.bits, self.signed).0
    }

    pub fn n_max(&self) -> i64 {
        quant_range(self.bits, self.signed).1
    }

    /// The effective step `s`; always an exact power of two for TQT.
    pub fn step_size(&self) -> f64 {
        match self.mode {
            QuantMode::Tqt => pot_step_value(self.step),
            _ => self.step,
        }
    }
}

pub(crate) fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// `2^round(θ)`
pub fn pot_step_value(theta: f64) -> f64 {
    let e = round_half_even(theta).clamp(-1000.0, 1000.0) as i32;
    2f64.powi(e)
}

/// `s₀ = 2·mean(|v|)/sqrt(n_max)`; falls back to 1 when `v` is all zero.
pub fn init_step(values: &[f64], n_max: i64) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
    if mean_abs == 0.0 || !mean_abs.is_finite() {
        return 1.0;
    }
    2.0 * mean_abs / (n_max as f64).sqrt()
}

/// Quantize-dequantize of a single value.
pub fn quantize_value(v: f64, s: f64, n_min: i64, n_max: i64) -> f64 {
    s * round_half_even(v / s).clamp(n_min as f64, n_max as f64)
}

/// Clipped straight-through gradient: upstream passes where
/// `n_min <= v/s <= n_max`, zero elsewhere.
pub fn ste_backward(upstream: &[f64], v: &[f64], s: f64, n_min: i64, n_max: i64) -> Vec<f64> {
    let (lo, hi) = (n_min as f64, n_max as f64);
    upstream
        .iter()
        .zip(v)
        .map(|(&g, &x)| {
            let r = x / s;
            if r >= lo && r <= hi {
                g
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-element `∂v̂/∂s` before gradient scaling: `round(v/s) - v/s` inside
/// the range, `n_min` below and `n_max` above.
pub fn lsq_step_derivative(v: f64, s: f64, n_min: i64, n_max: i64) -> f64 {
    let r = v / s;
    if r < n_min as f64 {
        n_min as f64
    } else if r > n_max as f64 {
        n_max as f64
    } else {
        round_half_even(r) - r
    }
}

/// Learned-step gradient scale `g = 1/sqrt(count · n_max)`.
pub fn lsq_grad_scale(count: usize, n_max: i64) -> f64 {
    1.0 / ((count as f64) * n_max as f64).sqrt()
}

/// `Σ upstream · g · d` over the tensor.
pub fn lsq_step_gradient(upstream: &[f64], v: &[f64], s: f64, n_min: i64, n_max: i64) -> f64 {
    let g = lsq_grad_scale(v.len(), n_max);
    upstream
        .iter()
        .zip(v)
        .map(|(&u, &x)| u * g * lsq_step_derivative(x, s, n_min, n_max))
        .sum()
}

/// Fake-quantizes `v` with the constant step carried by `qp`.
pub fn fake_quantize(v: &Tensor, qp: &QuantParams) -> Result<Tensor> {
    fake_quantize_with_step(v, &Tensor::scalar(qp.step_size()), qp)
}

/// Fake-quantizes `v` with a step supplied as a scalar tensor, so the step
/// can receive the learned-step gradient.
pub fn fake_quantize_with_step(v: &Tensor, step: &Tensor, qp: &QuantParams) -> Result<Tensor> {
    if step.len() != 1 {
        return Err(Error::Shape(format!("step must be scalar, got {:?}", step.shape())));
    }
    let s = step.data()[0];
    if !(s > 0.0) {
        return Err(Error::Invalid(format!("quantization step {s} must be positive")));
    }
    let (n_min, n_max) = (qp.n_min(), qp.n_max());
    custom_grad(
        "fake_quantize",
        &[v, step],
        |ins| {
            let x = ins[0];
            Ok((
                x.shape().to_vec(),
                x.data().iter().map(|&v| quantize_value(v, s, n_min, n_max)).collect(),
            ))
        },
        move |args| {
            let v = args.inputs[0].data();
            let gv = ste_backward(args.grad_output, v, s, n_min, n_max);
            let gs = if args.inputs[1].requires_grad() {
                lsq_step_gradient(args.grad_output, v, s, n_min, n_max)
            } else {
                0.0
            };
            Ok(vec![gv, vec![gs]])
        },
    )
}

/// `s = 2^round(θ)` with a straight-through round: `∂s/∂θ = s · ln 2`.
pub fn tqt_pot_step(theta: &Tensor) -> Result<Tensor> {
    if theta.len() != 1 {
        return Err(Error::Shape(format!("exponent must be scalar, got {:?}", theta.shape())));
    }
    custom_grad(
        "pot_step",
        &[theta],
        |ins| Ok((ins[0].shape().to_vec(), vec![pot_step_value(ins[0].data()[0])])),
        |args| Ok(vec![vec![args.grad_output[0] * args.output[0] * std::f64::consts::LN_2]]),
    )
}
