use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{QuantMode, QuantParams};
use crate::detector::net::{DetectorNet, LayerQuant, LayerRole, Param, ParamKind, Quantizer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bit width meaning "leave the layer in floating point".
pub const FULL_PRECISION_BITS: u32 = 32;
/// Width used for the first and last layers whenever the rest is quantized.
pub const EDGE_BITS: u32 = 8;

/// Uniform bit width with optional per-layer overrides for interior layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPolicy {
    pub bits: u32,
    pub overrides: BTreeMap<String, u32>,
}

impl BitPolicy {
    pub fn uniform(bits: u32) -> Self {
        BitPolicy {
            bits,
            overrides: BTreeMap::new(),
        }
    }

    pub fn is_full_precision(&self) -> bool {
        self.bits == FULL_PRECISION_BITS && self.overrides.values().all(|b| *b == FULL_PRECISION_BITS)
    }

    fn check_bits(bits: u32) -> Result<()> {
        if bits == FULL_PRECISION_BITS || (2..=16).contains(&bits) {
            Ok(())
        } else {
            Err(Error::Config(format!("bit width {bits} must be in [2, 16] or {FULL_PRECISION_BITS}")))
        }
    }

    /// Validates widths and override names against the detector architecture.
    pub fn check(&self) -> Result<()> {
        self.layer_bits(&DetectorNet::zeroed()).map(|_| ())
    }

    /// Resolved width for each layer of `net`, in layer order.
    pub fn layer_bits(&self, net: &DetectorNet) -> Result<Vec<u32>> {
        Self::check_bits(self.bits)?;
        for (name, bits) in &self.overrides {
            Self::check_bits(*bits)?;
            let layer = net
                .layer(name)
                .ok_or_else(|| Error::Config(format!("bit override for unknown layer '{name}'")))?;
            if layer.spec.role != LayerRole::Interior {
                return Err(Error::Config(format!(
                    "layer '{name}' is pinned to {EDGE_BITS} bits and cannot be overridden"
                )));
            }
        }
        Ok(net
            .layers
            .iter()
            .map(|l| match l.spec.role {
                _ if self.is_full_precision() => FULL_PRECISION_BITS,
                LayerRole::Interior => self.overrides.get(l.spec.name).copied().unwrap_or(self.bits),
                _ => EDGE_BITS,
            })
            .collect())
    }
}

impl fmt::Display for BitPolicy {
    /// `bits` followed by `name:bits` overrides, comma separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits)?;
        for (name, bits) in &self.overrides {
            write!(f, ",{name}:{bits}")?;
        }
        Ok(())
    }
}

impl FromStr for BitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let bits = parse_bits(parts.next().unwrap_or(""))?;
        let mut overrides = BTreeMap::new();
        for part in parts.filter(|p| !p.is_empty()) {
            let (name, b) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected layer:bits, got '{part}'")))?;
            overrides.insert(name.trim().to_string(), parse_bits(b)?);
        }
        Ok(BitPolicy { bits, overrides })
    }
}

impl serde::Serialize for BitPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for BitPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn parse_bits(s: &str) -> Result<u32> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid bit width '{s}'")))
}

/// Wraps every layer of a full-precision `net` with weight and activation
/// fake-quantizers according to `policy`.
///
/// Weight steps are initialized from the weights and activation steps from
/// the full-precision inputs each layer sees on `calibration` images.
/// Weights use signed codes; activations are non-negative (image pixels or
/// ReLU outputs) and use unsigned codes. Biases stay in floating point.
/// A policy of [`FULL_PRECISION_BITS`] returns `net` unchanged.
pub fn apply_bit_policy(
    net: &DetectorNet,
    policy: &BitPolicy,
    mode: QuantMode,
    calibration: &Tensor,
) -> Result<DetectorNet> {
    if net.is_quantized() {
        return Err(Error::Invalid("network is already quantized".into()));
    }
    let bits = policy.layer_bits(net)?;
    let mut out = net.clone();
    if bits.iter().all(|b| *b == FULL_PRECISION_BITS) {
        return Ok(out);
    }
    let inputs = net.layer_inputs(calibration)?;
    let trainable = mode != QuantMode::Fixed;
    let add_quantizer = |params: &mut Vec<Param>, name: String, b: u32, signed: bool, values: &[f64]| {
        let qp = QuantParams::initialized(b, signed, mode, values)?;
        params.push(Param {
            name,
            shape: vec![],
            value: vec![qp.step],
            kind: if mode == QuantMode::Tqt { ParamKind::LogStep } else { ParamKind::Step },
            trainable,
        });
        Ok::<_, Error>(Quantizer {
            bits: b,
            signed,
            mode,
            param: params.len() - 1,
        })
    };
    for (i, b) in bits.into_iter().enumerate() {
        if b == FULL_PRECISION_BITS {
            continue;
        }
        let layer = &out.layers[i];
        let name = layer.spec.name;
        let w = out.params[layer.weight].value.clone();
        let weight = add_quantizer(&mut out.params, format!("{name}.weight_step"), b, true, &w)?;
        let activation =
            add_quantizer(&mut out.params, format!("{name}.act_step"), b, false, inputs[i].data())?;
        out.layers[i].quant = Some(LayerQuant { weight, activation });
    }
    Ok(out)
}
