//! Binary weight files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "HQLW" | version u32
//! param count u32, then per parameter:
//!   name len u32 | name utf-8 | kind u8 | trainable u8 | dtype u8
//!   ndim u32 | dims u64 * ndim | values f64 * numel (row-major)
//! layer count u32, then per layer:
//!   quantized u8, and when set, for the weight then the activation quantizer:
//!     bits u32 | signed u8 | mode u8 | step param index u32 | step f64
//! ```

use std::path::Path;

use super::net::{DetectorNet, LayerQuant, Param, ParamKind, Quantizer, ARCHITECTURE};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::quant::{QuantMode, QuantParams};

const MAGIC: &[u8; 4] = b"HQLW";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

fn mode_tag(m: QuantMode) -> u8 {
    match m {
        QuantMode::Fixed => 0,
        QuantMode::Lsq => 1,
        QuantMode::Tqt => 2,
    }
}

fn mode_from_tag(t: u8) -> Result<QuantMode> {
    match t {
        0 => Ok(QuantMode::Fixed),
        1 => Ok(QuantMode::Lsq),
        2 => Ok(QuantMode::Tqt),
        _ => Err(Error::Format(format!("unknown quantizer mode tag {t}"))),
    }
}

pub fn to_bytes(net: &DetectorNet) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(net.params.len() as u32).to_le_bytes());
    for p in &net.params {
        b.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        b.extend_from_slice(p.name.as_bytes());
        b.push(p.kind.tag());
        b.push(p.trainable as u8);
        b.push(DTYPE_F64);
        b.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            b.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in &p.value {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b.extend_from_slice(&(net.layers.len() as u32).to_le_bytes());
    for l in &net.layers {
        match &l.quant {
            None => b.push(0),
            Some(q) => {
                b.push(1);
                for qz in [&q.weight, &q.activation] {
                    b.extend_from_slice(&qz.bits.to_le_bytes());
                    b.push(qz.signed as u8);
                    b.push(mode_tag(qz.mode));
                    b.extend_from_slice(&(qz.param as u32).to_le_bytes());
                    b.extend_from_slice(&net.params[qz.param].value[0].to_le_bytes());
                }
            }
        }
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated weight file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(Error::Format(format!("invalid flag byte {t}"))),
        }
    }
}

fn read_quantizer(r: &mut Reader, params: &[Param]) -> Result<Quantizer> {
    let bits = r.u32()?;
    let signed = r.flag()?;
    let mode = mode_from_tag(r.u8()?)?;
    let param = r.u32()? as usize;
    let step = r.f64()?;
    let p = params
        .get(param)
        .filter(|p| p.kind == if mode == QuantMode::Tqt { ParamKind::LogStep } else { ParamKind::Step })
        .ok_or_else(|| Error::Format(format!("quantizer refers to invalid step parameter {param}")))?;
    if p.value[0].to_bits() != step.to_bits() {
        return Err(Error::Format(format!("step mismatch for '{}'", p.name)));
    }
    QuantParams::new(bits, signed, mode, step)?;
    Ok(Quantizer {
        bits,
        signed,
        mode,
        param,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<DetectorNet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not utf-8".into()))?;
        let kind = ParamKind::from_tag(r.u8()?)?;
        let trainable = r.flag()?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Format(format!("unsupported dtype tag {dtype} for '{name}'")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::Format(format!("shape overflow for '{name}'")))?;
        let value = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name,
            shape,
            value,
            kind,
            trainable,
        });
    }

    let template = DetectorNet::zeroed();
    for (i, t) in template.params.iter().enumerate() {
        match params.get(i) {
            Some(p) if p.name == t.name && p.shape == t.shape && p.kind == t.kind => {}
            _ => {
                return Err(Error::Format(format!(
                    "parameter {i} does not match architecture parameter '{}' {:?}",
                    t.name, t.shape
                )))
            }
        }
    }
    let mut net = DetectorNet {
        params,
        layers: template.layers,
    };

    let layers = r.u32()? as usize;
    if layers != ARCHITECTURE.len() {
        return Err(Error::Format(format!("expected {} layers, found {layers}", ARCHITECTURE.len())));
    }
    for i in 0..layers {
        if r.flag()? {
            let weight = read_quantizer(&mut r, &net.params)?;
            let activation = read_quantizer(&mut r, &net.params)?;
            net.layers[i].quant = Some(LayerQuant { weight, activation });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in weight file", bytes.len() - r.pos)));
    }
    Ok(net)
}

pub fn save(net: &DetectorNet, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &to_bytes(net))
}

pub fn load(path: &Path) -> Result<DetectorNet> {
    from_bytes(&fsutil::read(path)?)
}
