use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::assign::Grid;
use super::boxes::{decode, Detection};
use crate::error::{Error, Result};
use crate::quant::{fake_quantize_with_step, tqt_pot_step, QuantMode, QuantParams};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 64;
pub const STRIDE: usize = 8;
pub const NUM_CLASSES: usize = 3;
/// Raw regression outputs are clamped to this magnitude before `exp`.
pub const MAX_LOG_DISTANCE: f64 = 4.0;
const PRIOR_PROB: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    /// First layer; always 8-bit under QAT.
    Stem,
    Interior,
    /// Final layer of a head; always 8-bit under QAT.
    HeadOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub relu: bool,
    pub role: LayerRole,
}

const fn conv(
    name: &'static str,
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    relu: bool,
    role: LayerRole,
) -> LayerSpec {
    LayerSpec {
        name,
        in_channels,
        out_channels,
        kernel: 3,
        stride,
        padding: 1,
        relu,
        role,
    }
}

/// Stem, three trunk blocks, then two parallel head outputs on the shared
/// trunk feature map. 64x64 input, 8x8 output grid.
pub const ARCHITECTURE: [LayerSpec; 6] = [
    conv("stem", 1, 8, 2, true, LayerRole::Stem),
    conv("block1", 8, 16, 2, true, LayerRole::Interior),
    conv("block2", 16, 32, 2, true, LayerRole::Interior),
    conv("block3", 32, 32, 1, true, LayerRole::Interior),
    conv("cls_out", 32, NUM_CLASSES, 1, false, LayerRole::HeadOutput),
    conv("reg_out", 32, 4, 1, false, LayerRole::HeadOutput),
];

const TRUNK: usize = 4;
const CLS_OUT: usize = 4;
const REG_OUT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Quantizer step size.
    Step,
    /// Base-2 exponent of a power-of-two quantizer step.
    LogStep,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
            ParamKind::Step => 2,
            ParamKind::LogStep => 3,
        }
    }

    pub fn is_quantizer(self) -> bool {
        matches!(self, ParamKind::Step | ParamKind::LogStep)
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(ParamKind::Weight),
            1 => Ok(ParamKind::Bias),
            2 => Ok(ParamKind::Step),
            3 => Ok(ParamKind::LogStep),
            _ => Err(Error::Format(format!("unknown parameter kind {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub kind: ParamKind,
    pub trainable: bool,
}

/// A fake-quantizer attached to a layer; the step lives in `params[param]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantizer {
    pub bits: u32,
    pub signed: bool,
    pub mode: QuantMode,
    pub param: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerQuant {
    pub weight: Quantizer,
    pub activation: Quantizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    pub weight: usize,
    pub bias: usize,
    pub quant: Option<LayerQuant>,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// Sigmoid class scores, `[N, C, G, G]`.
    pub scores: Tensor,
    /// Positive `(l, t, r, b)` distances in pixels, `[N, 4, G, G]`.
    pub distances: Tensor,
}

/// The toy dense detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorNet {
    pub params: Vec<Param>,
    pub layers: Vec<ConvLayer>,
}

impl DetectorNet {
    fn with_init(mut init: impl FnMut(&LayerSpec, ParamKind, usize) -> Vec<f64>) -> Self {
        let mut params = Vec::new();
        let mut layers = Vec::new();
        for spec in ARCHITECTURE {
            let wshape = vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
            let wn = wshape.iter().product();
            params.push(Param {
                name: format!("{}.weight", spec.name),
                shape: wshape,
                value: init(&spec, ParamKind::Weight, wn),
                kind: ParamKind::Weight,
                trainable: true,
            });
            params.push(Param {
                name: format!("{}.bias", spec.name),
                shape: vec![spec.out_channels],
                value: init(&spec, ParamKind::Bias, spec.out_channels),
                kind: ParamKind::Bias,
                trainable: true,
            });
            layers.push(ConvLayer {
                spec,
                weight: params.len() - 2,
                bias: params.len() - 1,
                quant: None,
            });
        }
        DetectorNet { params, layers }
    }

    /// He-normal trunk weights, small head weights, focal prior on the
    /// classification bias.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_init(|spec, kind, n| match kind {
            ParamKind::Weight => {
                let std = match spec.role {
                    LayerRole::HeadOutput => 0.01,
                    _ => (2.0 / (spec.in_channels * spec.kernel * spec.kernel) as f64).sqrt(),
                };
                (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
            }
            _ if spec.name == "cls_out" => vec![-((1.0 - PRIOR_PROB) / PRIOR_PROB).ln(); n],
            _ => vec![0.0; n],
        })
    }

    /// Every parameter zero.
    pub fn zeroed() -> Self {
        Self::with_init(|_, _, n| vec![0.0; n])
    }

    pub fn grid(&self) -> Grid {
        Grid {
            size: IMAGE_SIZE / STRIDE,
            stride: STRIDE,
        }
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    pub fn layer(&self, name: &str) -> Option<&ConvLayer> {
        self.layers.iter().find(|l| l.spec.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.kind.is_quantizer())
            .map(|p| p.value.len())
            .sum()
    }

    pub fn is_quantized(&self) -> bool {
        self.layers.iter().any(|l| l.quant.is_some())
    }

    /// The quantizer's parameters with its current step.
    pub fn qparams(&self, q: &Quantizer) -> QuantParams {
        QuantParams {
            bits: q.bits,
            signed: q.signed,
            mode: q.mode,
            step: self.params[q.param].value[0],
        }
    }

    /// One leaf tensor per parameter, in `params` order. Frozen parameters
    /// and all parameters when `requires_grad` is false become constants.
    pub fn bind(&self, requires_grad: bool) -> Result<Vec<Tensor>> {
        self.params
            .iter()
            .map(|p| {
                if requires_grad && p.trainable {
                    Tensor::param(p.value.clone(), &p.shape)
                } else {
                    Tensor::new(p.value.clone(), &p.shape)
                }
            })
            .collect()
    }

    fn quantize(&self, v: &Tensor, q: &Quantizer, leaves: &[Tensor]) -> Result<Tensor> {
        let qp = self.qparams(q);
        let leaf = &leaves[q.param];
        match q.mode {
            QuantMode::Tqt => fake_quantize_with_step(v, &tqt_pot_step(leaf)?, &qp),
            _ => fake_quantize_with_step(v, leaf, &qp),
        }
    }

    fn layer_forward(&self, layer: &ConvLayer, x: &Tensor, leaves: &[Tensor]) -> Result<Tensor> {
        let (x, w) = match &layer.quant {
            Some(q) => (
                self.quantize(x, &q.activation, leaves)?,
                self.quantize(&leaves[layer.weight], &q.weight, leaves)?,
            ),
            None => (x.clone(), leaves[layer.weight].clone()),
        };
        let y = x.conv2d(&w, Some(&leaves[layer.bias]), layer.spec.stride, layer.spec.padding)?;
        Ok(if layer.spec.relu { y.relu() } else { y })
    }

    fn check_images(images: &Tensor) -> Result<()> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE {
            return Err(Error::Shape(format!(
                "expected images of shape [N, 1, {IMAGE_SIZE}, {IMAGE_SIZE}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// Full forward pass on `[N, 1, 64, 64]` images.
    pub fn forward(&self, images: &Tensor, leaves: &[Tensor]) -> Result<HeadOutput> {
        Self::check_images(images)?;
        if leaves.len() != self.params.len() {
            return Err(Error::Invalid(format!(
                "{} leaves bound for {} parameters",
                leaves.len(),
                self.params.len()
            )));
        }
        let mut x = images.clone();
        for layer in &self.layers[..TRUNK] {
            x = self.layer_forward(layer, &x, leaves)?;
        }
        let logits = self.layer_forward(&self.layers[CLS_OUT], &x, leaves)?;
        let raw = self.layer_forward(&self.layers[REG_OUT], &x, leaves)?;
        let distances = raw
            .clamp(-MAX_LOG_DISTANCE, MAX_LOG_DISTANCE)?
            .exp()
            .scale(STRIDE as f64);
        Ok(HeadOutput {
            scores: logits.sigmoid(),
            distances,
        })
    }

    /// Inference on constants.
    pub fn predict(&self, images: &Tensor) -> Result<HeadOutput> {
        let leaves = self.bind(false)?;
        self.forward(images, &leaves)
    }

    /// Full-precision inputs seen by every layer, in layer order.
    pub fn layer_inputs(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        Self::check_images(images)?;
        let leaves = self.bind(false)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = images.clone();
        for layer in &self.layers[..TRUNK] {
            inputs.push(x.clone());
            x = self.layer_forward(layer, &x, &leaves)?;
        }
        inputs.push(x.clone());
        inputs.push(x);
        Ok(inputs)
    }
}

/// Candidate detections for image `n` of a batch: one per (cell, class)
/// with score above `score_threshold`, in cell-major order.
pub fn candidates(out: &HeadOutput, n: usize, grid: &Grid, score_threshold: f64) -> Vec<Detection> {
    let cells = grid.cells();
    let classes = out.scores.shape()[1];
    let scores = out.scores.data();
    let dist = out.distances.data();
    let mut dets = Vec::new();
    for cell in 0..cells {
        let offsets = [0, 1, 2, 3].map(|k| dist[(n * 4 + k) * cells + cell]);
        let bbox = decode(grid.center(cell), offsets);
        for c in 0..classes {
            let score = scores[(n * classes + c) * cells + cell];
            if score > score_threshold {
                dets.push(Detection {
                    bbox,
                    class_id: c,
                    score,
                });
            }
        }
    }
    dets
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            (0..n * IMAGE_SIZE * IMAGE_SIZE).map(|_| rng.random::<f64>()).collect(),
            &[n, 1, IMAGE_SIZE, IMAGE_SIZE],
        )
        .unwrap()
    }

    #[test]
    fn output_grid_shape() {
        let net = DetectorNet::new(0);
        let out = net.predict(&image_batch(2, 1)).unwrap();
        assert_eq!(out.scores.shape(), &[2, NUM_CLASSES, 8, 8]);
        assert_eq!(out.distances.shape(), &[2, 4, 8, 8]);
        assert!(out.distances.data().iter().all(|d| *d > 0.0));
    }

    #[test]
    fn zero_network_scores_half() {
        let out = DetectorNet::zeroed().predict(&image_batch(1, 2)).unwrap();
        assert!(out.scores.data().iter().all(|s| *s == 0.5));
    }

    #[test]
    fn forward_is_deterministic() {
        let a = DetectorNet::new(7).predict(&image_batch(2, 3)).unwrap();
        let b = DetectorNet::new(7).predict(&image_batch(2, 3)).unwrap();
        assert_eq!(a.scores.data(), b.scores.data());
        assert_eq!(a.distances.data(), b.distances.data());
    }

    #[test]
    fn wrong_image_size_rejected() {
        let net = DetectorNet::new(0);
        let bad = Tensor::zeros(&[1, 1, 32, 32]).unwrap();
        assert!(net.predict(&bad).is_err());
    }

    #[test]
    fn parameter_budget() {
        let n = DetectorNet::new(0).parameter_count();
        assert!(n > 15_000 && n < 60_000, "{n}");
    }

    #[test]
    fn head_outputs_are_separate_layers_on_shared_trunk() {
        let net = DetectorNet::new(0);
        let cls = net.layer("cls_out").unwrap();
        let reg = net.layer("reg_out").unwrap();
        assert_ne!(cls.weight, reg.weight);
        assert_eq!(cls.spec.in_channels, reg.spec.in_channels);
    }
}
