use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::optim::{Optimizer, OptimizerKind};
use crate::detector::net::{DetectorNet, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::loss::{batch_objective, LossBreakdown, LossConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_frac: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub step_lr_scale: f64,
    pub loss: LossConfig,
}

impl FitSettings {
    /// Learning rate for `epoch`: dropped 10x from `floor(lr_decay_frac * epochs)` on.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decay_at = (self.lr_decay_frac * self.epochs as f64).floor() as usize;
        if epoch >= decay_at && decay_at > 0 {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// Batch-averaged losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub batches: usize,
    /// Component means over batches; `positives`/`negatives` are totals.
    pub loss: LossBreakdown,
    pub step_collapses: usize,
}

/// Shuffled mini-batches of `0..n` for `epoch`. Depends only on
/// `(seed, epoch, n, batch_size)`; initialization uses stream 0 of the same
/// seed, so shuffling draws from stream `epoch + 1`.
pub fn batch_order(seed: u64, epoch: usize, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Images `indices` of `data` as a `[B, 1, 64, 64]` tensor.
pub fn batch_images(data: &Dataset, indices: &[usize]) -> Result<Tensor> {
    Tensor::new(data.gather_pixels(indices), &[indices.len(), 1, IMAGE_SIZE, IMAGE_SIZE])
}

/// One optimizer step on one batch; returns the loss breakdown and the
/// number of collapsed steps.
pub fn train_step(
    net: &mut DetectorNet,
    opt: &mut Optimizer,
    data: &Dataset,
    indices: &[usize],
    loss: &LossConfig,
    lr: f64,
) -> Result<(LossBreakdown, usize)> {
    let images = batch_images(data, indices)?;
    let gts: Vec<_> = indices.iter().map(|&i| data.scenes[i].gts.clone()).collect();
    let leaves = net.bind(true)?;
    let out = net.forward(&images, &leaves)?;
    let (total, breakdown) = batch_objective(&out, &gts, &net.grid(), loss)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {breakdown:?}")));
    }
    total.backward()?;
    let grads: Vec<Option<Vec<f64>>> = leaves.iter().map(Tensor::grad).collect();
    let collapses = opt.step(&mut net.params, &grads, lr)?;
    if let Some(p) = net.params.iter().find(|p| p.value.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged(format!("parameter '{}' became non-finite", p.name)));
    }
    Ok((breakdown, collapses))
}

/// Trains `net` in place for `s.epochs` epochs over `data`.
pub fn fit(net: &mut DetectorNet, data: &Dataset, s: &FitSettings) -> Result<Vec<EpochLog>> {
    s.loss.validate()?;
    let mut opt = Optimizer::new(s.optimizer, &net.params, s.step_lr_scale);
    let mut logs = Vec::with_capacity(s.epochs);
    for epoch in 0..s.epochs {
        let lr = s.lr_at(epoch);
        let batches = batch_order(s.seed, epoch, data.len(), s.batch_size);
        let mut sum = LossBreakdown::default();
        let mut collapses = 0;
        for (b, idx) in batches.iter().enumerate() {
            let (l, c) = train_step(net, &mut opt, data, idx, &s.loss, lr)
                .map_err(|e| match e {
                    Error::Diverged(m) => Error::Diverged(format!("epoch {epoch}, batch {b}: {m}")),
                    other => other,
                })?;
            sum.total += l.total;
            sum.cls += l.cls;
            sum.reg += l.reg;
            sum.tcorr += l.tcorr;
            sum.hiou += l.hiou;
            sum.positives += l.positives;
            sum.negatives += l.negatives;
            collapses += c;
        }
        let n = batches.len() as f64;
        let log = EpochLog {
            epoch,
            lr,
            batches: batches.len(),
            loss: LossBreakdown {
                total: sum.total / n,
                cls: sum.cls / n,
                reg: sum.reg / n,
                tcorr: sum.tcorr / n,
                hiou: sum.hiou / n,
                ..sum
            },
            step_collapses: collapses,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (cls {:.5}, reg {:.5}, tcorr {:.5}, hiou {:.5})",
            log.loss.total,
            log.loss.cls,
            log.loss.reg,
            log.loss.tcorr,
            log.loss.hiou
        );
        logs.push(log);
    }
    Ok(logs)
}
