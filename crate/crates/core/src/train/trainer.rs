//! Mini-batch training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::network::{frames_to_tensor, Mode, Network, ParamKind, FRAME_PIXELS, FRAME_SIDE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate of the mask parameters.
    pub arch_lr: f64,
    /// Keep mask parameters fixed even when masks are attached.
    pub freeze_masks: bool,
    /// Seeds the batch order and augmentation.
    pub seed: u64,
    /// Apply a random flip/transpose of the square frame to every sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            arch_lr: 1e-2,
            freeze_masks: false,
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean task loss per epoch.
    pub epoch_loss: Vec<f32>,
    /// Mean regulariser value per epoch.
    pub epoch_reg: Vec<f32>,
}

/// Trains without an extra objective term.
pub fn fit(net: &mut Network<f32>, frames: &[[f32; FRAME_PIXELS]], labels: &[usize], cfg: &TrainConfig) -> Result<TrainReport> {
    fit_with(net, frames, labels, cfg, |_| Ok(0.0))
}

/// Trains on `task loss + reg(net)`. The regulariser is called after the
/// task backward pass and must add its own gradient to the parameters.
pub fn fit_with<F>(
    net: &mut Network<f32>,
    frames: &[[f32; FRAME_PIXELS]],
    labels: &[usize],
    cfg: &TrainConfig,
    mut reg: F,
) -> Result<TrainReport>
where
    F: FnMut(&mut Network<f32>) -> Result<f32>,
{
    if frames.len() != labels.len() {
        return Err(Error::Shape(format!("{} frames, {} labels", frames.len(), labels.len())));
    }
    if frames.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("empty training set or zero batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_w = AdamState::<f32>::new(cfg.lr);
    let mut opt_a = AdamState::<f32>::new(cfg.arch_lr);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut report = TrainReport::default();
    let mut batch_frames = Vec::with_capacity(cfg.batch_size);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut reg_sum, mut batches) = (0.0f64, 0.0f64, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            batch_frames.clear();
            batch_labels.clear();
            if cfg.augment {
                batch_frames.extend(chunk.iter().map(|&i| dihedral(&frames[i], rng.gen_range(0..8))));
            } else {
                batch_frames.extend(chunk.iter().map(|&i| frames[i]));
            }
            batch_labels.extend(chunk.iter().map(|&i| labels[i]));
            let x: Tensor<f32> = frames_to_tensor(&batch_frames);
            net.forward(&x, Mode::Train)?;
            let loss = net.backward(&batch_labels)?;
            let r = reg(net)?;
            if !loss.is_finite() || !r.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
            }
            step(net, &mut opt_w, &mut opt_a, cfg.freeze_masks)?;
            loss_sum += loss as f64;
            reg_sum += r as f64;
            batches += 1;
        }
        report.epoch_loss.push((loss_sum / batches as f64) as f32);
        report.epoch_reg.push((reg_sum / batches as f64) as f32);
    }
    Ok(report)
}

/// One of the eight symmetries of the square: bit 0 flips columns, bit 1
/// flips rows, bit 2 transposes.
pub fn dihedral(f: &[f32; FRAME_PIXELS], t: u8) -> [f32; FRAME_PIXELS] {
    let mut out = [0f32; FRAME_PIXELS];
    let last = FRAME_SIDE - 1;
    for y in 0..FRAME_SIDE {
        for x in 0..FRAME_SIDE {
            let (mut sy, mut sx) = (y, x);
            if t & 4 != 0 {
                std::mem::swap(&mut sy, &mut sx);
            }
            if t & 1 != 0 {
                sx = last - sx;
            }
            if t & 2 != 0 {
                sy = last - sy;
            }
            out[y * FRAME_SIDE + x] = f[sy * FRAME_SIDE + sx];
        }
    }
    out
}

fn step(net: &mut Network<f32>, opt_w: &mut AdamState<f32>, opt_a: &mut AdamState<f32>, freeze_masks: bool) -> Result<()> {
    let mut weights = Vec::new();
    let mut arch = Vec::new();
    for (kind, p) in net.params_mut() {
        match kind {
            ParamKind::Weight | ParamKind::Range => weights.push(p),
            ParamKind::Arch => arch.push(p),
        }
    }
    opt_w.step(&mut weights)?;
    if !freeze_masks && !arch.is_empty() {
        opt_a.step(&mut arch)?;
    }
    if let Some(q) = net.quant.as_mut() {
        q.clamp_ranges();
    }
    Ok(())
}
