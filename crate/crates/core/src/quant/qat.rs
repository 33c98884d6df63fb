//! Fake-quantization state attached to a network, calibration and
//! quantization-aware training.

use crate::dnas;
use crate::error::{Error, Result};
use crate::quant::fold::fold_bn;
use crate::quant::quantizer::{AffineQuantizer, LearnedRange, RangeKind};
use crate::quant::spec::QuantSpec;
use crate::tensor::Scalar;
use crate::train::network::{frames_to_tensor, Mode, ResolvedQuant};
use crate::train::{fit, Network, TrainConfig, TrainReport, FRAME_PIXELS};

/// Width of the logits.
pub const OUTPUT_BITS: u32 = 8;
/// Lower bound kept on every learned range.
pub const MIN_RANGE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantState<T: Scalar = f32> {
    pub spec: QuantSpec,
    /// Quantizer of the normalised input frame (fixed after calibration).
    pub input: AffineQuantizer<T>,
    /// Output ranges of conv1, conv2 and fc1.
    pub acts: [LearnedRange<T>; 3],
    /// Logit range.
    pub output: LearnedRange<T>,
}

impl<T: Scalar> QuantState<T> {
    pub fn new(spec: QuantSpec, input: (T, T), act_max: [T; 3], logit_max: T) -> Result<Self> {
        let floor = T::c(MIN_RANGE);
        let input = AffineQuantizer::with_integer_zero(input.0, input.1, spec.layer(0))?;
        let acts = [0, 1, 2].map(|l| LearnedRange::new(act_max[l].max(floor), spec.layer(l + 1), RangeKind::Unsigned));
        Ok(Self {
            spec,
            input,
            acts,
            output: LearnedRange::new(logit_max.max(floor), OUTPUT_BITS, RangeKind::Symmetric),
        })
    }

    pub fn resolve(&self) -> Result<ResolvedQuant<T>> {
        Ok(ResolvedQuant {
            input: self.input,
            acts: [
                self.acts[0].quantizer()?,
                self.acts[1].quantizer()?,
                self.acts[2].quantizer()?,
            ],
            output: self.output.quantizer()?,
            bits: self.spec.bits(),
        })
    }

    pub fn clamp_ranges(&mut self) {
        let floor = T::c(MIN_RANGE);
        for r in self.acts.iter_mut().chain(std::iter::once(&mut self.output)) {
            let b = &mut r.beta.data_mut()[0];
            if !(*b >= floor) {
                *b = floor;
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> QuantState<U> {
        let cast_range = |r: &LearnedRange<T>| LearnedRange::new(U::c(r.beta_value().f64()), r.bits, r.kind);
        QuantState {
            spec: self.spec,
            input: self.input.cast(),
            acts: [cast_range(&self.acts[0]), cast_range(&self.acts[1]), cast_range(&self.acts[2])],
            output: cast_range(&self.output),
        }
    }
}

/// Extracts, folds and calibrates `net` for `spec`: the input range comes
/// from the normalised calibration frames, activation and logit ranges from
/// their maxima over one float pass.
pub fn prepare(net: &Network<f32>, spec: QuantSpec, frames: &[[f32; FRAME_PIXELS]]) -> Result<Network<f32>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("calibration needs at least one frame".into()));
    }
    let mut out = fold_bn(&dnas::extract(net)?)?;
    out.quant = None;
    let (mut lo, mut hi) = (0.0f32, 0.0f32);
    let mut act_max = [0.0f32; 3];
    let mut logit_max = 0.0f32;
    for chunk in frames.chunks(256) {
        for v in chunk.iter().flatten() {
            let x = out.norm.apply(*v);
            lo = lo.min(x);
            hi = hi.max(x);
        }
        out.forward(&frames_to_tensor(chunk), Mode::Eval)?;
        let blocks = out.cached_block_outputs().expect("forward ran");
        for l in 0..3 {
            act_max[l] = blocks[l].iter().fold(act_max[l], |m, &v| m.max(v));
        }
        logit_max = blocks[3].iter().fold(logit_max, |m, &v| m.max(v.abs()));
    }
    out.quant = Some(QuantState::new(spec, (lo, hi), act_max, logit_max)?);
    Ok(out)
}

/// Quantization-aware training of a prepared network. Weights and the
/// activation/logit ranges are trained; the input range stays fixed.
pub fn qat(net: &mut Network<f32>, frames: &[[f32; FRAME_PIXELS]], labels: &[usize], cfg: &TrainConfig) -> Result<TrainReport> {
    if net.quant.is_none() {
        return Err(Error::InvalidArgument("network has no quantization state; call prepare first".into()));
    }
    if net.bn1.is_some() || net.bn2.is_some() {
        return Err(Error::InvalidArgument("batch-norm must be folded before QAT".into()));
    }
    fit(net, frames, labels, cfg)
}
