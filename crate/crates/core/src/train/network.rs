//! The seed CNN: conv3x3 -> BN -> ReLU -> maxpool -> conv3x3 -> BN -> ReLU ->
//! linear -> ReLU -> linear, on single-channel 8x8 frames.
//!
//! The same type carries optional channel masks (architecture search) and
//! optional fake-quantization state (quantization-aware training).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, BnCache, Conv2d, ConvCache, Linear};
use super::ops::{self, Fmap};
use crate::dnas::MaskSet;
use crate::error::{Error, Result};
use crate::quant::quantizer::{round_half_up, AffineQuantizer};
use crate::quant::QuantState;
use crate::tensor::{Scalar, Tensor};

pub const FRAME_SIDE: usize = 8;
pub const FRAME_PIXELS: usize = FRAME_SIDE * FRAME_SIDE;
pub const POOLED_SIDE: usize = FRAME_SIDE / 2;
pub const NUM_CLASSES: usize = 4;
pub const KERNEL: usize = 3;
pub const PAD: usize = 1;

/// Output widths of the three prunable layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Widths {
    pub conv1: usize,
    pub conv2: usize,
    pub fc1: usize,
}

impl Widths {
    pub const SEED: Widths = Widths {
        conv1: 64,
        conv2: 64,
        fc1: 64,
    };

    pub fn fc1_inputs(&self) -> usize {
        self.conv2 * POOLED_SIDE * POOLED_SIDE
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.conv1, self.conv2, self.fc1]
    }

    /// Weights plus biases of the four compute layers (BN excluded).
    pub fn param_count(&self) -> u64 {
        let [a, b, c] = self.as_array().map(|v| v as u64);
        let k = (KERNEL * KERNEL) as u64;
        let s = (POOLED_SIDE * POOLED_SIDE) as u64;
        let o = NUM_CLASSES as u64;
        (a * k + a) + (b * a * k + b) + (c * b * s + c) + (o * c + o)
    }

    /// Multiply-accumulates per frame of the four compute layers.
    pub fn mac_count(&self) -> u64 {
        let [a, b, c] = self.as_array().map(|v| v as u64);
        let k = (KERNEL * KERNEL) as u64;
        let full = FRAME_PIXELS as u64;
        let s = (POOLED_SIDE * POOLED_SIDE) as u64;
        a * k * full + b * a * k * s + c * b * s + NUM_CLASSES as u64 * c
    }
}

/// Affine input normalisation applied to raw frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f32,
    pub std: f32,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl Normalizer {
    pub fn fit(frames: &[[f32; FRAME_PIXELS]]) -> Self {
        let n = (frames.len() * FRAME_PIXELS) as f64;
        if n == 0.0 {
            return Self::default();
        }
        let mean = frames.iter().flatten().map(|&v| v as f64).sum::<f64>() / n;
        let var = frames
            .iter()
            .flatten()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        Self {
            mean: mean as f32,
            std: var.sqrt().max(1e-6) as f32,
        }
    }

    pub fn apply<T: Scalar>(&self, v: T) -> T {
        (v - T::c(self.mean as f64)) / T::c(self.std as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Arch,
    Range,
}

struct BlockCache<T: Scalar> {
    input: Fmap<T>,
    conv: Option<ConvCache<T>>,
    w_eff: Vec<T>,
    bn: Option<BnCache<T>>,
    pre_bn: Option<Fmap<T>>,
    pre_act: Fmap<T>,
    act: Fmap<T>,
    masked: Fmap<T>,
    out_q: Option<AffineQuantizer<T>>,
}

struct Cache<T: Scalar> {
    mode: Mode,
    n: usize,
    blocks: Vec<BlockCache<T>>,
    pool_arg: Vec<usize>,
    logits: Vec<T>,
}

/// Quantizers in effect for one forward pass.
pub struct ResolvedQuant<T: Scalar> {
    pub input: AffineQuantizer<T>,
    pub acts: [AffineQuantizer<T>; 3],
    pub output: AffineQuantizer<T>,
    pub bits: [u32; 4],
}

impl<T: Scalar> ResolvedQuant<T> {
    /// Quantizer of the activations feeding layer `l`.
    pub fn layer_input(&self, l: usize) -> &AffineQuantizer<T> {
        if l == 0 {
            &self.input
        } else {
            &self.acts[l - 1]
        }
    }

    /// Quantizer applied to the output of layer `l`.
    pub fn layer_output(&self, l: usize) -> &AffineQuantizer<T> {
        if l == 3 {
            &self.output
        } else {
            &self.acts[l]
        }
    }
}

pub struct Network<T: Scalar = f32> {
    pub widths: Widths,
    pub norm: Normalizer,
    pub conv1: Conv2d<T>,
    pub bn1: Option<BatchNorm2d<T>>,
    pub conv2: Conv2d<T>,
    pub bn2: Option<BatchNorm2d<T>>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub masks: Option<MaskSet<T>>,
    pub quant: Option<QuantState<T>>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            widths: self.widths,
            norm: self.norm,
            conv1: self.conv1.clone(),
            bn1: self.bn1.clone(),
            conv2: self.conv2.clone(),
            bn2: self.bn2.clone(),
            fc1: self.fc1.clone(),
            fc2: self.fc2.clone(),
            masks: self.masks.clone(),
            quant: self.quant.clone(),
            cache: None,
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Network<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("widths", &self.widths)
            .field("bn", &self.bn1.is_some())
            .field("masks", &self.masks.is_some())
            .field("quant", &self.quant.as_ref().map(|q| q.spec))
            .finish()
    }
}

/// Quantized weights for the current forward pass, plus the bias snapped to
/// the 32-bit accumulator grid `step_w * step_in`.
pub fn quantized_params<T: Scalar>(w: &[T], b: &[T], bits: u32, step_in: T) -> Result<(Vec<T>, Vec<T>, AffineQuantizer<T>)> {
    let (mn, mx) = w
        .iter()
        .fold((T::zero(), T::zero()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let q = AffineQuantizer::covering(mn, mx, bits)?;
    let wq = w.iter().map(|&v| q.fake(v)).collect();
    let s = q.step() * step_in;
    let bq = b.iter().map(|&v| round_half_up(v / s) * s).collect();
    Ok((wq, bq, q))
}

impl<T: Scalar> Network<T> {
    pub fn new<R: Rng>(widths: Widths, rng: &mut R) -> Self {
        Self {
            widths,
            norm: Normalizer::default(),
            conv1: Conv2d::new(1, widths.conv1, KERNEL, PAD, rng),
            bn1: Some(BatchNorm2d::new(widths.conv1)),
            conv2: Conv2d::new(widths.conv1, widths.conv2, KERNEL, PAD, rng),
            bn2: Some(BatchNorm2d::new(widths.conv2)),
            fc1: Linear::new(widths.fc1_inputs(), widths.fc1, rng),
            fc2: Linear::new(widths.fc1, NUM_CLASSES, rng),
            masks: None,
            quant: None,
            cache: None,
        }
    }

    /// Seed topology with the default widths.
    pub fn seed<R: Rng>(rng: &mut R) -> Self {
        Self::new(Widths::SEED, rng)
    }

    /// Assembles a network from explicit parts; widths are taken from the
    /// layers.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        norm: Normalizer,
        conv1: Conv2d<T>,
        bn1: Option<BatchNorm2d<T>>,
        conv2: Conv2d<T>,
        bn2: Option<BatchNorm2d<T>>,
        fc1: Linear<T>,
        fc2: Linear<T>,
    ) -> Result<Self> {
        let widths = Widths {
            conv1: conv1.out_channels(),
            conv2: conv2.out_channels(),
            fc1: fc1.out_features(),
        };
        let ok = conv1.in_channels() == 1
            && conv2.in_channels() == widths.conv1
            && fc1.in_features() == widths.fc1_inputs()
            && fc2.in_features() == widths.fc1
            && fc2.out_features() == NUM_CLASSES
            && bn1.as_ref().map_or(true, |b| b.channels() == widths.conv1)
            && bn2.as_ref().map_or(true, |b| b.channels() == widths.conv2);
        if !ok {
            return Err(Error::Shape("inconsistent layer widths".into()));
        }
        Ok(Self {
            widths,
            norm,
            conv1,
            bn1,
            conv2,
            bn2,
            fc1,
            fc2,
            masks: None,
            quant: None,
            cache: None,
        })
    }

    pub fn param_count(&self) -> u64 {
        self.widths.param_count()
    }

    pub fn mac_count(&self) -> u64 {
        self.widths.mac_count()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        fn conv<A: Scalar, B: Scalar>(c: &Conv2d<A>) -> Conv2d<B> {
            Conv2d { weight: c.weight.cast(), bias: c.bias.cast(), pad: c.pad }
        }
        fn lin<A: Scalar, B: Scalar>(l: &Linear<A>) -> Linear<B> {
            Linear { weight: l.weight.cast(), bias: l.bias.cast() }
        }
        fn bn<A: Scalar, B: Scalar>(b: &BatchNorm2d<A>) -> BatchNorm2d<B> {
            BatchNorm2d {
                gamma: b.gamma.cast(),
                beta: b.beta.cast(),
                running_mean: b.running_mean.iter().map(|v| B::c(v.f64())).collect(),
                running_var: b.running_var.iter().map(|v| B::c(v.f64())).collect(),
                eps: B::c(b.eps.f64()),
                momentum: B::c(b.momentum.f64()),
            }
        }
        Network {
            widths: self.widths,
            norm: self.norm,
            conv1: conv(&self.conv1),
            bn1: self.bn1.as_ref().map(bn),
            conv2: conv(&self.conv2),
            bn2: self.bn2.as_ref().map(bn),
            fc1: lin(&self.fc1),
            fc2: lin(&self.fc2),
            masks: self.masks.as_ref().map(|m| m.cast()),
            quant: self.quant.as_ref().map(|q| q.cast()),
            cache: None,
        }
    }

    pub fn resolve_quant(&self) -> Result<Option<ResolvedQuant<T>>> {
        self.quant.as_ref().map(|q| q.resolve()).transpose()
    }

    /// Parameters in a fixed order, tagged by optimizer group.
    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        let mut v: Vec<(ParamKind, &mut Tensor<T>)> = Vec::new();
        v.push((ParamKind::Weight, &mut self.conv1.weight));
        v.push((ParamKind::Weight, &mut self.conv1.bias));
        if let Some(bn) = self.bn1.as_mut() {
            v.push((ParamKind::Weight, &mut bn.gamma));
            v.push((ParamKind::Weight, &mut bn.beta));
        }
        v.push((ParamKind::Weight, &mut self.conv2.weight));
        v.push((ParamKind::Weight, &mut self.conv2.bias));
        if let Some(bn) = self.bn2.as_mut() {
            v.push((ParamKind::Weight, &mut bn.gamma));
            v.push((ParamKind::Weight, &mut bn.beta));
        }
        v.push((ParamKind::Weight, &mut self.fc1.weight));
        v.push((ParamKind::Weight, &mut self.fc1.bias));
        v.push((ParamKind::Weight, &mut self.fc2.weight));
        v.push((ParamKind::Weight, &mut self.fc2.bias));
        if let Some(m) = self.masks.as_mut() {
            for l in m.layers.iter_mut() {
                v.push((ParamKind::Arch, &mut l.theta));
            }
        }
        if let Some(q) = self.quant.as_mut() {
            for a in q.acts.iter_mut() {
                v.push((ParamKind::Range, &mut a.beta));
            }
            v.push((ParamKind::Range, &mut q.output.beta));
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn normalized_input(&self, batch: &Tensor<T>) -> Result<Fmap<T>> {
        let [n, c, h, w] = batch.shape();
        if c != 1 || h != FRAME_SIDE || w != FRAME_SIDE || n == 0 {
            return Err(Error::Shape(format!(
                "expected (N, 1, {FRAME_SIDE}, {FRAME_SIDE}) input, got {:?}",
                batch.shape()
            )));
        }
        batch.check_finite("input batch")?;
        let mut x = Fmap::from_nchw(n, 1, h, w, batch.data());
        for v in x.data.iter_mut() {
            *v = self.norm.apply(*v);
        }
        Ok(x)
    }

    /// Runs the network on `(N, 1, 8, 8)` raw frames and returns `(N, 4, 1, 1)`
    /// logits. Intermediates are cached for [`Network::backward`].
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = self.normalized_input(batch)?;
        let n = x.n;
        let rq = self.resolve_quant()?;
        if self.quant.is_some() && (self.bn1.is_some() || self.bn2.is_some()) {
            return Err(Error::InvalidArgument(
                "fake-quantized forward needs batch-norm folded first".into(),
            ));
        }
        if let Some(rq) = rq.as_ref() {
            for v in x.data.iter_mut() {
                *v = rq.input.fake(*v);
            }
        }
        let active: Option<[Vec<bool>; 3]> = self.masks.as_ref().map(|m| m.active());
        let live: Option<[Vec<bool>; 3]> = self.masks.as_ref().map(|m| m.live());
        let skip_of = |l: usize| -> Option<Vec<bool>> {
            active.as_ref().map(|a| a[l].iter().map(|b| !b).collect())
        };
        let hw = POOLED_SIDE * POOLED_SIDE;

        let mut blocks = Vec::with_capacity(4);
        let mut pool_arg = Vec::new();
        let mut cur = x;
        for l in 0..4 {
            let (w_raw, b_raw) = self.layer_params(l);
            let (w_eff, b_eff) = match rq.as_ref() {
                Some(rq) => {
                    let (w, b, _) = quantized_params(w_raw, b_raw, rq.bits[l], rq.layer_input(l).step())?;
                    (w, b)
                }
                None => (w_raw.to_vec(), b_raw.to_vec()),
            };
            let rows = if l < 3 { live.as_ref().map(|v| v[l].clone()) } else { None };
            let (z, conv_cache, input) = match l {
                0 | 1 => {
                    let skip = if l == 1 { skip_of(0) } else { None };
                    let conv = if l == 0 { &self.conv1 } else { &self.conv2 };
                    let (z, cc) = conv.forward_with(&cur, &w_eff, &b_eff, rows.as_deref(), skip.as_deref());
                    (z, Some(cc), Fmap::zeros(0, 0, 0, 0))
                }
                _ => {
                    let skip: Option<Vec<bool>> = if l == 2 {
                        active.as_ref().map(|a| (0..self.widths.fc1_inputs()).map(|f| !a[1][f / hw]).collect())
                    } else {
                        skip_of(2)
                    };
                    let lin = if l == 2 { &self.fc1 } else { &self.fc2 };
                    let z = lin.forward_with(&cur, &w_eff, &b_eff, rows.as_deref(), skip.as_deref());
                    (z, None, cur.clone())
                }
            };
            let bn = match l {
                0 => self.bn1.as_mut(),
                1 => self.bn2.as_mut(),
                _ => None,
            };
            let (pre_act, bn_cache, pre_bn) = match (bn, mode) {
                (Some(bn), Mode::Train) => {
                    let (y, c) = bn.forward_train(&z, rows.as_deref());
                    (y, Some(c), None)
                }
                (Some(bn), Mode::Eval) => (bn.forward_eval(&z), None, Some(z)),
                (None, _) => (z, None, None),
            };
            let mut act = pre_act.clone();
            if l < 3 {
                act.data.iter_mut().for_each(|v| *v = ops::relu(*v));
            }
            let mut masked = act.clone();
            if l < 3 {
                if let Some(m) = self.masks.as_ref() {
                    let h = m.layers[l].binarized();
                    for (c, &on) in h.iter().enumerate() {
                        if !on {
                            masked.row_mut(c).iter_mut().for_each(|v| *v = *v * T::zero());
                        }
                    }
                }
            }
            let out_q = rq.as_ref().map(|rq| *rq.layer_output(l));
            let mut out = masked.clone();
            if let Some(q) = out_q.as_ref() {
                out.data.iter_mut().for_each(|v| *v = q.fake(*v));
            }
            blocks.push(BlockCache {
                input,
                conv: conv_cache,
                w_eff,
                bn: bn_cache,
                pre_bn,
                pre_act,
                act,
                masked,
                out_q,
            });
            cur = match l {
                0 => {
                    let (p, arg) = ops::maxpool2(&out);
                    pool_arg = arg;
                    p
                }
                1 => out.flatten(),
                _ => out,
            };
        }
        let logits_cn = cur.data;
        let mut logits = vec![T::zero(); n * NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            for j in 0..n {
                logits[j * NUM_CLASSES + c] = logits_cn[c * n + j];
            }
        }
        let out = Tensor::from_vec([n, NUM_CLASSES, 1, 1], logits)?;
        out.check_finite("logits")?;
        self.cache = Some(Cache {
            mode,
            n,
            blocks,
            pool_arg,
            logits: logits_cn,
        });
        Ok(out)
    }

    fn layer_params(&self, l: usize) -> (&[T], &[T]) {
        match l {
            0 => (self.conv1.weight.data(), self.conv1.bias.data()),
            1 => (self.conv2.weight.data(), self.conv2.bias.data()),
            2 => (self.fc1.weight.data(), self.fc1.bias.data()),
            _ => (self.fc2.weight.data(), self.fc2.bias.data()),
        }
    }

    /// Mean cross-entropy of the cached logits; fills every parameter
    /// gradient.
    pub fn backward(&mut self, labels: &[usize]) -> Result<T> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache)?;
        if labels.len() != cache.n {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: NUM_CLASSES,
            });
        }
        let (loss, dlogits) = ops::softmax_cross_entropy(&cache.logits, NUM_CLASSES, labels);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        self.backward_from(dlogits)?;
        Ok(loss)
    }

    /// Backpropagates an explicit `(classes x N)` logits gradient.
    pub fn backward_from(&mut self, dlogits: Vec<T>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::MissingCache)?;
        self.zero_grad();
        let n = cache.n;
        let hw = POOLED_SIDE * POOLED_SIDE;
        let live: Option<[Vec<bool>; 3]> = self.masks.as_ref().map(|m| m.live());
        let quant_ranges = self.quant.as_ref().map(|q| (q.acts.clone(), q.output.clone()));

        let mut d = Fmap {
            c: NUM_CLASSES,
            n,
            h: 1,
            w: 1,
            data: dlogits,
        };
        for l in (0..4).rev() {
            let b = &cache.blocks[l];
            if l == 1 {
                d = d.unflatten(self.widths.conv2, POOLED_SIDE, POOLED_SIDE);
            }
            if l == 0 {
                let a = &b.masked;
                d = ops::maxpool2_backward(&d, &cache.pool_arg, a.c, a.n, a.h, a.w);
            }
            // fake-quant STE and range gradient
            if let (Some(q), Some((acts, out))) = (b.out_q.as_ref(), quant_ranges.as_ref()) {
                let range = if l == 3 { out } else { &acts[l] };
                let mut dbeta = T::zero();
                for (g, &x) in d.data.iter_mut().zip(&b.masked.data) {
                    dbeta += *g * range.dclip_dbeta(q, x);
                    if x < q.alpha || x > q.beta {
                        *g = T::zero();
                    }
                }
                let qs = self.quant.as_mut().expect("quant state");
                let t = if l == 3 { &mut qs.output.beta } else { &mut qs.acts[l].beta };
                t.accumulate_grad(&[dbeta]);
            }
            if l < 3 {
                if let Some(m) = self.masks.as_mut() {
                    let mask = &mut m.layers[l];
                    let h = mask.binarized();
                    let mut dtheta = vec![T::zero(); h.len()];
                    for c in 0..h.len() {
                        let ste = mask.ste_weight(c);
                        let dr = d.row(c);
                        if ste != T::zero() {
                            dtheta[c] = ops::dot(dr, b.act.row(c)) * ste;
                        }
                        if !h[c] {
                            d.row_mut(c).iter_mut().for_each(|v| *v = T::zero());
                        }
                    }
                    mask.theta.accumulate_grad(&dtheta);
                }
                for (g, &u) in d.data.iter_mut().zip(&b.pre_act.data) {
                    if u <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            let bn = match l {
                0 => self.bn1.as_mut(),
                1 => self.bn2.as_mut(),
                _ => None,
            };
            if let Some(bn) = bn {
                match (cache.mode, b.bn.as_ref()) {
                    (Mode::Train, Some(bc)) => {
                        let (dx, dg, dbb) = bn.backward_train(bc, &d);
                        bn.gamma.accumulate_grad(&dg);
                        bn.beta.accumulate_grad(&dbb);
                        d = dx;
                    }
                    _ => {
                        let z = b.pre_bn.as_ref().ok_or(Error::MissingCache)?;
                        let mut dg = vec![T::zero(); d.c];
                        let mut dbb = vec![T::zero(); d.c];
                        for c in 0..d.c {
                            let is = T::one() / (bn.running_var[c] + bn.eps).sqrt();
                            let g = bn.gamma.data()[c];
                            let m = bn.running_mean[c];
                            for (gv, &zv) in d.row_mut(c).iter_mut().zip(z.row(c)) {
                                dg[c] += *gv * (zv - m) * is;
                                dbb[c] += *gv;
                                *gv = *gv * g * is;
                            }
                        }
                        bn.gamma.accumulate_grad(&dg);
                        bn.beta.accumulate_grad(&dbb);
                    }
                }
            }
            // need dx for input channels that are live upstream
            let need: Option<Vec<bool>> = match l {
                0 => None,
                1 => live.as_ref().map(|v| v[0].clone()),
                2 => live.as_ref().map(|v| (0..self.widths.fc1_inputs()).map(|f| v[1][f / hw]).collect()),
                _ => live.as_ref().map(|v| v[2].clone()),
            };
            let dx = match l {
                0 | 1 => {
                    let conv = if l == 0 { &mut self.conv1 } else { &mut self.conv2 };
                    let cc = b.conv.as_ref().expect("conv cache");
                    let (dw, db, dx) = conv.backward_with(cc, &b.w_eff, &d, need.as_deref());
                    conv.weight.accumulate_grad(&dw);
                    conv.bias.accumulate_grad(&db);
                    dx
                }
                _ => {
                    let lin = if l == 2 { &mut self.fc1 } else { &mut self.fc2 };
                    let (dw, db, dx) = lin.backward_with(&b.input, &b.w_eff, &d, need.as_deref());
                    lin.weight.accumulate_grad(&dw);
                    lin.bias.accumulate_grad(&db);
                    dx
                }
            };
            d = dx;
        }
        for (_, p) in self.params_mut() {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("gradient".into()));
                }
            }
        }
        Ok(())
    }

    /// Pre-quantization outputs of the four blocks from the last forward
    /// pass (post-mask activations for the hidden layers, raw logits for the
    /// last), channel-major.
    pub fn cached_block_outputs(&self) -> Option<[&[T]; 4]> {
        let c = self.cache.as_ref()?;
        Some([0, 1, 2, 3].map(|l| c.blocks[l].masked.data.as_slice()))
    }

    /// Eval-mode logits for a batch of raw frames, as `(N x 4)` rows.
    pub fn logits(&mut self, frames: &[[f32; FRAME_PIXELS]]) -> Result<Vec<[T; NUM_CLASSES]>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(256) {
            let t = frames_to_tensor::<T>(chunk);
            let l = self.forward(&t, Mode::Eval)?;
            for row in l.data().chunks_exact(NUM_CLASSES) {
                out.push([row[0], row[1], row[2], row[3]]);
            }
        }
        self.cache = None;
        Ok(out)
    }

    /// Eval-mode class predictions (first maximum wins ties).
    pub fn predict(&mut self, frames: &[[f32; FRAME_PIXELS]]) -> Result<Vec<usize>> {
        Ok(self.logits(frames)?.iter().map(|r| argmax(r)).collect())
    }
}

pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn frames_to_tensor<T: Scalar>(frames: &[[f32; FRAME_PIXELS]]) -> Tensor<T> {
    let data = frames.iter().flatten().map(|&v| T::c(v as f64)).collect();
    Tensor::from_vec([frames.len(), 1, FRAME_SIDE, FRAME_SIDE], data).expect("frame shape")
}
