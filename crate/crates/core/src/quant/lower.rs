//! Lowering of a fake-quantized network to pure integer parameters.
//!
//! Codes are stored signed: `q = code - 2^(N-1)`. A layer computes
//!
//! ```text
//! acc = bias + sum(q_w * q_x)              (32-bit)
//! q_o = clamp(((acc * M + 2^(s-1)) >> s) + z_o, -2^(N-1), 2^(N-1) - 1)
//! ```
//!
//! where `bias = round(b / (S_w S_x)) - z_x * sum(q_w)` absorbs the input
//! zero-point and `M / 2^s` approximates `S_w S_x / S_o`. ReLU needs no
//! instruction: the output range of hidden layers starts at real zero, so
//! the clamp performs it.

use serde::{Deserialize, Serialize};

use crate::dnas;
use crate::error::{Error, Result};
use crate::quant::quantizer::AffineQuantizer;
use crate::quant::spec::QuantSpec;
use crate::train::network::{quantized_params, Network, Normalizer, Widths, FRAME_PIXELS, FRAME_SIDE, KERNEL, NUM_CLASSES, PAD, POOLED_SIDE};

pub const LAYER_NAMES: [&str; 4] = ["conv1", "conv2", "fc1", "fc2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub name: String,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
    /// Width of the weights and of the input activations.
    pub bits: u32,
    pub out_bits: u32,
    /// Signed weight codes, `(out, in, k, k)`.
    pub weights: Vec<i32>,
    /// `round(b / (S_w S_x))`.
    pub bias_int: Vec<i32>,
    /// `bias_int - z_in * sum(q_w)`.
    pub bias: Vec<i32>,
    pub multiplier: u32,
    pub shift: u32,
    pub z_in: i32,
    pub z_out: i32,
    pub in_q: AffineQuantizer<f64>,
    pub w_q: AffineQuantizer<f64>,
    pub out_q: AffineQuantizer<f64>,
    /// 2x2 max-pool on the output codes.
    pub pool_after: bool,
}

impl QuantLayer {
    pub fn out_h(&self) -> usize {
        self.in_h + 2 * self.pad + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 2 * self.pad + 1 - self.kernel
    }

    /// Reduction length per output element.
    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn macs(&self) -> u64 {
        (self.out_ch * self.out_h() * self.out_w() * self.fan_in()) as u64
    }

    pub fn out_range(&self) -> (i32, i32) {
        lane_range(self.out_bits)
    }

    /// Worst-case magnitude of any partial sum, starting from the bias.
    pub fn accumulator_bound(&self) -> i128 {
        let xmax = 1i128 << (self.bits - 1);
        let fan = self.fan_in();
        (0..self.out_ch)
            .map(|o| {
                let w = &self.weights[o * fan..(o + 1) * fan];
                let s: i128 = w.iter().map(|&v| (v as i128).abs() * xmax).sum();
                s + (self.bias[o] as i128).abs()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn check_overflow(&self) -> Result<()> {
        let b = self.accumulator_bound();
        if b > i32::MAX as i128 {
            return Err(Error::AccumulatorOverflow {
                layer: self.name.clone(),
                bound: b,
            });
        }
        // The shifted product must also fit a 32-bit register before the clamp.
        let shifted = (b * self.multiplier as i128 + (1i128 << (self.shift - 1))) >> self.shift;
        if shifted + (self.z_out as i128).abs() > i32::MAX as i128 {
            return Err(Error::AccumulatorOverflow {
                layer: self.name.clone(),
                bound: shifted,
            });
        }
        Ok(())
    }

    /// Requantizes one accumulator to an output code.
    #[inline]
    pub fn requantize(&self, acc: i32) -> i32 {
        let (lo, hi) = self.out_range();
        (requantize(acc, self.multiplier, self.shift) + self.z_out as i64).clamp(lo as i64, hi as i64) as i32
    }
}

/// Signed code range of an `bits`-wide lane.
pub fn lane_range(bits: u32) -> (i32, i32) {
    let h = 1i32 << (bits - 1);
    (-h, h - 1)
}

/// `(acc * m + 2^(s-1)) >> s` in 64-bit arithmetic (round half up).
#[inline]
pub fn requantize(acc: i32, m: u32, s: u32) -> i64 {
    (acc as i64 * m as i64 + (1i64 << (s - 1))) >> s
}

/// Fixed-point pair `(M, s)` with `M / 2^s ~ ratio`, `M < 2^31`, `1 <= s <= 62`.
/// `M` is normalised into `[2^30, 2^31)` unless the shift bound forces it
/// lower.
pub fn requant_params(ratio: f64) -> Result<(u32, u32)> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!("requantization ratio {ratio}")));
    }
    let e = ratio.log2().floor() as i32;
    let mut s = 30 - e;
    if s < 1 {
        return Err(Error::InvalidArgument(format!("requantization ratio {ratio} too large")));
    }
    s = s.min(62);
    let mut m = (ratio * 2f64.powi(s) + 0.5).floor();
    if m >= 2f64.powi(31) {
        s -= 1;
        m = (ratio * 2f64.powi(s) + 0.5).floor();
    }
    if s < 1 || m >= 2f64.powi(31) {
        return Err(Error::InvalidArgument(format!("requantization ratio {ratio} too large")));
    }
    Ok((m as u32, s as u32))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedNetwork {
    pub spec: QuantSpec,
    pub norm: Normalizer,
    pub widths: Widths,
    pub layers: Vec<QuantLayer>,
}

impl QuantizedNetwork {
    pub fn input_quantizer(&self) -> &AffineQuantizer<f64> {
        &self.layers[0].in_q
    }

    /// Normalises and quantizes a raw frame to signed input codes.
    pub fn quantize_frame(&self, frame: &[f32; FRAME_PIXELS]) -> Vec<i32> {
        let q = self.input_quantizer();
        frame.iter().map(|&v| q.signed_code(self.norm.apply(v) as f64)).collect()
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| (l.weights.len() + l.bias.len()) as u64).sum()
    }

    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(|l| l.macs()).sum()
    }

    /// Parameter storage: weights at their lane width plus 32-bit biases.
    pub fn memory_bytes(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| (l.weights.len() as u64 * l.bits as u64).div_ceil(8) + 4 * l.bias.len() as u64)
            .sum()
    }
}

/// Lowers a calibrated fake-quantized network. Masks are resolved by
/// extraction first; batch-norm must already be folded.
pub fn lower_to_integer(net: &Network<f32>) -> Result<QuantizedNetwork> {
    let qs = net
        .quant
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("network has no quantization state".into()))?;
    if net.bn1.is_some() || net.bn2.is_some() {
        return Err(Error::InvalidArgument("batch-norm must be folded before lowering".into()));
    }
    let net = if net.masks.is_some() { dnas::extract(net)? } else { net.clone() };
    let rq = qs.resolve()?;
    let w = net.widths;
    let geo = [
        (LayerKind::Conv, 1, w.conv1, KERNEL, PAD, FRAME_SIDE, true),
        (LayerKind::Conv, w.conv1, w.conv2, KERNEL, PAD, POOLED_SIDE, false),
        (LayerKind::Linear, w.fc1_inputs(), w.fc1, 1, 0, 1, false),
        (LayerKind::Linear, w.fc1, NUM_CLASSES, 1, 0, 1, false),
    ];
    let params = [
        (net.conv1.weight.data(), net.conv1.bias.data()),
        (net.conv2.weight.data(), net.conv2.bias.data()),
        (net.fc1.weight.data(), net.fc1.bias.data()),
        (net.fc2.weight.data(), net.fc2.bias.data()),
    ];
    let mut layers = Vec::with_capacity(4);
    for l in 0..4 {
        let (kind, in_ch, out_ch, kernel, pad, side, pool_after) = geo[l];
        let in_q32 = *rq.layer_input(l);
        let out_q32 = *rq.layer_output(l);
        let bits = rq.bits[l];
        let (wts, b) = params[l];
        let (_, _, w_q32) = quantized_params(wts, b, bits, in_q32.step())?;
        let in_q: AffineQuantizer<f64> = in_q32.cast().on_lattice();
        let w_q: AffineQuantizer<f64> = w_q32.cast().on_lattice();
        let out_q: AffineQuantizer<f64> = out_q32.cast().on_lattice();
        let weights: Vec<i32> = wts.iter().map(|&v| w_q32.signed_code(v)).collect();
        // same single-precision arithmetic as the training graph
        let s_acc32 = w_q32.step() * in_q32.step();
        let bias_int: Vec<i32> = b
            .iter()
            .map(|&v| {
                let r = (v / s_acc32 + 0.5).floor() as f64;
                if r.abs() > i32::MAX as f64 {
                    Err(Error::AccumulatorOverflow {
                        layer: LAYER_NAMES[l].into(),
                        bound: r as i128,
                    })
                } else {
                    Ok(r as i32)
                }
            })
            .collect::<Result<_>>()?;
        let z_in = in_q.zero_point();
        let fan = in_ch * kernel * kernel;
        let bias = (0..out_ch)
            .map(|o| {
                let sw: i64 = weights[o * fan..(o + 1) * fan].iter().map(|&v| v as i64).sum();
                let v = bias_int[o] as i64 - z_in as i64 * sw;
                i32::try_from(v).map_err(|_| Error::AccumulatorOverflow {
                    layer: LAYER_NAMES[l].into(),
                    bound: v as i128,
                })
            })
            .collect::<Result<Vec<i32>>>()?;
        let ratio = w_q.step() * in_q.step() / out_q.step();
        let (multiplier, shift) = requant_params(ratio)?;
        let layer = QuantLayer {
            name: LAYER_NAMES[l].into(),
            kind,
            in_ch,
            out_ch,
            kernel,
            pad,
            in_h: side,
            in_w: side,
            bits,
            out_bits: out_q.bits,
            weights,
            bias_int,
            bias,
            multiplier,
            shift,
            z_in,
            z_out: out_q.zero_point(),
            in_q,
            w_q,
            out_q,
            pool_after,
        };
        layer.check_overflow()?;
        layers.push(layer);
    }
    Ok(QuantizedNetwork {
        spec: qs.spec,
        norm: net.norm,
        widths: w,
        layers,
    })
}

/// Per-layer f64 fake-quant reference working on codes: inputs and weights
/// are dequantized, the real-valued output is requantized with the output
/// quantizer. Input codes are CHW.
pub fn reference_layer(layer: &QuantLayer, input: &[i32]) -> Vec<i32> {
    let half_in = 1i64 << (layer.bits - 1);
    let x: Vec<f64> = input
        .iter()
        .map(|&q| layer.in_q.dequantize((q as i64 + half_in) as u32))
        .collect();
    let w: Vec<f64> = layer
        .weights
        .iter()
        .map(|&q| layer.w_q.dequantize((q as i64 + half_in) as u32))
        .collect();
    let s_acc = layer.w_q.step() * layer.in_q.step();
    let (oh, ow, k) = (layer.out_h(), layer.out_w(), layer.kernel);
    let (ih, iw) = (layer.in_h, layer.in_w);
    let mut out = vec![0; layer.out_ch * oh * ow];
    for o in 0..layer.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut z = layer.bias_int[o] as f64 * s_acc;
                for c in 0..layer.in_ch {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy as isize + ky as isize - layer.pad as isize;
                            let ix = ox as isize + kx as isize - layer.pad as isize;
                            if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                continue;
                            }
                            let xv = x[(c * ih + iy as usize) * iw + ix as usize];
                            z += w[((o * layer.in_ch + c) * k + ky) * k + kx] * xv;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = layer.out_q.signed_code(z);
            }
        }
    }
    out
}

/// 2x2 max-pool over CHW codes.
pub fn maxpool_codes(x: &[i32], c: usize, h: usize, w: usize) -> Vec<i32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let at = |dy: usize, dx: usize| x[(ci * h + 2 * oy + dy) * w + 2 * ox + dx];
                out[(ci * oh + oy) * ow + ox] = at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1));
            }
        }
    }
    out
}

/// Whole-network fake-quant reference on input codes; returns logit codes.
pub fn reference_network(qnet: &QuantizedNetwork, input: &[i32]) -> Vec<i32> {
    let mut x = input.to_vec();
    for l in &qnet.layers {
        x = reference_layer(l, &x);
        if l.pool_after {
            x = maxpool_codes(&x, l.out_ch, l.out_h(), l.out_w());
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requant_pair_is_accurate() {
        for r in [1e-9, 3.7e-5, 0.01, 0.5, 1.0, 3.0, 1234.5] {
            let (m, s) = requant_params(r).unwrap();
            assert!(m < 1 << 31);
            let approx = m as f64 / 2f64.powi(s as i32);
            assert!(((approx - r) / r).abs() < 2f64.powi(-24), "{r}: {approx}");
        }
    }

    #[test]
    fn requantize_rounds_half_up() {
        // ratio 1/2: 3 * 0.5 = 1.5 -> 2, -3 * 0.5 = -1.5 -> -1
        assert_eq!(requantize(3, 1 << 30, 31), 2);
        assert_eq!(requantize(-3, 1 << 30, 31), -1);
        assert_eq!(requantize(1, 1 << 30, 31), 1);
        assert_eq!(requantize(0, 1 << 30, 31), 0);
    }

    #[test]
    fn pool_takes_signed_max() {
        let x = vec![-8, -3, -5, -7];
        assert_eq!(maxpool_codes(&x, 1, 2, 2), vec![-3]);
    }
}
