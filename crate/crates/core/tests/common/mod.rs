#![allow(dead_code)]

pub mod criteria;

use ircount::quant::lower::{lane_range, requant_params, LayerKind, QuantLayer};
use ircount::quant::AffineQuantizer;
use ircount::tensor::Tensor;
use ircount::train::network::{Mode, Network, Widths};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
/// Fallback step when the main stencil straddles a ReLU or max-pool switch.
pub const FD_KINK_STEP: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-3;
/// Absolute floor for gradients that are zero up to rounding.
pub const FD_ABS_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_REL_TOL * analytic.abs().max(numeric.abs()) + FD_ABS_FLOOR
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

pub fn random_frames(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..n * 64).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec([n, 1, 8, 8], data).unwrap()
}

pub fn small_net(seed: u64, widths: Widths) -> Network<f64> {
    let mut r = rng(seed);
    Network::<f64>::new(widths, &mut r)
}

/// Loss of `net` on `(x, labels)` in the given mode without touching
/// running statistics.
pub fn loss_of(net: &Network<f64>, x: &Tensor<f64>, labels: &[usize], mode: Mode) -> f64 {
    let mut n = net.clone();
    n.forward(x, mode).unwrap();
    n.backward(labels).unwrap()
}

pub struct LayerShape {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub side: usize,
    pub bits: u32,
    pub out_bits: u32,
}

/// Random integer layer with weights spanning the full lane range and a
/// requantization ratio that keeps outputs mostly unsaturated.
pub fn random_layer(shape: &LayerShape, rng: &mut ChaCha8Rng) -> QuantLayer {
    let (kernel, pad, side) = match shape.kind {
        LayerKind::Conv => (3, 1, shape.side),
        LayerKind::Linear => (1, 0, 1),
    };
    let (lo, hi) = lane_range(shape.bits);
    let (olo, ohi) = lane_range(shape.out_bits);
    let fan = shape.in_ch * kernel * kernel;
    let weights: Vec<i32> = (0..shape.out_ch * fan).map(|_| rng.gen_range(lo..=hi)).collect();
    let z_in = rng.gen_range(lo..=hi);
    let bias_int: Vec<i32> = (0..shape.out_ch).map(|_| rng.gen_range(-2000..=2000)).collect();
    let bias = (0..shape.out_ch)
        .map(|o| bias_int[o] - z_in * weights[o * fan..(o + 1) * fan].iter().sum::<i32>())
        .collect();
    let spread = (fan as f64).sqrt() * (hi as f64) * (hi as f64);
    let ratio = ohi as f64 / spread * rng.gen_range(0.5..4.0);
    let (multiplier, shift) = requant_params(ratio).unwrap();
    let z_out = if rng.gen_bool(0.5) { olo } else { 0 };
    let q = |bits| AffineQuantizer::<f64>::unsigned(1.0, bits).unwrap();
    QuantLayer {
        name: "layer".into(),
        kind: shape.kind,
        in_ch: shape.in_ch,
        out_ch: shape.out_ch,
        kernel,
        pad,
        in_h: side,
        in_w: side,
        bits: shape.bits,
        out_bits: shape.out_bits,
        weights,
        bias_int,
        bias,
        multiplier,
        shift,
        z_in,
        z_out,
        in_q: q(shape.bits),
        w_q: q(shape.bits),
        out_q: q(shape.out_bits),
        pool_after: false,
    }
}

pub fn random_codes(n: usize, bits: u32, rng: &mut ChaCha8Rng) -> Vec<i32> {
    let (lo, hi) = lane_range(bits);
    (0..n).map(|_| rng.gen_range(lo..=hi)).collect()
}
