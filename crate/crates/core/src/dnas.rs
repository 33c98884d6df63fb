//! Channel-mask architecture search over the seed network.
//!
//! Every output channel of conv1, conv2 and fc1 carries a real parameter
//! `theta`; the channel is on iff `theta >= 0`. The mask multiplies the
//! post-ReLU activation, which zeroes the whole affine path of the channel
//! (conv weights, bias and batch-norm shift alike). The Heaviside gradient
//! is replaced by a straight-through estimate that passes inside
//! `|theta| <= 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::train::layers::{BatchNorm2d, Conv2d, Linear};
use crate::train::network::{Network, Widths, KERNEL, NUM_CLASSES, POOLED_SIDE};
use crate::train::{fit_with, TrainConfig, TrainReport, FRAME_PIXELS};

pub const MASKED_LAYERS: [&str; 3] = ["conv1", "conv2", "fc1"];
pub const THETA_INIT: f64 = 1.0;
/// Channels with `theta` below this are neither computed nor able to
/// receive gradient.
pub const STE_LIMIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMask<T: Scalar = f32> {
    pub theta: Tensor<T>,
}

impl<T: Scalar> ChannelMask<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            theta: Tensor::full([channels, 1, 1, 1], T::c(THETA_INIT)),
        }
    }

    pub fn from_theta(theta: Vec<T>) -> Self {
        let n = theta.len();
        Self {
            theta: Tensor::from_vec([n, 1, 1, 1], theta).expect("shape"),
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn binarized(&self) -> Vec<bool> {
        self.theta.data().iter().map(|&t| t >= T::zero()).collect()
    }

    pub fn active_count(&self) -> usize {
        self.theta.data().iter().filter(|&&t| t >= T::zero()).count()
    }

    /// Channels that are computed in the forward pass.
    pub fn live(&self) -> Vec<bool> {
        self.theta.data().iter().map(|&t| t >= -T::c(STE_LIMIT)).collect()
    }

    /// Straight-through derivative of the step at channel `c`.
    pub fn ste_weight(&self, c: usize) -> T {
        if self.theta.data()[c].abs() <= T::c(STE_LIMIT) {
            T::one()
        } else {
            T::zero()
        }
    }

    /// Forces the largest-theta channel on when none is active. Returns
    /// whether a channel was revived.
    pub fn keep_alive(&mut self) -> bool {
        if self.active_count() > 0 || self.is_empty() {
            return false;
        }
        let best = self
            .theta
            .data()
            .iter()
            .enumerate()
            .fold(0, |b, (i, &t)| if t > self.theta.data()[b] { i } else { b });
        self.theta.data_mut()[best] = T::zero();
        true
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet<T: Scalar = f32> {
    pub layers: [ChannelMask<T>; 3],
}

impl<T: Scalar> MaskSet<T> {
    pub fn new(widths: Widths) -> Self {
        let [a, b, c] = widths.as_array();
        Self {
            layers: [ChannelMask::new(a), ChannelMask::new(b), ChannelMask::new(c)],
        }
    }

    pub fn active(&self) -> [Vec<bool>; 3] {
        [0, 1, 2].map(|l| self.layers[l].binarized())
    }

    pub fn live(&self) -> [Vec<bool>; 3] {
        [0, 1, 2].map(|l| self.layers[l].live())
    }

    pub fn counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|l| self.layers[l].active_count())
    }

    /// Widths of the network that extraction would produce.
    pub fn extracted_widths(&self) -> Widths {
        let [conv1, conv2, fc1] = self.counts();
        Widths { conv1, conv2, fc1 }
    }

    pub fn keep_alive(&mut self) -> bool {
        let mut any = false;
        for l in self.layers.iter_mut() {
            any |= l.keep_alive();
        }
        any
    }

    pub fn cast<U: Scalar>(&self) -> MaskSet<U> {
        MaskSet {
            layers: [0, 1, 2].map(|l| ChannelMask { theta: self.layers[l].theta.cast() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostMetric {
    Params,
    Macs,
}

impl std::str::FromStr for CostMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "params" => Ok(Self::Params),
            "macs" => Ok(Self::Macs),
            other => Err(Error::InvalidArgument(format!("unknown cost metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for CostMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Params => "params",
            Self::Macs => "macs",
        })
    }
}

/// Cost of an architecture with `a` active channels per masked layer, and
/// its partial derivatives with respect to each count.
pub fn cost_of_counts(a: [f64; 3], metric: CostMetric) -> (f64, [f64; 3]) {
    let k = (KERNEL * KERNEL) as f64;
    let s = (POOLED_SIDE * POOLED_SIDE) as f64;
    let o = NUM_CLASSES as f64;
    let [a1, a2, a3] = a;
    match metric {
        CostMetric::Params => {
            let c = (a1 * k + a1) + (a2 * a1 * k + a2) + (a3 * a2 * s + a3) + (o * a3 + o);
            let g = [k + 1.0 + a2 * k, a1 * k + 1.0 + a3 * s, a2 * s + 1.0 + o];
            (c, g)
        }
        CostMetric::Macs => {
            let full = (4.0 * s) * k;
            let c = a1 * full + a2 * a1 * k * s + a3 * a2 * s + o * a3;
            let g = [full + a2 * k * s, a1 * k * s + a3 * s, a2 * s + o];
            (c, g)
        }
    }
}

/// Integer cost of a concrete architecture.
pub fn exact_cost(w: Widths, metric: CostMetric) -> u64 {
    match metric {
        CostMetric::Params => w.param_count(),
        CostMetric::Macs => w.mac_count(),
    }
}

/// Cost of the binarized masks in raw counts; the second value is the
/// straight-through gradient per layer and channel.
pub fn mask_cost<T: Scalar>(masks: &MaskSet<T>, metric: CostMetric) -> (f64, [Vec<f64>; 3]) {
    let counts = masks.counts().map(|c| c as f64);
    let (c, g) = cost_of_counts(counts, metric);
    let grads = [0, 1, 2].map(|l| {
        let m = &masks.layers[l];
        (0..m.len()).map(|i| g[l] * m.ste_weight(i).f64()).collect()
    });
    (c, grads)
}

/// Attaches fresh masks (all channels on) to `net`.
pub fn attach_masks<T: Scalar>(net: &mut Network<T>) {
    net.masks = Some(MaskSet::new(net.widths));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub metric: CostMetric,
    pub train: TrainConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            metric: CostMetric::Params,
            train: TrainConfig::default(),
        }
    }
}

/// Default strength grid: eight log-spaced values from 1e-6 to 1e-4, the
/// span between "barely prunes" and "keeps one channel per layer" for the
/// parameter count of the seed.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..8).map(|i| 10f64.powf(-6.0 + 2.0 * i as f64 / 7.0)).collect()
}

/// Jointly trains weights and masks on `loss + lambda * cost`. Masks are
/// attached if absent; an all-off layer is revived afterwards.
pub fn search(
    net: &mut Network<f32>,
    frames: &[[f32; FRAME_PIXELS]],
    labels: &[usize],
    lambda: f64,
    cfg: &SearchConfig,
) -> Result<TrainReport> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be a non-negative finite number, got {lambda}")));
    }
    if net.masks.is_none() {
        attach_masks(net);
    }
    let metric = cfg.metric;
    let mut train = cfg.train.clone();
    train.freeze_masks = false;
    let report = fit_with(net, frames, labels, &train, |n| {
        let masks = n.masks.as_mut().expect("masks attached");
        let (c, g) = mask_cost(masks, metric);
        for (l, gl) in g.iter().enumerate() {
            let add: Vec<f32> = gl.iter().map(|&v| (lambda * v) as f32).collect();
            masks.layers[l].theta.accumulate_grad(&add);
        }
        Ok((lambda * c) as f32)
    })?;
    if let Some(m) = net.masks.as_mut() {
        m.keep_alive();
    }
    Ok(report)
}

fn select<T: Copy>(src: &[T], keep: &[bool]) -> Vec<T> {
    src.iter().zip(keep).filter(|(_, &k)| k).map(|(&v, _)| v).collect()
}

/// Rows of an `(rows x cols)` matrix and a subset of its columns.
fn slice_matrix<T: Scalar>(w: &[T], cols: usize, keep_rows: &[bool], keep_cols: &[bool]) -> Vec<T> {
    let mut out = Vec::new();
    for (r, &kr) in keep_rows.iter().enumerate() {
        if kr {
            out.extend(select(&w[r * cols..(r + 1) * cols], keep_cols));
        }
    }
    out
}

fn slice_bn<T: Scalar>(bn: &BatchNorm2d<T>, keep: &[bool]) -> BatchNorm2d<T> {
    let n = keep.iter().filter(|&&k| k).count();
    BatchNorm2d {
        gamma: Tensor::from_vec([n, 1, 1, 1], select(bn.gamma.data(), keep)).expect("shape"),
        beta: Tensor::from_vec([n, 1, 1, 1], select(bn.beta.data(), keep)).expect("shape"),
        running_mean: select(&bn.running_mean, keep),
        running_var: select(&bn.running_var, keep),
        eps: bn.eps,
        momentum: bn.momentum,
    }
}

/// Materialises the masked sub-network: inactive channels are removed from
/// their layer's outputs and from the next layer's inputs.
pub fn extract<T: Scalar>(net: &Network<T>) -> Result<Network<T>> {
    let Some(masks) = net.masks.as_ref() else {
        let mut out = net.clone();
        out.masks = None;
        return Ok(out);
    };
    for (l, name) in MASKED_LAYERS.iter().enumerate() {
        if masks.layers[l].active_count() == 0 {
            return Err(Error::EmptyLayer { layer: name });
        }
    }
    let [k1, k2, k3] = masks.active();
    let [a1, a2, a3] = masks.counts();
    let kk = KERNEL * KERNEL;
    let hw = POOLED_SIDE * POOLED_SIDE;

    let w1 = slice_matrix(net.conv1.weight.data(), kk, &k1, &vec![true; kk]);
    let conv1 = Conv2d {
        weight: Tensor::from_vec([a1, 1, KERNEL, KERNEL], w1)?,
        bias: Tensor::from_vec([a1, 1, 1, 1], select(net.conv1.bias.data(), &k1))?,
        pad: net.conv1.pad,
    };
    let cols2: Vec<bool> = (0..net.widths.conv1 * kk).map(|i| k1[i / kk]).collect();
    let conv2 = Conv2d {
        weight: Tensor::from_vec(
            [a2, a1, KERNEL, KERNEL],
            slice_matrix(net.conv2.weight.data(), net.widths.conv1 * kk, &k2, &cols2),
        )?,
        bias: Tensor::from_vec([a2, 1, 1, 1], select(net.conv2.bias.data(), &k2))?,
        pad: net.conv2.pad,
    };
    let cols3: Vec<bool> = (0..net.widths.fc1_inputs()).map(|i| k2[i / hw]).collect();
    let fc1 = Linear {
        weight: Tensor::from_vec(
            [a3, a2 * hw, 1, 1],
            slice_matrix(net.fc1.weight.data(), net.widths.fc1_inputs(), &k3, &cols3),
        )?,
        bias: Tensor::from_vec([a3, 1, 1, 1], select(net.fc1.bias.data(), &k3))?,
    };
    let fc2 = Linear {
        weight: Tensor::from_vec(
            [NUM_CLASSES, a3, 1, 1],
            slice_matrix(net.fc2.weight.data(), net.widths.fc1, &[true; NUM_CLASSES], &k3),
        )?,
        bias: net.fc2.bias.clone(),
    };
    let mut out = Network::from_parts(
        net.norm,
        conv1,
        net.bn1.as_ref().map(|b| slice_bn(b, &k1)),
        conv2,
        net.bn2.as_ref().map(|b| slice_bn(b, &k2)),
        fc1,
        fc2,
    )?;
    out.quant = net.quant.clone();
    Ok(out)
}

/// The seed network with the weights of every masked-out channel zeroed
/// (conv/linear rows, bias and batch-norm affine), and no masks attached.
pub fn zeroed_equivalent<T: Scalar>(net: &Network<T>) -> Network<T> {
    let mut out = net.clone();
    out.masks = None;
    let Some(masks) = net.masks.as_ref() else {
        return out;
    };
    let [k1, k2, k3] = masks.active();
    fn zero_rows<T: Scalar>(t: &mut Tensor<T>, keep: &[bool]) {
        let cols = t.len() / keep.len();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                t.data_mut()[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
    zero_rows(&mut out.conv1.weight, &k1);
    zero_rows(&mut out.conv1.bias, &k1);
    zero_rows(&mut out.conv2.weight, &k2);
    zero_rows(&mut out.conv2.bias, &k2);
    zero_rows(&mut out.fc1.weight, &k3);
    zero_rows(&mut out.fc1.bias, &k3);
    for (bn, keep) in [(out.bn1.as_mut(), &k1), (out.bn2.as_mut(), &k2)] {
        if let Some(bn) = bn {
            zero_rows(&mut bn.gamma, keep);
            zero_rows(&mut bn.beta, keep);
        }
    }
    out
}
