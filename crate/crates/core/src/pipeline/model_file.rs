//! Single-file model artifacts.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "IRCM"
//! 4       2     format version, u16 little-endian (currently 1)
//! 6       4     manifest length M, u32 little-endian
//! 10      M     manifest, UTF-8 JSON
//! then, for every entry of manifest.blobs in order:
//!         4     blob length B, u32 little-endian
//!         B     blob bytes
//!         32    SHA-256 of the blob bytes
//! ```
//!
//! The manifest records the stage (`float`, `nas`, `qat` or `int`), widths,
//! input normalisation, provenance, the precision spec and ranges, per-layer
//! integer headers, and a table of blobs with their lengths and hex
//! digests. Float tensors are stored as `f32` little-endian in their natural
//! order (conv `(out, in, k, k)`, linear `(out, in)`). Integer weights are
//! the packed OHWI words of the kernels (`ceil(C_in / L)` words per output
//! channel and tap, unused lanes zero), biases are `i32` little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dnas::{ChannelMask, MaskSet};
use crate::error::{Error, Result};
use crate::kernels::host::pack_weights;
use crate::kernels::packed::PackedWeights;
use crate::quant::lower::{LayerKind, QuantLayer, QuantizedNetwork};
use crate::quant::qat::OUTPUT_BITS;
use crate::quant::{AffineQuantizer, LearnedRange, QuantSpec, QuantState, RangeKind};
use crate::tensor::Tensor;
use crate::train::layers::{BatchNorm2d, Conv2d, Linear};
use crate::train::network::{Network, Normalizer, Widths, KERNEL, NUM_CLASSES, PAD};

pub const MAGIC: [u8; 4] = *b"IRCM";
pub const VERSION: u16 = 1;
const FORMAT_NAME: &str = "ircount-model";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Float,
    Nas,
    Qat,
    Int,
}

/// How the model was produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    /// Sessions the model was last trained on.
    pub sessions: Vec<u32>,
}

#[derive(Clone, Debug)]
pub enum Model {
    Float(Network<f32>),
    Int(QuantizedNetwork),
}

impl Model {
    pub fn stage(&self) -> Stage {
        match self {
            Model::Int(_) => Stage::Int,
            Model::Float(n) if n.quant.is_some() => Stage::Qat,
            Model::Float(n) if n.masks.is_some() => Stage::Nas,
            Model::Float(_) => Stage::Float,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Artifact {
    pub model: Model,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    stage: Stage,
    provenance: Provenance,
    widths: Widths,
    normalizer: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_norm: Option<BnHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quant: Option<QuantHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    integer: Option<IntHeader>,
    blobs: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct BnHeader {
    eps: f32,
    momentum: f32,
}

#[derive(Serialize, Deserialize)]
struct QuantHeader {
    spec: QuantSpec,
    input: AffineQuantizer<f32>,
    act_beta: [f32; 3],
    logit_beta: f32,
}

#[derive(Serialize, Deserialize)]
struct IntHeader {
    spec: QuantSpec,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    name: String,
    kind: LayerKind,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    bits: u32,
    out_bits: u32,
    multiplier: u32,
    shift: u32,
    z_in: i32,
    z_out: i32,
    in_q: AffineQuantizer<f64>,
    w_q: AffineQuantizer<f64>,
    out_q: AffineQuantizer<f64>,
    pool_after: bool,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    bytes: u64,
    sha256: String,
}

fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn i32_bytes(v: &[i32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn u32_bytes(v: &[u32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn words<const N: usize>(b: &[u8]) -> impl Iterator<Item = [u8; N]> + '_ {
    b.chunks_exact(N).map(|c| c.try_into().expect("chunk"))
}

struct Blobs(Vec<(String, Vec<u8>)>);

impl Blobs {
    fn put(&mut self, name: &str, bytes: Vec<u8>) {
        self.0.push((name.to_string(), bytes));
    }

    fn take(&self, name: &str, len: usize, elem: usize) -> Result<&[u8]> {
        let b = self
            .0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Format(format!("missing blob `{name}`")))?;
        if b.len() != len * elem {
            return Err(Error::Format(format!("blob `{name}` has {} bytes, expected {}", b.len(), len * elem)));
        }
        Ok(b)
    }

    fn f32s(&self, name: &str, len: usize) -> Result<Vec<f32>> {
        Ok(words::<4>(self.take(name, len, 4)?).map(f32::from_le_bytes).collect())
    }

    fn i32s(&self, name: &str, len: usize) -> Result<Vec<i32>> {
        Ok(words::<4>(self.take(name, len, 4)?).map(i32::from_le_bytes).collect())
    }

    fn u32s(&self, name: &str, len: usize) -> Result<Vec<u32>> {
        Ok(words::<4>(self.take(name, len, 4)?).map(u32::from_le_bytes).collect())
    }

    fn tensor(&self, name: &str, shape: [usize; 4]) -> Result<Tensor<f32>> {
        Tensor::from_vec(shape, self.f32s(name, shape.iter().product())?)
    }
}

fn float_blobs(net: &Network<f32>, blobs: &mut Blobs) {
    blobs.put("conv1.weight", f32_bytes(net.conv1.weight.data()));
    blobs.put("conv1.bias", f32_bytes(net.conv1.bias.data()));
    for (name, bn) in [("bn1", &net.bn1), ("bn2", &net.bn2)] {
        if let Some(bn) = bn {
            blobs.put(&format!("{name}.gamma"), f32_bytes(bn.gamma.data()));
            blobs.put(&format!("{name}.beta"), f32_bytes(bn.beta.data()));
            blobs.put(&format!("{name}.running_mean"), f32_bytes(&bn.running_mean));
            blobs.put(&format!("{name}.running_var"), f32_bytes(&bn.running_var));
        }
        if name == "bn1" {
            blobs.put("conv2.weight", f32_bytes(net.conv2.weight.data()));
            blobs.put("conv2.bias", f32_bytes(net.conv2.bias.data()));
        }
    }
    blobs.put("fc1.weight", f32_bytes(net.fc1.weight.data()));
    blobs.put("fc1.bias", f32_bytes(net.fc1.bias.data()));
    blobs.put("fc2.weight", f32_bytes(net.fc2.weight.data()));
    blobs.put("fc2.bias", f32_bytes(net.fc2.bias.data()));
    if let Some(m) = &net.masks {
        for (name, mask) in crate::dnas::MASKED_LAYERS.iter().zip(&m.layers) {
            blobs.put(&format!("mask.{name}"), f32_bytes(mask.theta.data()));
        }
    }
}

fn int_blobs(q: &QuantizedNetwork, blobs: &mut Blobs) -> Result<()> {
    for l in &q.layers {
        blobs.put(&format!("{}.weights", l.name), u32_bytes(&pack_weights(l)?.words));
        blobs.put(&format!("{}.bias_int", l.name), i32_bytes(&l.bias_int));
        blobs.put(&format!("{}.bias", l.name), i32_bytes(&l.bias));
    }
    Ok(())
}

/// Serialises an artifact. Equal artifacts give equal bytes.
pub fn encode(art: &Artifact) -> Result<Vec<u8>> {
    let mut blobs = Blobs(Vec::new());
    let (widths, normalizer, batch_norm, quant, integer) = match &art.model {
        Model::Float(net) => {
            if net.bn1.is_some() != net.bn2.is_some() {
                return Err(Error::Format("batch-norm must be present in both conv blocks or neither".into()));
            }
            float_blobs(net, &mut blobs);
            let bn = net.bn1.as_ref().map(|b| BnHeader { eps: b.eps, momentum: b.momentum });
            let quant = net.quant.as_ref().map(|q| QuantHeader {
                spec: q.spec,
                input: q.input,
                act_beta: [0, 1, 2].map(|l| q.acts[l].beta_value()),
                logit_beta: q.output.beta_value(),
            });
            (net.widths, net.norm, bn, quant, None)
        }
        Model::Int(q) => {
            int_blobs(q, &mut blobs)?;
            let layers = q
                .layers
                .iter()
                .map(|l| LayerHeader {
                    name: l.name.clone(),
                    kind: l.kind,
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    kernel: l.kernel,
                    pad: l.pad,
                    in_h: l.in_h,
                    in_w: l.in_w,
                    bits: l.bits,
                    out_bits: l.out_bits,
                    multiplier: l.multiplier,
                    shift: l.shift,
                    z_in: l.z_in,
                    z_out: l.z_out,
                    in_q: l.in_q,
                    w_q: l.w_q,
                    out_q: l.out_q,
                    pool_after: l.pool_after,
                })
                .collect();
            (q.widths, q.norm, None, None, Some(IntHeader { spec: q.spec, layers }))
        }
    };
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        stage: art.model.stage(),
        provenance: art.provenance.clone(),
        widths,
        normalizer,
        batch_norm,
        quant,
        integer,
        blobs: blobs
            .0
            .iter()
            .map(|(name, b)| BlobEntry {
                name: name.clone(),
                bytes: b.len() as u64,
                sha256: hex(&Sha256::digest(b)),
            })
            .collect(),
    };
    let text = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(u32::try_from(text.len()).map_err(|_| Error::Format("manifest too large".into()))?).to_le_bytes());
    out.extend_from_slice(&text);
    for (_, b) in &blobs.0 {
        out.extend_from_slice(&(u32::try_from(b.len()).map_err(|_| Error::Format("blob too large".into()))?).to_le_bytes());
        out.extend_from_slice(b);
        out.extend_from_slice(&Sha256::digest(b));
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Artifact> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let mlen = c.u32()? as usize;
    let manifest: Manifest = serde_json::from_slice(c.take(mlen)?)?;
    if manifest.format != FORMAT_NAME {
        return Err(Error::Format(format!("unknown format `{}`", manifest.format)));
    }
    let mut blobs = Blobs(Vec::new());
    for e in &manifest.blobs {
        let len = c.u32()? as usize;
        let data = c.take(len)?;
        let digest = c.take(32)?;
        if len as u64 != e.bytes || Sha256::digest(data).as_slice() != digest || hex(digest) != e.sha256 {
            return Err(Error::Checksum(e.name.clone()));
        }
        blobs.put(&e.name, data.to_vec());
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after the last blob".into()));
    }
    let model = match manifest.stage {
        Stage::Int => Model::Int(decode_int(&manifest, &blobs)?),
        _ => Model::Float(decode_float(&manifest, &blobs)?),
    };
    if model.stage() != manifest.stage {
        return Err(Error::Format("stage does not match contents".into()));
    }
    Ok(Artifact {
        model,
        provenance: manifest.provenance,
    })
}

fn decode_float(m: &Manifest, blobs: &Blobs) -> Result<Network<f32>> {
    let w = m.widths;
    let [a1, a2, a3] = w.as_array();
    let conv = |name: &str, i: usize, o: usize| -> Result<Conv2d<f32>> {
        Ok(Conv2d {
            weight: blobs.tensor(&format!("{name}.weight"), [o, i, KERNEL, KERNEL])?,
            bias: blobs.tensor(&format!("{name}.bias"), [o, 1, 1, 1])?,
            pad: PAD,
        })
    };
    let lin = |name: &str, i: usize, o: usize| -> Result<Linear<f32>> {
        Ok(Linear {
            weight: blobs.tensor(&format!("{name}.weight"), [o, i, 1, 1])?,
            bias: blobs.tensor(&format!("{name}.bias"), [o, 1, 1, 1])?,
        })
    };
    let bn = |name: &str, c: usize| -> Result<Option<BatchNorm2d<f32>>> {
        m.batch_norm
            .as_ref()
            .map(|h| {
                Ok(BatchNorm2d {
                    gamma: blobs.tensor(&format!("{name}.gamma"), [c, 1, 1, 1])?,
                    beta: blobs.tensor(&format!("{name}.beta"), [c, 1, 1, 1])?,
                    running_mean: blobs.f32s(&format!("{name}.running_mean"), c)?,
                    running_var: blobs.f32s(&format!("{name}.running_var"), c)?,
                    eps: h.eps,
                    momentum: h.momentum,
                })
            })
            .transpose()
    };
    let mut net = Network::from_parts(
        m.normalizer,
        conv("conv1", 1, a1)?,
        bn("bn1", a1)?,
        conv("conv2", a1, a2)?,
        bn("bn2", a2)?,
        lin("fc1", w.fc1_inputs(), a3)?,
        lin("fc2", a3, NUM_CLASSES)?,
    )?;
    if blobs.0.iter().any(|(n, _)| n.starts_with("mask.")) {
        let layer = |i: usize, n: usize| -> Result<ChannelMask<f32>> {
            Ok(ChannelMask::from_theta(blobs.f32s(&format!("mask.{}", crate::dnas::MASKED_LAYERS[i]), n)?))
        };
        net.masks = Some(MaskSet {
            layers: [layer(0, a1)?, layer(1, a2)?, layer(2, a3)?],
        });
    }
    if let Some(q) = &m.quant {
        net.quant = Some(QuantState {
            spec: q.spec,
            input: q.input,
            acts: [0, 1, 2].map(|l| LearnedRange::new(q.act_beta[l], q.spec.layer(l + 1), RangeKind::Unsigned)),
            output: LearnedRange::new(q.logit_beta, OUTPUT_BITS, RangeKind::Symmetric),
        });
    }
    Ok(net)
}

fn decode_int(m: &Manifest, blobs: &Blobs) -> Result<QuantizedNetwork> {
    let h = m.integer.as_ref().ok_or_else(|| Error::Format("integer stage without integer header".into()))?;
    let layers = h
        .layers
        .iter()
        .map(|l| {
            let kk = l.kernel * l.kernel;
            let wpp = crate::kernels::packed::words_per_pixel(l.in_ch, l.bits);
            let packed = PackedWeights {
                out_ch: l.out_ch,
                in_ch: l.in_ch,
                kernel: l.kernel,
                bits: l.bits,
                words: blobs.u32s(&format!("{}.weights", l.name), l.out_ch * kk * wpp)?,
            };
            Ok(QuantLayer {
                name: l.name.clone(),
                kind: l.kind,
                in_ch: l.in_ch,
                out_ch: l.out_ch,
                kernel: l.kernel,
                pad: l.pad,
                in_h: l.in_h,
                in_w: l.in_w,
                bits: l.bits,
                out_bits: l.out_bits,
                weights: packed.unpack(),
                bias_int: blobs.i32s(&format!("{}.bias_int", l.name), l.out_ch)?,
                bias: blobs.i32s(&format!("{}.bias", l.name), l.out_ch)?,
                multiplier: l.multiplier,
                shift: l.shift,
                z_in: l.z_in,
                z_out: l.z_out,
                in_q: l.in_q,
                w_q: l.w_q,
                out_q: l.out_q,
                pool_after: l.pool_after,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedNetwork {
        spec: h.spec,
        norm: m.normalizer,
        widths: m.widths,
        layers,
    })
}

pub fn save_model(path: &Path, art: &Artifact) -> Result<()> {
    std::fs::write(path, encode(art)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Artifact> {
    decode(&std::fs::read(path)?)
}
