//! End-to-end integer inference on the host fast path or the ISA simulator.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::isa::instr::Opcode;
use crate::isa::machine::{EnergyModel, Machine};
use crate::quant::lower::{LayerKind, QuantLayer, QuantizedNetwork};
use crate::train::network::argmax;

use super::codegen::{Builder, Dest, KernelProgram, MemoryPlan};
use super::host::{conv2d_int_with, maxpool_int, pack_weights};
use super::packed::{PackedTensor, PackedWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Host,
    IsaSim,
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "host" => Ok(Self::Host),
            "isa-sim" => Ok(Self::IsaSim),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}` (host | isa-sim)"))),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Host => "host",
            Self::IsaSim => "isa-sim",
        })
    }
}

/// Result of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct IntOutput {
    pub logits: Vec<i32>,
    pub prediction: usize,
    pub cycles: u64,
    pub energy: f64,
    pub sdotp: u64,
}

/// Statistics of one standalone kernel run on the simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelRun {
    pub cycles: u64,
    pub expected_cycles: u64,
    pub counts: BTreeMap<Opcode, u64>,
}

impl KernelRun {
    pub fn sdotp(&self) -> u64 {
        self.counts.get(&Opcode::Sdotp8).copied().unwrap_or(0) + self.counts.get(&Opcode::Sdotp4).copied().unwrap_or(0)
    }
}

/// The linear layer that consumes a `(c, side, side)` feature map viewed
/// as a convolution whose kernel covers the whole map. The weights keep
/// their order; only the geometry changes, so every input pixel stays
/// word-aligned.
pub fn full_extent_view(layer: &QuantLayer, c: usize, side: usize) -> QuantLayer {
    QuantLayer {
        in_ch: c,
        in_h: side,
        in_w: side,
        kernel: side,
        pad: 0,
        ..layer.clone()
    }
}

fn bias_words(layer: &QuantLayer) -> Vec<u32> {
    layer.bias.iter().map(|&b| b as u32).collect()
}

/// A compiled integer network.
#[derive(Clone, Debug)]
pub struct NetworkProgram {
    pub kernel: KernelProgram,
    /// Layers as executed (a linear layer after a feature map is viewed as
    /// a full-extent convolution).
    pub layers: Vec<QuantLayer>,
    weights: Vec<PackedWeights>,
    input_pad: usize,
}

impl NetworkProgram {
    pub fn compile(qnet: &QuantizedNetwork) -> Result<Self> {
        let mut layers: Vec<QuantLayer> = Vec::with_capacity(qnet.layers.len());
        let mut prev: Option<(usize, usize)> = None;
        for l in &qnet.layers {
            l.check_overflow()?;
            let layer = match (l.kind, prev) {
                (LayerKind::Linear, Some((c, side))) if side > 1 => full_extent_view(l, c, side),
                _ => l.clone(),
            };
            let side = if l.pool_after { l.out_h() / 2 } else { l.out_h() };
            prev = Some((l.out_ch, side));
            layers.push(layer);
        }
        for pair in layers.windows(2) {
            if pair[0].out_bits != pair[1].bits {
                return Err(Error::WidthMismatch { expected: pair[1].bits, got: pair[0].out_bits });
            }
        }
        let weights = layers.iter().map(pack_weights).collect::<Result<Vec<_>>>()?;

        let mut mem = MemoryPlan::default();
        let mut b = Builder::new();
        let first = &layers[0];
        let input = PackedTensor::filled(first.in_ch, first.in_h, first.in_w, first.bits, first.z_in, first.pad)?;
        let mut in_base = mem.alloc("input", &input.words);
        let mut wb = Vec::new();
        for (l, w) in layers.iter().zip(&weights) {
            wb.push((mem.alloc(&format!("{}.weights", l.name), &w.words), mem.alloc(&format!("{}.bias", l.name), &bias_words(l))));
        }
        for (i, l) in layers.iter().enumerate() {
            let next = layers.get(i + 1);
            let side = if l.pool_after { l.out_h() / 2 } else { l.out_h() };
            let mut dest = Dest {
                base: 0,
                c: l.out_ch,
                h: side,
                w: side,
                bits: l.out_bits,
                zero_point: l.z_out,
                pad: next.map_or(0, |n| n.pad),
            };
            let out_name = next.map_or("logits".to_string(), |n| format!("{}.input", n.name));
            dest.base = mem.alloc(&out_name, &dest.fill());
            if l.pool_after {
                let mut tmp = Dest {
                    h: l.out_h(),
                    w: l.out_w(),
                    pad: 0,
                    ..dest
                };
                tmp.base = mem.alloc(&format!("{}.output", l.name), &tmp.fill());
                b.conv(&l.name, l, in_base, wb[i].0, wb[i].1, &tmp);
                b.maxpool(&format!("{}.pool", l.name), tmp.base, l.out_ch, l.out_h(), l.out_w(), l.out_bits, &dest);
            } else {
                b.conv(&l.name, l, in_base, wb[i].0, wb[i].1, &dest);
            }
            in_base = dest.base;
        }
        let kernel = b.finish(mem.symbols, mem.image);
        Ok(Self {
            kernel,
            input_pad: first.pad,
            layers,
            weights,
        })
    }

    fn check_frame(&self, codes: &[i32]) -> Result<PackedTensor> {
        let f = &self.layers[0];
        PackedTensor::pack(codes, f.in_ch, f.in_h, f.in_w, f.bits, f.z_in, self.input_pad)
    }

    pub fn run(&self, codes: &[i32], backend: Backend, energy: &EnergyModel) -> Result<IntOutput> {
        match backend {
            Backend::Host => self.run_host(codes, energy),
            Backend::IsaSim => {
                let mut m = self.machine();
                m.energy = *energy;
                self.run_isa(codes, &mut m)
            }
        }
    }

    /// Fresh machine with the data image loaded.
    pub fn machine(&self) -> Machine {
        let mut m = Machine::new(self.kernel.image.len());
        m.mem.copy_from_slice(&self.kernel.image);
        m
    }

    pub fn run_host(&self, codes: &[i32], energy: &EnergyModel) -> Result<IntOutput> {
        let mut x = self.check_frame(codes)?;
        for (l, w) in self.layers.iter().zip(&self.weights) {
            x = conv2d_int_with(&x, l, w)?;
            if l.pool_after {
                x = maxpool_int(&x)?;
            }
        }
        let logits = x.unpack();
        Ok(IntOutput {
            prediction: argmax(&logits),
            logits,
            cycles: self.kernel.expected_cycles,
            energy: self.kernel.expected_energy(energy),
            sdotp: self.kernel.expected_sdotp(),
        })
    }

    /// Runs one frame on `m`, which must hold this program's data image
    /// (buffers are rewritten where needed, so a machine can be reused).
    pub fn run_isa(&self, codes: &[i32], m: &mut Machine) -> Result<IntOutput> {
        let input = self.check_frame(codes)?;
        m.reset_counters();
        m.write_words(self.kernel.region("input")?.addr, &input.words)?;
        m.run(&self.kernel.program)?;
        let r = self.kernel.region("logits")?;
        let last = self.layers.last().expect("layers");
        let words = m.read_words(r.addr, (r.bytes / 4) as usize)?;
        let t = PackedTensor {
            c: last.out_ch,
            h: 1,
            w: 1,
            bits: last.out_bits,
            zero_point: last.z_out,
            pad: 0,
            words,
        };
        let logits = t.unpack();
        Ok(IntOutput {
            prediction: argmax(&logits),
            logits,
            cycles: m.cycles,
            energy: m.energy_units(),
            sdotp: m.count(Opcode::Sdotp8) + m.count(Opcode::Sdotp4),
        })
    }
}

/// Compiles and runs `qnet` on one frame of input codes.
pub fn run_network_int(qnet: &QuantizedNetwork, codes: &[i32], backend: Backend) -> Result<IntOutput> {
    NetworkProgram::compile(qnet)?.run(codes, backend, &EnergyModel::default())
}

fn run_kernel(kp: &KernelProgram, out: Dest, z_out: i32) -> Result<(PackedTensor, KernelRun)> {
    let mut m = Machine::new(kp.image.len());
    m.mem.copy_from_slice(&kp.image);
    m.run(&kp.program)?;
    let words = m.read_words(out.base, out.words())?;
    let t = PackedTensor {
        c: out.c,
        h: out.h,
        w: out.w,
        bits: out.bits,
        zero_point: z_out,
        pad: 0,
        words,
    };
    Ok((
        t,
        KernelRun {
            cycles: m.cycles,
            expected_cycles: kp.expected_cycles,
            counts: m.opcode_counts(),
        },
    ))
}

/// Standalone convolution program for one layer and input.
pub fn compile_conv(layer: &QuantLayer, input: &PackedTensor) -> Result<(KernelProgram, Dest)> {
    if input.bits != layer.bits {
        return Err(Error::WidthMismatch { expected: layer.bits, got: input.bits });
    }
    layer.check_overflow()?;
    let x = input.with_pad(layer.pad);
    let mut mem = MemoryPlan::default();
    let in_base = mem.alloc("input", &x.words);
    let w = pack_weights(layer)?;
    let wb = mem.alloc("weights", &w.words);
    let bb = mem.alloc("bias", &bias_words(layer));
    let probe = Dest {
        base: 0,
        c: layer.out_ch,
        h: layer.out_h(),
        w: layer.out_w(),
        bits: layer.out_bits,
        zero_point: layer.z_out,
        pad: 0,
    };
    let ob = mem.alloc("output", &probe.fill());
    let dest = Dest { base: ob, ..probe };
    let mut b = Builder::new();
    b.conv(&layer.name, layer, in_base, wb, bb, &dest);
    Ok((b.finish(mem.symbols, mem.image), dest))
}

/// Runs [`compile_conv`] on the simulator.
pub fn isa_conv2d(layer: &QuantLayer, input: &PackedTensor) -> Result<(PackedTensor, KernelRun)> {
    if (input.c, input.h, input.w) != (layer.in_ch, layer.in_h, layer.in_w) || input.zero_point != layer.z_in {
        return Err(Error::Shape(format!("input does not match layer {}", layer.name)));
    }
    let (kp, dest) = compile_conv(layer, input)?;
    run_kernel(&kp, dest, layer.z_out)
}

/// Linear layer on the simulator through the convolution kernel.
pub fn isa_linear(layer: &QuantLayer, input: &PackedTensor) -> Result<(PackedTensor, KernelRun)> {
    if input.h != 1 || input.w != 1 || layer.kernel != 1 {
        return Err(Error::Shape("linear layers take (C, 1, 1) inputs and 1x1 weights".into()));
    }
    isa_conv2d(layer, input)
}

/// 2x2 max-pool on the simulator.
pub fn isa_maxpool(input: &PackedTensor) -> Result<(PackedTensor, KernelRun)> {
    let x = input.with_pad(0);
    let mut mem = MemoryPlan::default();
    let in_base = mem.alloc("input", &x.words);
    let probe = Dest {
        base: 0,
        c: x.c,
        h: x.h / 2,
        w: x.w / 2,
        bits: x.bits,
        zero_point: x.zero_point,
        pad: 0,
    };
    let ob = mem.alloc("output", &probe.fill());
    let dest = Dest { base: ob, ..probe };
    let mut b = Builder::new();
    b.maxpool("maxpool", in_base, x.c, x.h, x.w, x.bits, &dest);
    let kp = b.finish(mem.symbols, mem.image);
    run_kernel(&kp, dest, x.zero_point)
}
