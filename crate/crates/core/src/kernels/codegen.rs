//! Generation of ISA programs for the integer layers.
//!
//! Programs are loops with fixed trip counts and branch-free bodies (clamp
//! and max use sign masks), so the cycle count depends only on the layer
//! geometry and is known before execution.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::isa::instr::{load_imm, AluOp, Cond, DotWidth, Instr, LoadKind, Opcode, Reg, StoreKind, IMM12_MAX, IMM12_MIN};
use crate::isa::lanes::lanes;
use crate::isa::machine::EnergyModel;
use crate::quant::lower::{lane_range, QuantLayer};

use super::packed::{set_lane, splat, words_per_pixel};

const ACC: Reg = Reg(1);
const A: Reg = Reg(2);
const W: Reg = Reg(3);
const T1: Reg = Reg(4);
const T2: Reg = Reg(5);
const IN: Reg = Reg(6);
const WP: Reg = Reg(7);
const BP: Reg = Reg(8);
const OUT: Reg = Reg(10);
const CNT_Y: Reg = Reg(11);
const CNT_X: Reg = Reg(12);
const CNT_O: Reg = Reg(13);
const MUL_M: Reg = Reg(14);
const LO: Reg = Reg(15);
const HI: Reg = Reg(16);
const T3: Reg = Reg(17);
const T4: Reg = Reg(18);
const FAR: Reg = Reg(19);
const ROUND: Reg = Reg(21);
const CNT_G: Reg = Reg(20);
const PACK: Reg = Reg(26);
const PADW: Reg = Reg(27);
const V: [Reg; 4] = [Reg(22), Reg(23), Reg(24), Reg(25)];

/// A named byte range of data memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub addr: u32,
    pub bytes: u32,
}

/// Program plus its static accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelProgram {
    pub program: Vec<Instr>,
    /// Logical tensor name -> memory region.
    pub symbols: BTreeMap<String, Region>,
    /// Initial data memory (weights, biases, zero-point-filled buffers).
    pub image: Vec<u8>,
    pub expected_cycles: u64,
    /// Cycles attributed to each kernel, in program order.
    pub kernel_cycles: Vec<(String, u64)>,
    expected_ops: BTreeMap<Opcode, u64>,
}

impl KernelProgram {
    pub fn expected_count(&self, op: Opcode) -> u64 {
        self.expected_ops.get(&op).copied().unwrap_or(0)
    }

    pub fn expected_sdotp(&self) -> u64 {
        self.expected_count(Opcode::Sdotp8) + self.expected_count(Opcode::Sdotp4)
    }

    pub fn expected_energy(&self, model: &EnergyModel) -> f64 {
        self.expected_ops.iter().map(|(&o, &n)| n as f64 * model.weight(o)).sum()
    }

    pub fn region(&self, name: &str) -> Result<Region> {
        self.symbols
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no region `{name}`")))
    }

    /// Assembly listing preceded by the symbol table as comments.
    pub fn listing(&self) -> String {
        let mut s = String::new();
        for (name, r) in &self.symbols {
            s.push_str(&format!("# {name} @ {:#06x} ({} bytes)\n", r.addr, r.bytes));
        }
        s.push_str(&format!("# expected cycles: {}\n", self.expected_cycles));
        s.push_str(&crate::isa::asm::listing(&self.program));
        s
    }
}

/// Output buffer of a kernel: HWC words per pixel with a stored
/// zero-point border of `pad` pixels (the next layer's padding).
/// Unused lanes and the border hold `zero_point`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dest {
    pub base: u32,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub bits: u32,
    pub zero_point: i32,
    pub pad: usize,
}

impl Dest {
    fn wpp(&self) -> usize {
        words_per_pixel(self.c, self.bits)
    }

    /// Zero-point-filled initial contents.
    pub fn fill(&self) -> Vec<u32> {
        vec![splat(self.zero_point, self.bits); self.words()]
    }

    /// Words of the whole buffer.
    pub fn words(&self) -> usize {
        (self.h + 2 * self.pad) * (self.w + 2 * self.pad) * self.wpp()
    }

    /// Address of the first interior pixel.
    fn first_pixel(&self) -> i64 {
        self.base as i64 + ((self.pad * (self.w + 2 * self.pad) + self.pad) * self.wpp() * 4) as i64
    }

    fn row_skip(&self) -> i64 {
        (2 * self.pad * self.wpp() * 4) as i64
    }
}

/// Instruction emitter tracking how many times each instruction retires.
#[derive(Default)]
pub struct Builder {
    prog: Vec<Instr>,
    mult: Vec<u64>,
    loops: Vec<(usize, Reg, u64)>,
    cur: u64,
    marks: Vec<(String, usize)>,
}

fn fits12(v: i64) -> bool {
    (IMM12_MIN as i64..=IMM12_MAX as i64).contains(&v)
}

impl Builder {
    pub fn new() -> Self {
        Self {
            cur: 1,
            ..Default::default()
        }
    }

    fn emit(&mut self, ins: Instr) {
        debug_assert!(ins.is_well_formed(), "{ins}");
        self.prog.push(ins);
        self.mult.push(self.cur);
    }

    fn li(&mut self, rd: Reg, v: i64) {
        for ins in load_imm(rd, v as i32) {
            self.emit(ins);
        }
    }

    fn alu(&mut self, op: AluOp, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instr::Alu { op, rd, rs1, rs2 });
    }

    fn alui(&mut self, op: AluOp, rd: Reg, rs1: Reg, imm: i32) {
        self.emit(Instr::AluImm { op, rd, rs1, imm });
    }

    /// `rd = rs + v` for any 32-bit `v`.
    fn addi(&mut self, rd: Reg, rs: Reg, v: i64) {
        if v == 0 && rd == rs {
            return;
        }
        if fits12(v) {
            self.alui(AluOp::Add, rd, rs, v as i32);
        } else {
            self.li(FAR, v);
            self.alu(AluOp::Add, rd, rs, FAR);
        }
    }

    /// `rd = mem32[base + off]` for any offset.
    fn lw(&mut self, rd: Reg, base: Reg, off: i64) {
        if fits12(off) {
            self.emit(Instr::Load { kind: LoadKind::Word, rd, rs1: base, offset: off as i32 });
        } else {
            self.li(FAR, off);
            self.alu(AluOp::Add, FAR, FAR, base);
            self.emit(Instr::Load { kind: LoadKind::Word, rd, rs1: FAR, offset: 0 });
        }
    }

    fn begin_loop(&mut self, reg: Reg, count: u64) {
        assert!(count >= 1, "empty loop");
        self.li(reg, count as i64);
        self.loops.push((self.prog.len(), reg, count));
        self.cur *= count;
    }

    fn end_loop(&mut self) {
        let (top, reg, count) = self.loops.pop().expect("open loop");
        self.alui(AluOp::Add, reg, reg, -1);
        self.emit(Instr::Branch { cond: Cond::Ne, rs1: reg, rs2: Reg::ZERO, target: top });
        self.cur /= count;
    }

    fn mark(&mut self, name: &str) {
        self.marks.push((name.to_string(), self.prog.len()));
    }

    pub fn finish(self, symbols: BTreeMap<String, Region>, image: Vec<u8>) -> KernelProgram {
        assert!(self.loops.is_empty(), "unclosed loop");
        let mut ops = BTreeMap::new();
        for (ins, &m) in self.prog.iter().zip(&self.mult) {
            *ops.entry(ins.opcode()).or_insert(0) += m;
        }
        let mut kernel_cycles = Vec::new();
        for (i, (name, start)) in self.marks.iter().enumerate() {
            let end = self.marks.get(i + 1).map_or(self.prog.len(), |m| m.1);
            kernel_cycles.push((name.clone(), self.mult[*start..end].iter().sum()));
        }
        KernelProgram {
            expected_cycles: self.mult.iter().sum(),
            program: self.prog,
            symbols,
            image,
            kernel_cycles,
            expected_ops: ops,
        }
    }

    /// Sign-extended lane `lane` of `src` into `rd`.
    fn extract(&mut self, rd: Reg, src: Reg, lane: usize, bits: u32) {
        let top = 32 - bits as i32 * (lane as i32 + 1);
        if top > 0 {
            self.alui(AluOp::Sll, rd, src, top);
            self.alui(AluOp::Sra, rd, rd, 32 - bits as i32);
        } else {
            self.alui(AluOp::Sra, rd, src, 32 - bits as i32);
        }
    }

    /// `rd = max(rd, rs)` without branches.
    fn max_into(&mut self, rd: Reg, rs: Reg) {
        self.alu(AluOp::Sub, T3, rd, rs);
        self.alui(AluOp::Sra, T4, T3, 31);
        self.alu(AluOp::And, T3, T3, T4);
        self.alu(AluOp::Sub, rd, rd, T3);
    }

    /// Shifts the code in `T1` into the top lane of `PACK`.
    fn pack_code(&mut self, bits: u32) {
        self.alui(AluOp::Sll, T1, T1, 32 - bits as i32);
        self.alui(AluOp::Srl, PACK, PACK, bits as i32);
        self.alu(AluOp::Or, PACK, PACK, T1);
    }

    /// Moves `n < L` packed codes down to the low lanes and fills the
    /// remaining lanes from `PADW`.
    fn finish_partial(&mut self, n: usize, bits: u32) {
        let l = lanes(bits);
        self.alui(AluOp::Srl, PACK, PACK, ((l - n) as u32 * bits) as i32);
        self.alu(AluOp::Or, PACK, PACK, PADW);
    }

    fn store_pack(&mut self, offset: i32) {
        self.emit(Instr::Store { kind: StoreKind::Word, rs2: PACK, rs1: OUT, offset });
    }

    /// Padding word with the zero-point in lanes `n..L`.
    fn load_padding(&mut self, n: usize, bits: u32, zero_point: i32) {
        let mut w = 0u32;
        for lane in n..lanes(bits) {
            w = set_lane(w, lane, bits, zero_point);
        }
        self.li(PADW, w as i32 as i64);
    }

    /// Loads the requantization constants of `layer`.
    fn requant_setup(&mut self, layer: &QuantLayer) {
        let (lo, hi) = lane_range(layer.out_bits);
        self.li(MUL_M, layer.multiplier as i64);
        self.li(LO, lo as i64);
        self.li(HI, hi as i64);
        let s = layer.shift;
        let round = if s <= 32 { 1i64 << (s - 1) } else { 1i64 << (s - 33) };
        self.li(ROUND, round as u32 as i32 as i64);
    }

    /// `T1 = clamp(((ACC * M + 2^(s-1)) >> s) + z_out, lo, hi)`.
    fn requant(&mut self, layer: &QuantLayer) {
        let s = layer.shift as i32;
        self.alu(AluOp::Mul, T1, ACC, MUL_M);
        self.alu(AluOp::Mulh, T2, ACC, MUL_M);
        if s <= 32 {
            self.alu(AluOp::Add, T1, T1, ROUND);
            self.alu(AluOp::Sltu, T3, T1, ROUND);
            self.alu(AluOp::Add, T2, T2, T3);
        } else {
            self.alu(AluOp::Add, T2, T2, ROUND);
        }
        if s < 32 {
            self.alui(AluOp::Srl, T1, T1, s);
            self.alui(AluOp::Sll, T3, T2, 32 - s);
            self.alu(AluOp::Or, T1, T1, T3);
        } else if s == 32 {
            self.alu(AluOp::Add, T1, T2, Reg::ZERO);
        } else {
            self.alui(AluOp::Sra, T1, T2, s - 32);
        }
        self.alui(AluOp::Add, T1, T1, layer.z_out);
        // max(T1, LO)
        self.max_into(T1, LO);
        // min(T1, HI) = HI + ((T1 - HI) & sign(T1 - HI))
        self.alu(AluOp::Sub, T3, T1, HI);
        self.alui(AluOp::Sra, T4, T3, 31);
        self.alu(AluOp::And, T3, T3, T4);
        self.alu(AluOp::Add, T1, HI, T3);
    }

    /// One output channel: accumulate into `ACC`, requantize into `T1`,
    /// advance the weight and bias pointers.
    fn conv_channel(&mut self, layer: &QuantLayer) {
        let bits = layer.bits;
        let l = lanes(bits);
        let wpp = words_per_pixel(layer.in_ch, bits);
        let full = layer.in_ch / l;
        let rem = layer.in_ch % l;
        let k = layer.kernel;
        let wp = layer.in_w + 2 * layer.pad;
        let width = DotWidth::from_bits(bits).expect("4 or 8 bits");
        self.emit(Instr::Load { kind: LoadKind::Word, rd: ACC, rs1: BP, offset: 0 });
        for ky in 0..k {
            for kx in 0..k {
                let a_off = ((ky * wp + kx) * wpp * 4) as i64;
                let w_off = ((ky * k + kx) * wpp * 4) as i64;
                for j in 0..full {
                    self.lw(A, IN, a_off + 4 * j as i64);
                    self.lw(W, WP, w_off + 4 * j as i64);
                    self.emit(Instr::Sdotp { width, rd: ACC, rs1: A, rs2: W });
                }
                if rem > 0 {
                    self.lw(A, IN, a_off + 4 * full as i64);
                    self.lw(W, WP, w_off + 4 * full as i64);
                    for i in 0..rem {
                        self.extract(T1, A, i, bits);
                        self.extract(T2, W, i, bits);
                        self.alu(AluOp::Mul, T1, T1, T2);
                        self.alu(AluOp::Add, ACC, ACC, T1);
                    }
                }
            }
        }
        self.addi(WP, WP, (k * k * wpp * 4) as i64);
        self.alui(AluOp::Add, BP, BP, 4);
        self.requant(layer);
    }

    /// Direct convolution; linear layers are the `k = 1`, `1 x 1` case.
    /// The input buffer at `in_base` is stored with the layer's padding;
    /// weights at `w_base` are OHWI-packed, biases at `b_base` are 32-bit
    /// words. Output codes of one pixel are packed in a register and
    /// stored a word at a time.
    pub fn conv(&mut self, name: &str, layer: &QuantLayer, in_base: u32, w_base: u32, b_base: u32, dest: &Dest) {
        self.mark(name);
        let wpp = words_per_pixel(layer.in_ch, layer.bits);
        let wp = layer.in_w + 2 * layer.pad;
        let (oh, ow) = (layer.out_h(), layer.out_w());
        let ol = lanes(dest.bits);
        let (groups, rest) = (layer.out_ch / ol, layer.out_ch % ol);
        self.requant_setup(layer);
        if rest > 0 {
            self.load_padding(rest, dest.bits, dest.zero_point);
        }
        self.li(IN, in_base as i64);
        self.li(OUT, dest.first_pixel());
        self.begin_loop(CNT_Y, oh as u64);
        self.begin_loop(CNT_X, ow as u64);
        self.li(WP, w_base as i64);
        self.li(BP, b_base as i64);
        if groups > 0 {
            self.begin_loop(CNT_G, groups as u64);
            self.begin_loop(CNT_O, ol as u64);
            self.conv_channel(layer);
            self.pack_code(dest.bits);
            self.end_loop();
            self.store_pack(0);
            self.alui(AluOp::Add, OUT, OUT, 4);
            self.end_loop();
        }
        if rest > 0 {
            self.begin_loop(CNT_O, rest as u64);
            self.conv_channel(layer);
            self.pack_code(dest.bits);
            self.end_loop();
            self.finish_partial(rest, dest.bits);
            self.store_pack(0);
            self.alui(AluOp::Add, OUT, OUT, 4);
        }
        self.addi(IN, IN, (wpp * 4) as i64);
        self.end_loop();
        self.addi(IN, IN, ((wp - ow) * wpp * 4) as i64);
        self.addi(OUT, OUT, dest.row_skip());
        self.end_loop();
    }

    /// 2x2 stride-2 max-pool of an unpadded `(c, h, w)` buffer.
    pub fn maxpool(&mut self, name: &str, in_base: u32, c: usize, h: usize, w: usize, bits: u32, dest: &Dest) {
        self.mark(name);
        let l = lanes(bits);
        let wpp = words_per_pixel(c, bits);
        let (oh, ow) = (h / 2, w / 2);
        let row = (w * wpp * 4) as i64;
        let px = (wpp * 4) as i64;
        let rest = c % l;
        if rest > 0 {
            self.load_padding(rest, bits, dest.zero_point);
        }
        self.li(IN, in_base as i64);
        self.li(OUT, dest.first_pixel());
        self.begin_loop(CNT_Y, oh as u64);
        self.begin_loop(CNT_X, ow as u64);
        for j in 0..wpp {
            let base = 4 * j as i64;
            for (v, off) in V.iter().zip([0, px, row, row + px]) {
                self.lw(*v, IN, base + off);
            }
            let n = l.min(c - j * l);
            for lane in 0..n {
                self.extract(T1, V[0], lane, bits);
                for v in &V[1..] {
                    self.extract(T2, *v, lane, bits);
                    self.max_into(T1, T2);
                }
                self.pack_code(bits);
            }
            if n < l {
                self.finish_partial(n, bits);
            }
            self.store_pack(4 * j as i32);
        }
        self.addi(OUT, OUT, px);
        self.addi(IN, IN, 2 * px);
        self.end_loop();
        self.addi(IN, IN, row + ((w - 2 * ow) as i64) * px);
        self.addi(OUT, OUT, dest.row_skip());
        self.end_loop();
    }
}

/// Sequential allocator of word-aligned data regions with an initial image.
#[derive(Default)]
pub struct MemoryPlan {
    pub symbols: BTreeMap<String, Region>,
    pub image: Vec<u8>,
}

impl MemoryPlan {
    pub fn alloc(&mut self, name: &str, words: &[u32]) -> u32 {
        let addr = self.image.len() as u32;
        for w in words {
            self.image.extend_from_slice(&w.to_le_bytes());
        }
        self.symbols.insert(
            name.to_string(),
            Region {
                addr,
                bytes: 4 * words.len() as u32,
            },
        );
        addr
    }
}
