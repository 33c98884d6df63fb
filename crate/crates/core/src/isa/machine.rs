//! Single-cycle interpreter with per-opcode counters and an energy proxy.

use std::collections::BTreeMap;

use thiserror::Error;

use super::instr::{AluOp, Cond, Instr, LoadKind, Opcode, StoreKind};
use super::lanes::{sdotp4, sdotp8};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("pc {pc}: {size}-byte access at {addr:#x} outside {len}-byte memory")]
    OutOfBounds { pc: usize, addr: u64, size: usize, len: usize },
    #[error("pc {pc}: misaligned word access at {addr:#x}")]
    Misaligned { pc: usize, addr: u32 },
    #[error("pc {pc}: illegal instruction `{text}`")]
    IllegalInstruction { pc: usize, text: String },
    #[error("pc {pc}: jump target {target} beyond program end")]
    BadTarget { pc: usize, target: usize },
    #[error("step limit of {limit} instructions reached")]
    StepLimit { limit: u64 },
}

/// Relative energy per retired instruction.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyModel {
    pub base: f64,
    pub sdotp: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { base: 1.0, sdotp: 1.8 }
    }
}

impl EnergyModel {
    pub fn weight(&self, op: Opcode) -> f64 {
        if op.is_sdotp() {
            self.sdotp
        } else {
            self.base
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    /// Executed `HALT`.
    Halted,
    /// Ran past the last instruction.
    End,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Machine {
    pub regs: [u32; 32],
    pub mem: Vec<u8>,
    pub pc: usize,
    pub cycles: u64,
    pub energy: EnergyModel,
    counts: [u64; Opcode::ALL.len()],
    pub trace: Option<Vec<String>>,
    pub step_limit: u64,
}

impl Machine {
    pub const DEFAULT_STEP_LIMIT: u64 = 1 << 32;

    pub fn new(mem_bytes: usize) -> Self {
        Self {
            regs: [0; 32],
            mem: vec![0; mem_bytes],
            pc: 0,
            cycles: 0,
            energy: EnergyModel::default(),
            counts: [0; Opcode::ALL.len()],
            trace: None,
            step_limit: Self::DEFAULT_STEP_LIMIT,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn reg(&self, i: usize) -> u32 {
        self.regs[i]
    }

    pub fn set_reg(&mut self, i: usize, v: u32) {
        if i != 0 {
            self.regs[i] = v;
        }
    }

    pub fn count(&self, op: Opcode) -> u64 {
        self.counts[op as usize]
    }

    /// Non-zero per-opcode counters.
    pub fn opcode_counts(&self) -> BTreeMap<Opcode, u64> {
        Opcode::ALL
            .iter()
            .filter(|o| self.counts[**o as usize] > 0)
            .map(|&o| (o, self.counts[o as usize]))
            .collect()
    }

    pub fn energy_units(&self) -> f64 {
        Opcode::ALL.iter().map(|&o| self.counts[o as usize] as f64 * self.energy.weight(o)).sum()
    }

    /// Clears pc and counters (memory and registers are kept).
    pub fn reset_counters(&mut self) {
        self.pc = 0;
        self.cycles = 0;
        self.counts = [0; Opcode::ALL.len()];
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
    }

    fn check(&self, addr: u32, size: usize) -> Result<usize, SimError> {
        let a = addr as usize;
        if a as u64 + size as u64 > self.mem.len() as u64 {
            return Err(SimError::OutOfBounds {
                pc: self.pc,
                addr: addr as u64,
                size,
                len: self.mem.len(),
            });
        }
        if size == 4 && a % 4 != 0 {
            return Err(SimError::Misaligned { pc: self.pc, addr });
        }
        Ok(a)
    }

    pub fn load_word(&self, addr: u32) -> Result<u32, SimError> {
        let a = self.check(addr, 4)?;
        Ok(u32::from_le_bytes(self.mem[a..a + 4].try_into().expect("4 bytes")))
    }

    pub fn store_word(&mut self, addr: u32, v: u32) -> Result<(), SimError> {
        let a = self.check(addr, 4)?;
        self.mem[a..a + 4].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    /// Copies `words` into memory starting at byte address `addr`.
    pub fn write_words(&mut self, addr: u32, words: &[u32]) -> Result<(), SimError> {
        for (i, &w) in words.iter().enumerate() {
            self.store_word(addr + 4 * i as u32, w)?;
        }
        Ok(())
    }

    pub fn read_words(&self, addr: u32, n: usize) -> Result<Vec<u32>, SimError> {
        (0..n).map(|i| self.load_word(addr + 4 * i as u32)).collect()
    }

    /// Executes from the current pc until `HALT`, the end of the program,
    /// or an error. On error the machine keeps the state at the faulting
    /// instruction.
    pub fn run(&mut self, program: &[Instr]) -> Result<Exit, SimError> {
        let mut steps = 0u64;
        loop {
            if self.pc >= program.len() {
                return Ok(Exit::End);
            }
            if steps >= self.step_limit {
                return Err(SimError::StepLimit { limit: self.step_limit });
            }
            let ins = program[self.pc];
            let next = self.step(&ins, program.len())?;
            steps += 1;
            self.cycles += 1;
            self.counts[ins.opcode() as usize] += 1;
            if let Some(t) = self.trace.as_mut() {
                t.push(format!("{:>6} {}", self.pc, ins));
            }
            match next {
                Some(pc) => self.pc = pc,
                None => {
                    self.pc += 1;
                    return Ok(Exit::Halted);
                }
            }
        }
    }

    /// Executes one instruction; returns the next pc, or `None` on halt.
    fn step(&mut self, ins: &Instr, len: usize) -> Result<Option<usize>, SimError> {
        let illegal = |pc: usize| SimError::IllegalInstruction { pc, text: ins.to_string() };
        if !ins.is_well_formed() {
            return Err(illegal(self.pc));
        }
        let r = |i: super::instr::Reg| self.regs[i.idx()];
        let mut next = self.pc + 1;
        match *ins {
            Instr::Lui { rd, imm } => self.set_reg(rd.idx(), imm << 12),
            Instr::AluImm { op, rd, rs1, imm } => {
                let v = alu(op, r(rs1), imm as u32);
                self.set_reg(rd.idx(), v);
            }
            Instr::Alu { op, rd, rs1, rs2 } => {
                let v = alu(op, r(rs1), r(rs2));
                self.set_reg(rd.idx(), v);
            }
            Instr::Load { kind, rd, rs1, offset } => {
                let addr = r(rs1).wrapping_add(offset as u32);
                let v = match kind {
                    LoadKind::Word => self.load_word(addr)?,
                    LoadKind::Byte => self.mem[self.check(addr, 1)?] as i8 as i32 as u32,
                    LoadKind::ByteU => self.mem[self.check(addr, 1)?] as u32,
                };
                self.set_reg(rd.idx(), v);
            }
            Instr::Store { kind, rs2, rs1, offset } => {
                let addr = r(rs1).wrapping_add(offset as u32);
                let v = r(rs2);
                match kind {
                    StoreKind::Word => self.store_word(addr, v)?,
                    StoreKind::Byte => {
                        let a = self.check(addr, 1)?;
                        self.mem[a] = v as u8;
                    }
                }
            }
            Instr::Branch { cond, rs1, rs2, target } => {
                let (a, b) = (r(rs1), r(rs2));
                let taken = match cond {
                    Cond::Eq => a == b,
                    Cond::Ne => a != b,
                    Cond::Lt => (a as i32) < (b as i32),
                    Cond::Ge => (a as i32) >= (b as i32),
                };
                if taken {
                    if target > len {
                        return Err(SimError::BadTarget { pc: self.pc, target });
                    }
                    next = target;
                }
            }
            Instr::Jal { rd, target } => {
                if target > len {
                    return Err(SimError::BadTarget { pc: self.pc, target });
                }
                self.set_reg(rd.idx(), (self.pc + 1) as u32);
                next = target;
            }
            Instr::Sdotp { width, rd, rs1, rs2 } => {
                let v = match width {
                    super::instr::DotWidth::W8 => sdotp8(r(rs1), r(rs2), r(rd)),
                    super::instr::DotWidth::W4 => sdotp4(r(rs1), r(rs2), r(rd)),
                };
                self.set_reg(rd.idx(), v);
            }
            Instr::Halt => return Ok(None),
            Instr::Unimp => return Err(illegal(self.pc)),
        }
        Ok(Some(next))
    }
}

fn alu(op: AluOp, a: u32, b: u32) -> u32 {
    match op {
        AluOp::Add => a.wrapping_add(b),
        AluOp::Sub => a.wrapping_sub(b),
        AluOp::Mul => a.wrapping_mul(b),
        AluOp::Mulh => ((a as i32 as i64 * b as i32 as i64) >> 32) as u32,
        AluOp::And => a & b,
        AluOp::Or => a | b,
        AluOp::Xor => a ^ b,
        AluOp::Sll => a << (b & 31),
        AluOp::Srl => a >> (b & 31),
        AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
        AluOp::Slt => ((a as i32) < (b as i32)) as u32,
        AluOp::Sltu => (a < b) as u32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::instr::{load_imm, Reg};

    fn addi(rd: u8, rs1: u8, imm: i32) -> Instr {
        Instr::AluImm { op: AluOp::Add, rd: Reg(rd), rs1: Reg(rs1), imm }
    }

    #[test]
    fn empty_program_changes_nothing() {
        let mut m = Machine::new(64);
        let before = m.clone();
        assert_eq!(m.run(&[]).unwrap(), Exit::End);
        assert_eq!(m, before);
    }

    #[test]
    fn hundred_addi_take_hundred_cycles() {
        let prog = vec![addi(1, 1, 1); 100];
        let mut m = Machine::new(0);
        m.run(&prog).unwrap();
        assert_eq!(m.cycles, 100);
        assert_eq!(m.reg(1), 100);
        assert_eq!(m.energy_units(), 100.0);
    }

    #[test]
    fn x0_stays_zero() {
        let mut m = Machine::new(0);
        m.run(&[addi(0, 0, 5)]).unwrap();
        assert_eq!(m.reg(0), 0);
    }

    #[test]
    fn out_of_bounds_and_illegal_keep_state() {
        let mut m = Machine::new(16);
        let prog = [addi(1, 0, 16), Instr::Load { kind: LoadKind::Word, rd: Reg(2), rs1: Reg(1), offset: 0 }];
        assert!(matches!(m.run(&prog), Err(SimError::OutOfBounds { pc: 1, .. })));
        assert_eq!(m.pc, 1);
        assert_eq!(m.cycles, 1);
        let mut m = Machine::new(16);
        assert!(matches!(m.run(&[addi(3, 0, 1), Instr::Unimp]), Err(SimError::IllegalInstruction { pc: 1, .. })));
        assert_eq!(m.reg(3), 1);
    }

    #[test]
    fn load_imm_reaches_any_constant() {
        for v in [0, 1, -1, 2047, -2048, 2048, 0x7fff_ffff, i32::MIN, 0x1234_5800, -0x1234_5678] {
            let mut m = Machine::new(0);
            m.run(&load_imm(Reg(5), v)).unwrap();
            assert_eq!(m.reg(5) as i32, v);
        }
    }

    #[test]
    fn mulh_is_signed_high_word() {
        let mut m = Machine::new(0);
        m.set_reg(1, (-3i32) as u32);
        m.set_reg(2, 0x4000_0000);
        m.run(&[Instr::Alu { op: AluOp::Mulh, rd: Reg(3), rs1: Reg(1), rs2: Reg(2) }]).unwrap();
        assert_eq!(m.reg(3) as i32, ((-3i64 * 0x4000_0000) >> 32) as i32);
    }
}
