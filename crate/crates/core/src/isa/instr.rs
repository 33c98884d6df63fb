//! Instruction set: an RV32IM-like subset plus `SDOTP8`/`SDOTP4`.
//!
//! Branch and jump targets are absolute instruction indices.

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);

    pub fn new(i: u8) -> Option<Reg> {
        (i < 32).then_some(Reg(i))
    }

    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Mul,
    Mulh,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LoadKind {
    Word,
    Byte,
    ByteU,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StoreKind {
    Word,
    Byte,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

/// SIMD lane width of a dot-product instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DotWidth {
    W8,
    W4,
}

impl DotWidth {
    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(Self::W8),
            4 => Some(Self::W4),
            _ => None,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Self::W8 => 8,
            Self::W4 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    /// `rd = imm << 12`, `imm` in `0..2^20`.
    Lui { rd: Reg, imm: u32 },
    /// Register-immediate ALU op; `imm` is a signed 12-bit value (a shift
    /// amount for the shifts). `Sub`, `Mul`, `Mulh` and `Sltu` have no
    /// immediate form.
    AluImm { op: AluOp, rd: Reg, rs1: Reg, imm: i32 },
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    Load { kind: LoadKind, rd: Reg, rs1: Reg, offset: i32 },
    Store { kind: StoreKind, rs2: Reg, rs1: Reg, offset: i32 },
    Branch { cond: Cond, rs1: Reg, rs2: Reg, target: usize },
    Jal { rd: Reg, target: usize },
    /// `rd += dot(rs1, rs2)` over packed signed lanes.
    Sdotp { width: DotWidth, rd: Reg, rs1: Reg, rs2: Reg },
    Halt,
    /// Decodes to nothing; executing it raises an illegal-instruction error.
    Unimp,
}

/// Opcode identity, used for per-opcode counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Lui,
    Addi,
    Andi,
    Ori,
    Xori,
    Slli,
    Srli,
    Srai,
    Slti,
    Add,
    Sub,
    Mul,
    Mulh,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
    Lw,
    Lb,
    Lbu,
    Sw,
    Sb,
    Beq,
    Bne,
    Blt,
    Bge,
    Jal,
    Sdotp8,
    Sdotp4,
    Halt,
    Unimp,
}

impl Opcode {
    pub const ALL: [Opcode; 35] = [
        Opcode::Lui,
        Opcode::Addi,
        Opcode::Andi,
        Opcode::Ori,
        Opcode::Xori,
        Opcode::Slli,
        Opcode::Srli,
        Opcode::Srai,
        Opcode::Slti,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Mulh,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Sll,
        Opcode::Srl,
        Opcode::Sra,
        Opcode::Slt,
        Opcode::Sltu,
        Opcode::Lw,
        Opcode::Lb,
        Opcode::Lbu,
        Opcode::Sw,
        Opcode::Sb,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Blt,
        Opcode::Bge,
        Opcode::Jal,
        Opcode::Sdotp8,
        Opcode::Sdotp4,
        Opcode::Halt,
        Opcode::Unimp,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Lui => "LUI",
            Opcode::Addi => "ADDI",
            Opcode::Andi => "ANDI",
            Opcode::Ori => "ORI",
            Opcode::Xori => "XORI",
            Opcode::Slli => "SLLI",
            Opcode::Srli => "SRLI",
            Opcode::Srai => "SRAI",
            Opcode::Slti => "SLTI",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Mulh => "MULH",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Sll => "SLL",
            Opcode::Srl => "SRL",
            Opcode::Sra => "SRA",
            Opcode::Slt => "SLT",
            Opcode::Sltu => "SLTU",
            Opcode::Lw => "LW",
            Opcode::Lb => "LB",
            Opcode::Lbu => "LBU",
            Opcode::Sw => "SW",
            Opcode::Sb => "SB",
            Opcode::Beq => "BEQ",
            Opcode::Bne => "BNE",
            Opcode::Blt => "BLT",
            Opcode::Bge => "BGE",
            Opcode::Jal => "JAL",
            Opcode::Sdotp8 => "SDOTP8",
            Opcode::Sdotp4 => "SDOTP4",
            Opcode::Halt => "HALT",
            Opcode::Unimp => "UNIMP",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let up = s.to_ascii_uppercase();
        Opcode::ALL.iter().copied().find(|o| o.mnemonic() == up)
    }

    pub fn is_sdotp(self) -> bool {
        matches!(self, Opcode::Sdotp8 | Opcode::Sdotp4)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

pub const IMM12_MIN: i32 = -2048;
pub const IMM12_MAX: i32 = 2047;

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match *self {
            Instr::Lui { .. } => Opcode::Lui,
            Instr::AluImm { op, .. } => match op {
                AluOp::Add => Opcode::Addi,
                AluOp::And => Opcode::Andi,
                AluOp::Or => Opcode::Ori,
                AluOp::Xor => Opcode::Xori,
                AluOp::Sll => Opcode::Slli,
                AluOp::Srl => Opcode::Srli,
                AluOp::Sra => Opcode::Srai,
                AluOp::Slt => Opcode::Slti,
                AluOp::Sub | AluOp::Mul | AluOp::Mulh | AluOp::Sltu => Opcode::Unimp,
            },
            Instr::Alu { op, .. } => match op {
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
                AluOp::Mul => Opcode::Mul,
                AluOp::Mulh => Opcode::Mulh,
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Xor => Opcode::Xor,
                AluOp::Sll => Opcode::Sll,
                AluOp::Srl => Opcode::Srl,
                AluOp::Sra => Opcode::Sra,
                AluOp::Slt => Opcode::Slt,
                AluOp::Sltu => Opcode::Sltu,
            },
            Instr::Load { kind, .. } => match kind {
                LoadKind::Word => Opcode::Lw,
                LoadKind::Byte => Opcode::Lb,
                LoadKind::ByteU => Opcode::Lbu,
            },
            Instr::Store { kind, .. } => match kind {
                StoreKind::Word => Opcode::Sw,
                StoreKind::Byte => Opcode::Sb,
            },
            Instr::Branch { cond, .. } => match cond {
                Cond::Eq => Opcode::Beq,
                Cond::Ne => Opcode::Bne,
                Cond::Lt => Opcode::Blt,
                Cond::Ge => Opcode::Bge,
            },
            Instr::Jal { .. } => Opcode::Jal,
            Instr::Sdotp { width, .. } => match width {
                DotWidth::W8 => Opcode::Sdotp8,
                DotWidth::W4 => Opcode::Sdotp4,
            },
            Instr::Halt => Opcode::Halt,
            Instr::Unimp => Opcode::Unimp,
        }
    }

    /// Whether operands fit their encodings (register numbers, immediate
    /// ranges, immediate-form availability).
    pub fn is_well_formed(&self) -> bool {
        let r = |x: Reg| x.0 < 32;
        let imm12 = |v: i32| (IMM12_MIN..=IMM12_MAX).contains(&v);
        match *self {
            Instr::Lui { rd, imm } => r(rd) && imm < (1 << 20),
            Instr::AluImm { op, rd, rs1, imm } => {
                let ok_imm = match op {
                    AluOp::Sll | AluOp::Srl | AluOp::Sra => (0..32).contains(&imm),
                    AluOp::Sub | AluOp::Mul | AluOp::Mulh | AluOp::Sltu => false,
                    _ => imm12(imm),
                };
                r(rd) && r(rs1) && ok_imm
            }
            Instr::Alu { rd, rs1, rs2, .. } | Instr::Sdotp { rd, rs1, rs2, .. } => r(rd) && r(rs1) && r(rs2),
            Instr::Load { rd, rs1, offset, .. } => r(rd) && r(rs1) && imm12(offset),
            Instr::Store { rs2, rs1, offset, .. } => r(rs2) && r(rs1) && imm12(offset),
            Instr::Branch { rs1, rs2, .. } => r(rs1) && r(rs2),
            Instr::Jal { rd, .. } => r(rd),
            Instr::Halt | Instr::Unimp => true,
        }
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match *self {
            Instr::Lui { rd, imm } => write!(f, "{m} {rd}, {imm}"),
            Instr::AluImm { rd, rs1, imm, .. } => write!(f, "{m} {rd}, {rs1}, {imm}"),
            Instr::Alu { rd, rs1, rs2, .. } | Instr::Sdotp { rd, rs1, rs2, .. } => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Instr::Load { rd, rs1, offset, .. } => write!(f, "{m} {rd}, {offset}({rs1})"),
            Instr::Store { rs2, rs1, offset, .. } => write!(f, "{m} {rs2}, {offset}({rs1})"),
            Instr::Branch { rs1, rs2, target, .. } => write!(f, "{m} {rs1}, {rs2}, {target}"),
            Instr::Jal { rd, target } => write!(f, "{m} {rd}, {target}"),
            Instr::Halt | Instr::Unimp => f.write_str(m),
        }
    }
}

/// Loads an arbitrary 32-bit constant (one or two instructions).
pub fn load_imm(rd: Reg, value: i32) -> Vec<Instr> {
    if (IMM12_MIN..=IMM12_MAX).contains(&value) {
        return vec![Instr::AluImm { op: AluOp::Add, rd, rs1: Reg::ZERO, imm: value }];
    }
    let lo = (value << 20) >> 20;
    let hi = (value.wrapping_sub(lo) as u32) >> 12;
    let mut v = vec![Instr::Lui { rd, imm: hi }];
    if lo != 0 {
        v.push(Instr::AluImm { op: AluOp::Add, rd, rs1: rd, imm: lo });
    }
    v
}
