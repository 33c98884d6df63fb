//! Text assembly: one instruction per line, `#`/`;` comments, `name:`
//! labels. Operands are `xN` registers, decimal or `0x` immediates,
//! `offset(xN)` memory operands, and label or absolute-index targets.

use std::collections::HashMap;

use thiserror::Error;

use super::instr::{AluOp, Cond, DotWidth, Instr, LoadKind, Opcode, Reg, StoreKind, IMM12_MAX, IMM12_MIN};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: usize, mnemonic: String },
    #[error("line {line}: `{mnemonic}` is not supported: {reason}")]
    Unsupported { line: usize, mnemonic: String, reason: &'static str },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undefined label `{label}`")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: label `{label}` defined twice")]
    DuplicateLabel { line: usize, label: String },
}

/// Explains why a dot-product-like mnemonic other than `SDOTP8`/`SDOTP4`
/// is rejected.
fn unsupported_dot(m: &str) -> Option<&'static str> {
    if !m.contains("SDOT") && !m.contains("DOTP") {
        return None;
    }
    Some(if m.starts_with("ML") || m.contains("LD") || m.contains("LOAD") {
        "MAC&Load variants are not implemented"
    } else if m.contains('U') {
        "unsigned variants are not implemented"
    } else if m.contains("84") || m.contains("48") || m.contains("8X4") || m.contains("4X8") {
        "mixed-width variants are not implemented"
    } else if m.contains('2') {
        "2-bit lanes are not supported"
    } else {
        "only SDOTP8 and SDOTP4 exist"
    })
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax { line, msg: msg.into() }
}

fn reg(line: usize, s: &str) -> Result<Reg, AsmError> {
    let s = s.trim();
    let n = match s {
        "zero" => Some(0),
        _ => s.strip_prefix('x').and_then(|d| d.parse::<u8>().ok()),
    };
    n.and_then(Reg::new).ok_or_else(|| syntax(line, format!("expected register, got `{s}`")))
}

fn is_reg(s: &str) -> bool {
    reg(0, s).is_ok()
}

fn int(line: usize, s: &str) -> Result<i64, AsmError> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| syntax(line, format!("expected integer, got `{s}`")))?;
    Ok(if neg { -v } else { v })
}

fn imm12(line: usize, s: &str) -> Result<i32, AsmError> {
    let v = int(line, s)?;
    if !(IMM12_MIN as i64..=IMM12_MAX as i64).contains(&v) {
        return Err(syntax(line, format!("immediate {v} does not fit 12 bits")));
    }
    Ok(v as i32)
}

fn mem_operand(line: usize, s: &str) -> Result<(i32, Reg), AsmError> {
    let s = s.trim();
    let open = s.find('(').ok_or_else(|| syntax(line, format!("expected offset(reg), got `{s}`")))?;
    let close = s.strip_suffix(')').ok_or_else(|| syntax(line, format!("expected offset(reg), got `{s}`")))?;
    let off = if open == 0 { 0 } else { imm12(line, &s[..open])? };
    Ok((off, reg(line, &close[open + 1..])?))
}

/// Parses a listing into instructions.
pub fn parse(text: &str) -> Result<Vec<Instr>, AsmError> {
    // first pass: labels
    let mut labels = HashMap::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut body = raw.split(['#', ';']).next().unwrap_or("").trim();
        while let Some(colon) = body.find(':') {
            let name = body[..colon].trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                break;
            }
            if labels.insert(name.to_string(), lines.len()).is_some() {
                return Err(AsmError::DuplicateLabel { line, label: name.into() });
            }
            body = body[colon + 1..].trim();
        }
        if !body.is_empty() {
            lines.push((line, body));
        }
    }
    let target = |line: usize, s: &str| -> Result<usize, AsmError> {
        let s = s.trim();
        if let Ok(v) = int(line, s) {
            return usize::try_from(v).map_err(|_| syntax(line, "negative target"));
        }
        labels.get(s).copied().ok_or_else(|| AsmError::UndefinedLabel { line, label: s.into() })
    };
    let mut out = Vec::with_capacity(lines.len());
    for (line, body) in lines {
        let (mn, rest) = match body.find(char::is_whitespace) {
            Some(p) => (&body[..p], body[p..].trim()),
            None => (body, ""),
        };
        let upper = mn.to_ascii_uppercase();
        let ops: Vec<&str> = if rest.is_empty() { Vec::new() } else { rest.split(',').map(str::trim).collect() };
        let Some(op) = Opcode::from_mnemonic(&upper) else {
            if let Some(reason) = unsupported_dot(&upper) {
                return Err(AsmError::Unsupported { line, mnemonic: mn.into(), reason });
            }
            return Err(AsmError::UnknownMnemonic { line, mnemonic: mn.into() });
        };
        let want = |n: usize| -> Result<(), AsmError> {
            if ops.len() == n {
                Ok(())
            } else {
                Err(syntax(line, format!("`{mn}` takes {n} operands, got {}", ops.len())))
            }
        };
        use Opcode as O;
        let alu_imm = |op: AluOp| -> Result<Instr, AsmError> {
            want(3)?;
            let imm = if matches!(op, AluOp::Sll | AluOp::Srl | AluOp::Sra) {
                let v = int(line, ops[2])?;
                if !(0..32).contains(&v) {
                    return Err(syntax(line, format!("shift amount {v} out of range")));
                }
                v as i32
            } else {
                imm12(line, ops[2])?
            };
            Ok(Instr::AluImm { op, rd: reg(line, ops[0])?, rs1: reg(line, ops[1])?, imm })
        };
        let alu = |op: AluOp| -> Result<Instr, AsmError> {
            want(3)?;
            Ok(Instr::Alu { op, rd: reg(line, ops[0])?, rs1: reg(line, ops[1])?, rs2: reg(line, ops[2])? })
        };
        let load = |kind: LoadKind| -> Result<Instr, AsmError> {
            want(2)?;
            let (offset, rs1) = mem_operand(line, ops[1])?;
            Ok(Instr::Load { kind, rd: reg(line, ops[0])?, rs1, offset })
        };
        let store = |kind: StoreKind| -> Result<Instr, AsmError> {
            want(2)?;
            let (offset, rs1) = mem_operand(line, ops[1])?;
            Ok(Instr::Store { kind, rs2: reg(line, ops[0])?, rs1, offset })
        };
        let branch = |cond: Cond| -> Result<Instr, AsmError> {
            want(3)?;
            Ok(Instr::Branch { cond, rs1: reg(line, ops[0])?, rs2: reg(line, ops[1])?, target: target(line, ops[2])? })
        };
        let dot = |width: DotWidth| -> Result<Instr, AsmError> {
            want(3)?;
            if let Some(bad) = ops.iter().find(|o| !is_reg(o)) {
                return Err(AsmError::Unsupported {
                    line,
                    mnemonic: format!("{mn} ... {bad}"),
                    reason: "dot-product operands must be registers",
                });
            }
            Ok(Instr::Sdotp { width, rd: reg(line, ops[0])?, rs1: reg(line, ops[1])?, rs2: reg(line, ops[2])? })
        };
        let ins = match op {
            O::Lui => {
                want(2)?;
                let v = int(line, ops[1])?;
                if !(0..1 << 20).contains(&v) {
                    return Err(syntax(line, format!("LUI immediate {v} does not fit 20 bits")));
                }
                Instr::Lui { rd: reg(line, ops[0])?, imm: v as u32 }
            }
            O::Addi => alu_imm(AluOp::Add)?,
            O::Andi => alu_imm(AluOp::And)?,
            O::Ori => alu_imm(AluOp::Or)?,
            O::Xori => alu_imm(AluOp::Xor)?,
            O::Slli => alu_imm(AluOp::Sll)?,
            O::Srli => alu_imm(AluOp::Srl)?,
            O::Srai => alu_imm(AluOp::Sra)?,
            O::Slti => alu_imm(AluOp::Slt)?,
            O::Add => alu(AluOp::Add)?,
            O::Sub => alu(AluOp::Sub)?,
            O::Mul => alu(AluOp::Mul)?,
            O::Mulh => alu(AluOp::Mulh)?,
            O::And => alu(AluOp::And)?,
            O::Or => alu(AluOp::Or)?,
            O::Xor => alu(AluOp::Xor)?,
            O::Sll => alu(AluOp::Sll)?,
            O::Srl => alu(AluOp::Srl)?,
            O::Sra => alu(AluOp::Sra)?,
            O::Slt => alu(AluOp::Slt)?,
            O::Sltu => alu(AluOp::Sltu)?,
            O::Lw => load(LoadKind::Word)?,
            O::Lb => load(LoadKind::Byte)?,
            O::Lbu => load(LoadKind::ByteU)?,
            O::Sw => store(StoreKind::Word)?,
            O::Sb => store(StoreKind::Byte)?,
            O::Beq => branch(Cond::Eq)?,
            O::Bne => branch(Cond::Ne)?,
            O::Blt => branch(Cond::Lt)?,
            O::Bge => branch(Cond::Ge)?,
            O::Jal => {
                want(2)?;
                Instr::Jal { rd: reg(line, ops[0])?, target: target(line, ops[1])? }
            }
            O::Sdotp8 => dot(DotWidth::W8)?,
            O::Sdotp4 => dot(DotWidth::W4)?,
            O::Halt => {
                want(0)?;
                Instr::Halt
            }
            O::Unimp => {
                want(0)?;
                Instr::Unimp
            }
        };
        out.push(ins);
    }
    Ok(out)
}

/// One instruction per line; `parse(&listing(p)) == p`.
pub fn listing(program: &[Instr]) -> String {
    let mut s = String::new();
    for ins in program {
        s.push_str(&ins.to_string());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labels_and_memory_operands() {
        let p = parse(
            "start: addi x1, x0, 3   # counter\n\
             loop:\n  addi x1, x1, -1\n  bne x1, x0, loop\n  lw x2, 8(x3)\n  SDOTP4 x5, x6, x7\n",
        )
        .unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p[2], Instr::Branch { cond: Cond::Ne, rs1: Reg(1), rs2: Reg(0), target: 1 });
        assert_eq!(p[3], Instr::Load { kind: LoadKind::Word, rd: Reg(2), rs1: Reg(3), offset: 8 });
        assert_eq!(parse(&listing(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_absent_dot_variants() {
        for m in ["SDOTUP8", "SDOTP8U", "SDOTP84", "SDOTP48", "SDOTP2", "MLSDOTP8", "SDOTP8.LD"] {
            let e = parse(&format!("{m} x1, x2, x3")).unwrap_err();
            assert!(matches!(e, AsmError::Unsupported { .. }), "{m}: {e}");
        }
        let e = parse("SDOTP8 x1, x2, 5").unwrap_err();
        assert!(matches!(e, AsmError::Unsupported { .. }));
    }

    #[test]
    fn rejects_bad_immediates_and_labels() {
        assert!(parse("addi x1, x0, 4096").is_err());
        assert!(parse("beq x0, x0, nowhere").is_err());
        assert!(parse("a:\na:\n").is_err());
        assert!(parse("add x1, x2").is_err());
        assert!(parse("frob x1").is_err());
    }
}
