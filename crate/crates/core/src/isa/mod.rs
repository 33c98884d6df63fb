//! Instruction-level simulator of a small integer core extended with
//! packed signed dot-product instructions.

pub mod asm;
pub mod instr;
pub mod lanes;
pub mod machine;

pub use asm::{listing, parse, AsmError};
pub use instr::{DotWidth, Instr, Opcode, Reg};
pub use lanes::{pack_lanes, sdotp4, sdotp8, unpack_lanes};
pub use machine::{EnergyModel, Exit, Machine, SimError};
