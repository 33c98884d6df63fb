//! Integer layer kernels in three bit-identical forms: a scalar reference,
//! a host fast path on packed words, and generated simulator programs.

pub mod codegen;
pub mod host;
pub mod oracle;
pub mod packed;
pub mod runner;

pub use codegen::KernelProgram;
pub use host::{conv2d_int, linear_int, maxpool_int};
pub use packed::{PackedTensor, PackedWeights};
pub use runner::{run_network_int, Backend, IntOutput, NetworkProgram};
