//! Batch-norm folding, affine fake-quantization, QAT and integer lowering.

pub mod fold;
pub mod lower;
pub mod qat;
pub mod quantizer;
pub mod spec;

pub use fold::fold_bn;
pub use lower::{lower_to_integer, QuantLayer, QuantizedNetwork};
pub use qat::{prepare, qat, QuantState};
pub use quantizer::{fake_quant, AffineQuantizer, LearnedRange, RangeKind};
pub use spec::{enumerate_specs, QuantSpec};
