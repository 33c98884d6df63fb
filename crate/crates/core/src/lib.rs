//! People counting on 8x8 infrared frames with tiny CNNs: channel-mask
//! architecture search, INT4/INT8 quantization-aware training, majority
//! vote smoothing, and bit-exact integer execution on a simulated core with
//! packed dot-product instructions.

pub mod cli;
pub mod dnas;
pub mod error;
pub mod isa;
pub mod kernels;
pub mod pipeline;
pub mod postproc;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
