//! Reverse-mode training engine for the fixed seed topology.

pub mod adam;
pub mod layers;
pub mod network;
pub mod ops;
pub mod trainer;

pub use adam::AdamState;
pub use network::{Mode, Network, Normalizer, Widths, FRAME_PIXELS, NUM_CLASSES};
pub use trainer::{fit, fit_with, TrainConfig, TrainReport};
