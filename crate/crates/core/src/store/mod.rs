//! Canonical weight vectors, checkpoint files and the s(W) baseline.

pub mod checkpoint;
pub mod layout;
pub mod stats;

pub use checkpoint::{load_checkpoint, save_checkpoint, WeightVector};
pub use layout::{arch_hash, LayerLayout, NeuronSlice, ParamKind, ParamLayer, Segment};
pub use stats::{statistics_dim, weight_statistics};
