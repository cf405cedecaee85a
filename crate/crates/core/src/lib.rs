//! Model zoos, weight-space augmentations and self-supervised
//! hyper-representations of neural network weights.

pub mod augment;
pub mod datasets;
pub mod encoder;
pub mod error;
pub mod probe;
pub mod rng;
pub mod ssl;
pub mod store;
pub mod tensor;
pub mod zoo;

pub use datasets::{DataSplit, ImageDataset};
pub use error::{Error, Result};
pub use rng::{Rng, SeedStream};
pub use store::{LayerLayout, WeightVector};
pub use tensor::{Activation, OptimizerKind, OptimizerState, Scalar, Tape, Tensor, Var};
pub use zoo::{ArchSpec, EpochRecord, Split, TrainConfig, Zoo, ZooManifest};
