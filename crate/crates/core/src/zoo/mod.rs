//! Populations of trained base models.

pub mod arch;
pub mod generate;
pub mod init;
pub mod manifest;
pub mod train;

pub use arch::{build_cnn_mnist, build_ffn_tetris, ArchSpec, FeatureShape, LayerSpec};
pub use generate::{assign_splits, generate_zoo, tetris_hyp_grid, DataSource, GridSpec, ZooKind, ZooSpec};
pub use init::{init_weights, InitMethod};
pub use manifest::{ModelEntry, SampleRef, Split, Zoo, ZooManifest};
pub use train::{evaluate, train_from, train_model, EpochRecord, Evaluation, TrainConfig, TrainedModel};
