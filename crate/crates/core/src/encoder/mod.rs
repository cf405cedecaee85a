//! Attention autoencoder over tokenized weight vectors.

mod io;
pub mod model;
pub mod tokens;

pub use io::MAGIC as ENCODER_MAGIC;
pub use model::{bind_groups, Bound, EncoderConfig, Group, HyperModel, HyperRep};
pub use tokens::{Tokenization, Tokenizer};
