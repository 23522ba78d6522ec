//! Structure-conditioned protein sequence design with a masked language
//! model and a structural adapter.
//!
//! The pipeline featurizes a backbone into a k-nearest-neighbour graph,
//! encodes it with a message-passing network, fuses the result into a
//! bidirectional sequence model through a cross-attention adapter, trains
//! with conditional masked language modelling and designs sequences by
//! iterative refinement.

pub mod adapter;
pub mod checkpoint;
pub mod data;
pub mod decoding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod lm;
pub mod model;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelSpec};
pub use data::{BackboneStructure, SequenceState, Vocabulary};
pub use decoding::{design, DecodingConfig, DesignResult};
pub use model::{init_model, ModelConfig};
pub use nn::{Matrix, ParamStore};
pub use training::{train, TrainConfig, TrainMode};
