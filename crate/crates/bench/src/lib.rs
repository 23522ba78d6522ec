//! Shared fixtures for the criterion benchmarks.

use seqdesign_core::data::{gen_synthetic_record, BackboneStructure, SyntheticSpec};
use seqdesign_core::model::ModelConfig;

/// A synthetic protein of exactly `len` residues.
pub fn protein(len: usize, index: u64) -> BackboneStructure {
    let spec = SyntheticSpec {
        length_range: (len, len),
        ..SyntheticSpec::default()
    };
    gen_synthetic_record(&spec, index).structure
}

/// The small configuration used for timing design and training steps.
pub fn small_model() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.encoder.d_model = 64;
    m.encoder.n_layers = 2;
    m.lm.d_model = 64;
    m.lm.n_layers = 2;
    m
}
