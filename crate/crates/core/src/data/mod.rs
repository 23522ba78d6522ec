//! Data formats: vocabulary, backbone structures, JSONL datasets and the
//! synthetic benchmark generator.

mod dataset;
mod structure;
mod synthetic;
mod vocab;

pub use dataset::{parse_dataset, parse_dataset_str, write_dataset, ParseStats, ParsedDataset};
pub use structure::{BackboneStructure, Chain, ResidueAtoms, SequenceState, Vec3};
pub(crate) use synthetic::in_box;
pub use synthetic::{
    bayes_optimal_recovery, build_backbone, default_rule_table, gen_synthetic,
    gen_synthetic_record, RuleTable, SsClass, SyntheticRecord, SyntheticSpec, HELIX_PHI_PSI,
    SS_BOX_HALF_WIDTH, START_SYMBOL, STRAND_PHI_PSI,
};
pub use vocab::{
    Vocabulary, AMINO_ACIDS, CHAIN_BREAK, MASK, NUM_AMINO_ACIDS, PAD, UNK, VOCAB_SIZE,
};
