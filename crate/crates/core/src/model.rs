//! The composite encoder → language model → adapter stack.

use serde::{Deserialize, Serialize};

use crate::adapter::{adapter_tape, init_adapter, AdapterConfig};
use crate::encoder::{encode_tape, init_encoder, proposal_tape, EncoderConfig, StructureRepr};
use crate::error::{Error, Result};
use crate::geometry::{GraphConfig, StructureInput};
use crate::lm::{init_lm, lm_tape, rope_table, LMConfig};
use crate::nn::{Matrix, ParamStore, Tape, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub graph: GraphConfig,
    pub encoder: EncoderConfig,
    pub lm: LMConfig,
    pub adapter: AdapterConfig,
    /// Sequence-only ablation: the adapter sees all-zero structure states.
    pub zero_structure: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.encoder.validate()?;
        self.lm.validate()?;
        self.adapter.validate(self.lm.d_model)
    }
}

/// Fresh parameters for every component.
pub fn init_model(config: &ModelConfig, seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    init_encoder(&mut p, seed, &config.encoder, &config.graph);
    init_lm(&mut p, seed, &config.lm);
    init_adapter(
        &mut p,
        seed,
        &config.adapter,
        config.lm.d_model,
        config.encoder.d_model,
    );
    p
}

/// Tape nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub design: Var,
    pub proposal: Var,
    pub lm_hidden: Var,
    pub fused: Var,
}

fn structure_var(tape: &mut Tape, config: &ModelConfig, states: Var) -> Var {
    if config.zero_structure {
        let (r, c) = tape.value(states).shape();
        tape.input(Matrix::zeros(r, c))
    } else {
        states
    }
}

/// Full forward pass on `tape`; `rng` enables dropout.
pub fn forward_tape(
    tape: &mut Tape,
    params: &ParamStore,
    config: &ModelConfig,
    input: &StructureInput,
    tokens: &[u8],
    mut rng: Option<&mut Rng>,
) -> Result<ForwardVars> {
    if tokens.len() != input.len() {
        return Err(Error::LengthMismatch {
            sequence: tokens.len(),
            structure: input.len(),
        });
    }
    let enc = encode_tape(tape, params, &config.encoder, input, rng.as_deref_mut())?;
    let proposal = proposal_tape(tape, params, enc);
    let lm_hidden = lm_tape(tape, params, &config.lm, tokens, rng)?;
    let st = structure_var(tape, config, enc);
    let rope = rope_table(tokens.len(), config.lm.d_model / config.adapter.n_heads);
    let (fused, design) = adapter_tape(tape, params, &config.adapter, lm_hidden, st, &rope, None);
    Ok(ForwardVars {
        design,
        proposal,
        lm_hidden,
        fused,
    })
}

/// Inference wrapper that runs the encoder once and the sequence path on
/// demand.
pub struct Designer<'a> {
    pub params: &'a ParamStore,
    pub config: &'a ModelConfig,
    pub repr: StructureRepr,
    pub proposal: Matrix,
}

impl<'a> Designer<'a> {
    pub fn new(
        params: &'a ParamStore,
        config: &'a ModelConfig,
        input: &StructureInput,
    ) -> Result<Self> {
        let mut tape = Tape::new();
        let enc = encode_tape(&mut tape, params, &config.encoder, input, None)?;
        let proposal = proposal_tape(&mut tape, params, enc);
        Ok(Designer {
            params,
            config,
            proposal: tape.value(proposal).clone(),
            repr: StructureRepr {
                states: tape.value(enc).clone(),
                mask: vec![true; input.len()],
            },
        })
    }

    pub fn len(&self) -> usize {
        self.repr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.repr.is_empty()
    }

    /// L × 20 design logits for the token input.
    pub fn design_logits(&self, tokens: &[u8]) -> Result<Matrix> {
        if tokens.len() != self.len() {
            return Err(Error::LengthMismatch {
                sequence: tokens.len(),
                structure: self.len(),
            });
        }
        let mut tape = Tape::new();
        let h = lm_tape(&mut tape, self.params, &self.config.lm, tokens, None)?;
        let st = tape.input(self.repr.states.clone());
        let st = structure_var(&mut tape, self.config, st);
        let rope = rope_table(
            tokens.len(),
            self.config.lm.d_model / self.config.adapter.n_heads,
        );
        let (_, design) = adapter_tape(
            &mut tape,
            self.params,
            &self.config.adapter,
            h,
            st,
            &rope,
            None,
        );
        Ok(tape.value(design).clone())
    }
}
