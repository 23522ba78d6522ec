//! Structural adapter: cross-attention from language-model states to
//! structure states followed by a bottleneck feed-forward block, placed after
//! the last language-model layer, plus the 20-way design head.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::NUM_AMINO_ACIDS;
use crate::encoder::StructureRepr;
use crate::error::{Error, Result};
use crate::lm::{rope_table, LMStates};
use crate::nn::{attention, layer_norm, linear, Matrix, ParamStore, RopeTable, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub n_heads: usize,
    /// Zero the output projections of both residual branches at init.
    pub zero_init_output: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            n_heads: 4,
            zero_init_output: true,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.n_heads == 0 || d_model % self.n_heads != 0 || (d_model / self.n_heads) % 2 != 0 {
            return Err(Error::Config(format!(
                "adapter.n_heads ({}) must divide the model width ({d_model}) into even head sizes",
                self.n_heads
            )));
        }
        if d_model % 2 != 0 {
            return Err(Error::Config("adapter needs an even model width".into()));
        }
        Ok(())
    }
}

pub fn bottleneck_dim(d_model: usize) -> usize {
    d_model / 2
}

/// Post-adapter states and design logits.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedStates {
    /// L × d_model.
    pub states: Matrix,
    /// L × 20.
    pub logits: Matrix,
}

/// Adds adapter tensors for an LM of width `d_lm` reading encoder states of
/// width `d_enc`. The design head starts as a copy of the amino-acid rows of
/// the LM read-out when one is present.
pub fn init_adapter(
    store: &mut ParamStore,
    seed: u64,
    config: &AdapterConfig,
    d_lm: usize,
    d_enc: usize,
) {
    let b = bottleneck_dim(d_lm);
    store.init_layer_norm("adapter.ln_attn", d_lm);
    store.init_linear(seed, "adapter.attn.q", d_lm, d_lm, true);
    store.init_linear(seed, "adapter.attn.k", d_enc, d_lm, true);
    store.init_linear(seed, "adapter.attn.v", d_enc, d_lm, true);
    store.init_linear(seed, "adapter.attn.o", d_lm, d_lm, true);
    store.init_layer_norm("adapter.ln_ffn", d_lm);
    store.init_linear(seed, "adapter.ffn.down", d_lm, b, true);
    store.init_linear(seed, "adapter.ffn.up", b, d_lm, true);
    if config.zero_init_output {
        for name in [
            "adapter.attn.o.w",
            "adapter.attn.o.b",
            "adapter.ffn.up.w",
            "adapter.ffn.up.b",
        ] {
            let p = store.get_mut(name).unwrap();
            p.value = Matrix::zeros(p.value.rows, p.value.cols);
        }
    }
    store.init_linear(seed, "adapter.head", d_lm, NUM_AMINO_ACIDS, true);
    copy_lm_head(store);
}

/// Overwrites the design head with the amino-acid part of `lm.head`.
pub fn copy_lm_head(store: &mut ParamStore) {
    let (Some(w), Some(b)) = (store.get("lm.head.w"), store.get("lm.head.b")) else {
        return;
    };
    let (w, b) = (w.value.clone(), b.value.clone());
    let mut hw = Matrix::zeros(w.rows, NUM_AMINO_ACIDS);
    for r in 0..w.rows {
        hw.row_mut(r).copy_from_slice(&w.row(r)[..NUM_AMINO_ACIDS]);
    }
    let hb = Matrix::from_vec(1, NUM_AMINO_ACIDS, b.data[..NUM_AMINO_ACIDS].to_vec());
    store.get_mut("adapter.head.w").unwrap().value = hw;
    store.get_mut("adapter.head.b").unwrap().value = hb;
}

/// Closed-form number of adapter scalars (including the design head) for LM
/// width `d` and encoder width `e`.
pub fn adapter_param_count(d: usize, e: usize) -> usize {
    let b = bottleneck_dim(d);
    let norms = 2 * (2 * d);
    let attention = (d * d + d) + 2 * (e * d + d) + (d * d + d);
    let ffn = (d * b + b) + (b * d + d);
    let head = d * NUM_AMINO_ACIDS + NUM_AMINO_ACIDS;
    norms + attention + ffn + head
}

/// Records the adapter on `tape`. `rope` carries residue-index rotations for
/// queries and keys. Returns (states, design logits).
pub fn adapter_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &AdapterConfig,
    seq: Var,
    structure: Var,
    rope: &Arc<RopeTable>,
    struct_mask: Option<&[bool]>,
) -> (Var, Var) {
    let q = layer_norm(tape, store, "adapter.ln_attn", seq);
    let a = attention(
        tape,
        store,
        "adapter.attn",
        q,
        structure,
        config.n_heads,
        Some((rope, rope)),
        struct_mask,
    );
    let h = tape.add(seq, a);
    let x = layer_norm(tape, store, "adapter.ln_ffn", h);
    let x = linear(tape, store, "adapter.ffn.down", x);
    let x = tape.gelu(x);
    let x = linear(tape, store, "adapter.ffn.up", x);
    let h = tape.add(h, x);
    let logits = linear(tape, store, "adapter.head", h);
    (h, logits)
}

pub fn adapt(
    seq_states: &LMStates,
    struct_repr: &StructureRepr,
    params: &ParamStore,
    config: &AdapterConfig,
) -> Result<FusedStates> {
    let (l, s) = (seq_states.hidden.rows, struct_repr.states.rows);
    if l != s {
        return Err(Error::LengthMismatch {
            sequence: l,
            structure: s,
        });
    }
    let d = seq_states.hidden.cols;
    config.validate(d)?;
    let mut tape = Tape::new();
    let seq = tape.input(seq_states.hidden.clone());
    let st = tape.input(struct_repr.states.clone());
    let rope = rope_table(l, d / config.n_heads);
    let (h, logits) = adapter_tape(
        &mut tape,
        params,
        config,
        seq,
        st,
        &rope,
        Some(&struct_repr.mask),
    );
    Ok(FusedStates {
        states: tape.value(h).clone(),
        logits: tape.value(logits).clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainableRatio {
    pub trainable: usize,
    pub total: usize,
    pub ratio: f64,
}

/// Parameter counts after applying `mode`'s trainability flags.
pub fn trainable_ratio(params: &ParamStore, mode: &crate::training::TrainMode) -> TrainableRatio {
    let mut p = params.clone();
    mode.apply(&mut p);
    let (trainable, total) = p.counts();
    TrainableRatio {
        trainable,
        total,
        ratio: trainable as f64 / total.max(1) as f64,
    }
}
