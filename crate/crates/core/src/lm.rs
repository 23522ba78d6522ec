//! Bidirectional masked language model over amino-acid tokens, with
//! sequence-only pretraining.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceState, MASK, NUM_AMINO_ACIDS, PAD, VOCAB_SIZE};
use crate::error::{Error, Result};
use crate::nn::{
    attention, dropout, feed_forward, gaussian, layer_norm, linear, Gradients, Matrix, ParamStore,
    RopeTable, Tape, Var,
};
use crate::rng::{stream, tag, Rng};
use crate::training::{choose_positions, noam_lr, Adam, AdamConfig};

pub const ROPE_BASE: f64 = 10000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LMConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width; `None` means 4 × d_model.
    pub ffn_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig {
            d_model: 256,
            n_layers: 4,
            n_heads: 4,
            ffn_dim: None,
            dropout: 0.0,
        }
    }
}

impl LMConfig {
    pub fn ffn_width(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "lm.d_model ({}) must be a positive multiple of lm.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Config(
                "lm head dimension must be even for rotary embedding".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("lm.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Final hidden states and vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LMStates {
    /// L × d_model.
    pub hidden: Matrix,
    /// L × 24.
    pub logits: Matrix,
}

impl LMStates {
    /// Row-wise softmax of the logits over the full vocabulary.
    pub fn probabilities(&self) -> Matrix {
        let mut p = self.logits.clone();
        for r in 0..p.rows {
            crate::nn::softmax_in_place(p.row_mut(r), None);
        }
        p
    }
}

pub fn init_lm(store: &mut ParamStore, seed: u64, config: &LMConfig) {
    let d = config.d_model;
    store.insert("lm.embed", gaussian(seed, "lm.embed", VOCAB_SIZE, d, 1.0));
    for l in 0..config.n_layers {
        let p = format!("lm.layers.{l}");
        for proj in ["q", "k", "v", "o"] {
            store.init_linear(seed, &format!("{p}.attn.{proj}"), d, d, true);
        }
        store.init_layer_norm(&format!("{p}.ln1"), d);
        store.init_linear(seed, &format!("{p}.ffn.up"), d, config.ffn_width(), true);
        store.init_linear(seed, &format!("{p}.ffn.down"), config.ffn_width(), d, true);
        store.init_layer_norm(&format!("{p}.ln2"), d);
    }
    // A small read-out keeps the initial prediction close to uniform.
    store.insert(
        "lm.head.w",
        gaussian(seed, "lm.head.w", d, VOCAB_SIZE, 0.01),
    );
    store.insert("lm.head.b", Matrix::zeros(1, VOCAB_SIZE));
}

pub fn check_tokens(tokens: &[u8]) -> Result<()> {
    match tokens.iter().position(|&t| t as usize >= VOCAB_SIZE) {
        Some(position) => Err(Error::TokenOutOfRange {
            position,
            token: tokens[position],
        }),
        None => Ok(()),
    }
}

/// Rotary table for positions `0..len`.
pub fn rope_table(len: usize, head_dim: usize) -> Arc<RopeTable> {
    let positions: Vec<f64> = (0..len).map(|i| i as f64).collect();
    Arc::new(RopeTable::new(&positions, head_dim, ROPE_BASE))
}

/// Records the transformer on `tape` and returns the final hidden states.
/// PAD positions are excluded as attention keys.
pub fn lm_tape(
    tape: &mut Tape,
    store: &ParamStore,
    config: &LMConfig,
    tokens: &[u8],
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    check_tokens(tokens)?;
    let embed = tape.param(store, "lm.embed");
    let mut h = tape.gather_rows(embed, tokens.iter().map(|&t| t as usize).collect());
    let rope = rope_table(tokens.len(), config.head_dim());
    let keys: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
    for l in 0..config.n_layers {
        let p = format!("lm.layers.{l}");
        let a = attention(
            tape,
            store,
            &format!("{p}.attn"),
            h,
            h,
            config.n_heads,
            Some((&rope, &rope)),
            Some(&keys),
        );
        let a = dropout(tape, a, config.dropout, rng.as_deref_mut());
        let r = tape.add(h, a);
        h = layer_norm(tape, store, &format!("{p}.ln1"), r);
        let f = feed_forward(tape, store, &format!("{p}.ffn"), h);
        let f = dropout(tape, f, config.dropout, rng.as_deref_mut());
        let r = tape.add(h, f);
        h = layer_norm(tape, store, &format!("{p}.ln2"), r);
    }
    Ok(h)
}

pub fn lm_head_tape(tape: &mut Tape, store: &ParamStore, hidden: Var) -> Var {
    linear(tape, store, "lm.head", hidden)
}

pub fn mlm_forward(
    state: &SequenceState,
    params: &ParamStore,
    config: &LMConfig,
) -> Result<LMStates> {
    let mut tape = Tape::new();
    let h = lm_tape(&mut tape, params, config, &state.tokens, None)?;
    let logits = lm_head_tape(&mut tape, params, h);
    Ok(LMStates {
        hidden: tape.value(h).clone(),
        logits: tape.value(logits).clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_residues: usize,
    pub warmup: u64,
    pub lr_factor: f64,
    /// Fraction of positions selected for prediction.
    pub select_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 1000,
            batch_residues: 2000,
            warmup: 100,
            lr_factor: 1.0,
            select_rate: 0.15,
            seed: 0,
        }
    }
}

/// One sequence after BERT-style corruption.
#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    pub input: Vec<u8>,
    /// (position, original token) for every selected position.
    pub targets: Vec<(usize, usize)>,
}

/// Selects `max(1, round(rate · n))` amino-acid positions; each is replaced by
/// MASK with probability 0.8, by a uniform random amino acid with probability
/// 0.1 and kept otherwise.
pub fn bert_corrupt(tokens: &[u8], rate: f64, rng: &mut Rng) -> Corrupted {
    let eligible: Vec<usize> = (0..tokens.len())
        .filter(|&i| (tokens[i] as usize) < NUM_AMINO_ACIDS)
        .collect();
    let mut input = tokens.to_vec();
    if eligible.is_empty() {
        return Corrupted {
            input,
            targets: Vec::new(),
        };
    }
    let count = ((rate * eligible.len() as f64).round() as usize).clamp(1, eligible.len());
    let mut picked: Vec<usize> = choose_positions(eligible.len(), count, rng)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    picked.sort_unstable();
    let mut targets = Vec::with_capacity(count);
    for &i in &picked {
        let u: f64 = rng.random();
        if u < 0.8 {
            input[i] = MASK;
        } else if u < 0.9 {
            input[i] = rng.random_range(0..NUM_AMINO_ACIDS) as u8;
        }
        targets.push((i, tokens[i] as usize));
    }
    Corrupted { input, targets }
}

/// Summed cross-entropy over the 20 amino-acid outputs at the selected
/// positions, with gradients scaled by `1 / norm`.
pub fn mlm_loss_and_grads(
    store: &ParamStore,
    config: &LMConfig,
    corrupted: &Corrupted,
    norm: f64,
    rng: Option<&mut Rng>,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let h = lm_tape(&mut tape, store, config, &corrupted.input, rng)?;
    let logits = lm_head_tape(&mut tape, store, h);
    let loss = tape.cross_entropy(logits, corrupted.targets.clone(), NUM_AMINO_ACIDS, norm);
    Ok((tape.value(loss).data[0], tape.backward(loss)))
}

/// Result of [`pretrain_lm`].
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub params: ParamStore,
    /// Mean selected-position cross-entropy per step.
    pub losses: Vec<f64>,
}

/// Greedy batches of consecutive sequences holding at most `budget` residues
/// (a longer sequence gets a batch of its own).
pub fn residue_batches(lengths: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for &i in order {
        if !cur.is_empty() && used + lengths[i] > budget {
            out.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += lengths[i];
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn shuffled(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

/// Sequence-only masked-language-model pretraining from a fresh
/// initialization.
pub fn pretrain_lm(
    corpus: &[SequenceState],
    schedule: &PretrainConfig,
    config: &LMConfig,
) -> Result<Pretrained> {
    if corpus.is_empty() {
        return Err(Error::invalid("pretraining corpus is empty"));
    }
    config.validate()?;
    let mut params = ParamStore::new();
    init_lm(&mut params, schedule.seed, config);
    let mut adam = Adam::new(AdamConfig::default());
    let lengths: Vec<usize> = corpus.iter().map(SequenceState::len).collect();
    let mut losses = Vec::with_capacity(schedule.steps as usize);
    let mut batches = Vec::new();
    let mut epoch = 0u64;
    for step in 1..=schedule.steps {
        if batches.is_empty() {
            let order = shuffled(
                corpus.len(),
                &mut stream(schedule.seed, &[tag::SHUFFLE, epoch]),
            );
            batches = residue_batches(&lengths, &order, schedule.batch_residues);
            batches.reverse();
            epoch += 1;
        }
        let batch = batches.pop().expect("non-empty batch list");
        let corrupted: Vec<Corrupted> = batch
            .iter()
            .map(|&i| {
                let mut rng = stream(schedule.seed, &[tag::CORRUPT, step, i as u64]);
                bert_corrupt(&corpus[i].tokens, schedule.select_rate, &mut rng)
            })
            .collect();
        let selected: usize = corrupted.iter().map(|c| c.targets.len()).sum();
        if selected == 0 {
            continue;
        }
        let norm = selected as f64;
        let results = crate::training::map_ordered(&corrupted, |k, c| {
            let mut rng = (config.dropout > 0.0)
                .then(|| stream(schedule.seed, &[tag::CORRUPT, step, batch[k] as u64, 1]));
            mlm_loss_and_grads(&params, config, c, norm, rng.as_mut())
        })?;
        let (loss, grads) = crate::training::reduce_grads(results);
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let lr = noam_lr(step, config.d_model, schedule.warmup, schedule.lr_factor);
        adam.step(&mut params, &grads, lr);
        losses.push(loss);
    }
    Ok(Pretrained { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LMConfig {
        LMConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: Some(32),
            dropout: 0.0,
        }
    }

    fn params(c: &LMConfig) -> ParamStore {
        let mut p = ParamStore::new();
        init_lm(&mut p, 9, c);
        // Larger read-out so the shift test compares non-trivial logits.
        p.get_mut("lm.head.w").unwrap().value = gaussian(1, "hw", c.d_model, VOCAB_SIZE, 1.0);
        p
    }

    #[test]
    fn all_mask_input_gives_normalized_rows() {
        let c = tiny();
        let out = mlm_forward(&SequenceState::fully_masked(7), &params(&c), &c).unwrap();
        assert_eq!(out.logits.shape(), (7, 24));
        let p = out.probabilities();
        for r in 0..7 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_token_reports_position() {
        let c = tiny();
        let err = mlm_forward(
            &SequenceState::fully_observed(vec![0, 3, 30]),
            &params(&c),
            &c,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::TokenOutOfRange {
                position: 2,
                token: 30
            }
        ));
    }

    #[test]
    fn leading_padding_shifts_positions_only() {
        let c = tiny();
        let p = params(&c);
        let seq: Vec<u8> = vec![0, 5, 9, 13, 2, 19, 7];
        let base = mlm_forward(&SequenceState::fully_observed(seq.clone()), &p, &c).unwrap();
        for k in 1..4 {
            let mut padded = vec![PAD; k];
            padded.extend(&seq);
            let out = mlm_forward(&SequenceState::fully_observed(padded), &p, &c).unwrap();
            for i in 0..seq.len() {
                for v in 0..VOCAB_SIZE {
                    assert!((out.logits.get(i + k, v) - base.logits.get(i, v)).abs() < 1e-5);
                }
            }
        }
    }

    fn ln(x: &[f64], g: &Matrix, b: &Matrix) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g.data[i] + b.data[i])
            .collect()
    }

    fn affine(x: &[f64], w: &Matrix, b: &Matrix) -> Vec<f64> {
        (0..w.cols)
            .map(|c| {
                b.data[c]
                    + x.iter()
                        .enumerate()
                        .map(|(k, v)| v * w.get(k, c))
                        .sum::<f64>()
            })
            .collect()
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    #[test]
    fn single_token_matches_straight_line_reference() {
        let c = tiny();
        let p = params(&c);
        let g = |n: &str| &p.get(n).unwrap().value;
        let token = 11u8;
        let out = mlm_forward(&SequenceState::fully_observed(vec![token]), &p, &c).unwrap();
        // A lone query attends only to itself, so attention is o(v(h)) and
        // rotation at position 0 is the identity.
        let mut h = g("lm.embed").row(token as usize).to_vec();
        for l in 0..c.n_layers {
            let pre = |s: &str| format!("lm.layers.{l}.{s}");
            let v = affine(&h, g(&pre("attn.v.w")), g(&pre("attn.v.b")));
            let a = affine(&v, g(&pre("attn.o.w")), g(&pre("attn.o.b")));
            let r: Vec<f64> = h.iter().zip(&a).map(|(x, y)| x + y).collect();
            h = ln(&r, g(&pre("ln1.g")), g(&pre("ln1.b")));
            let u: Vec<f64> = affine(&h, g(&pre("ffn.up.w")), g(&pre("ffn.up.b")))
                .into_iter()
                .map(gelu)
                .collect();
            let f = affine(&u, g(&pre("ffn.down.w")), g(&pre("ffn.down.b")));
            let r: Vec<f64> = h.iter().zip(&f).map(|(x, y)| x + y).collect();
            h = ln(&r, g(&pre("ln2.g")), g(&pre("ln2.b")));
        }
        let logits = affine(&h, g("lm.head.w"), g("lm.head.b"));
        for (a, b) in out.hidden.row(0).iter().zip(&h) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in out.logits.row(0).iter().zip(&logits) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn corruption_follows_schedule() {
        let mut rng = stream(0, &[]);
        let tokens: Vec<u8> = (0..100_000).map(|i| (i % 20) as u8).collect();
        let c = bert_corrupt(&tokens, 0.15, &mut rng);
        assert_eq!(c.targets.len(), 15_000);
        let masked = c
            .targets
            .iter()
            .filter(|&&(i, _)| c.input[i] == MASK)
            .count() as f64;
        let kept = c
            .targets
            .iter()
            .filter(|&&(i, t)| c.input[i] as usize == t)
            .count() as f64;
        let n = c.targets.len() as f64;
        assert!((masked / n - 0.8).abs() < 0.015);
        // Random replacement hits the original letter 1 time in 20.
        assert!((kept / n - (0.1 + 0.1 / 20.0)).abs() < 0.015);
        for (i, (&a, &b)) in tokens.iter().zip(&c.input).enumerate() {
            if a != b {
                assert!(c.targets.iter().any(|&(p, _)| p == i));
            }
        }
    }

    #[test]
    fn initial_loss_on_random_sequences_is_ln20() {
        let c = tiny();
        let p = params_default_head(&c);
        let mut rng = stream(4, &[]);
        let mut total = 0.0;
        let mut count = 0usize;
        for _ in 0..40 {
            let seq: Vec<u8> = (0..50).map(|_| rng.random_range(0..20) as u8).collect();
            let cr = bert_corrupt(&seq, 0.15, &mut rng);
            let (loss, _) = mlm_loss_and_grads(&p, &c, &cr, 1.0, None).unwrap();
            total += loss;
            count += cr.targets.len();
        }
        assert!((total / count as f64 - 20f64.ln()).abs() < 0.05);
    }

    fn params_default_head(c: &LMConfig) -> ParamStore {
        let mut p = ParamStore::new();
        init_lm(&mut p, 9, c);
        p
    }

    #[test]
    fn pretraining_is_deterministic_and_rejects_empty_corpus() {
        let c = tiny();
        let corpus: Vec<SequenceState> = (0..8)
            .map(|i| {
                SequenceState::fully_observed((0..12).map(|k| ((k * 3 + i) % 20) as u8).collect())
            })
            .collect();
        let sched = PretrainConfig {
            steps: 6,
            batch_residues: 30,
            warmup: 2,
            ..PretrainConfig::default()
        };
        let a = pretrain_lm(&corpus, &sched, &c).unwrap();
        let b = pretrain_lm(&corpus, &sched, &c).unwrap();
        assert_eq!(a.losses.len(), 6);
        assert!(a
            .losses
            .iter()
            .zip(&b.losses)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.params, b.params);
        assert!(pretrain_lm(&[], &sched, &c).is_err());
    }

    #[test]
    fn residue_batches_respect_budget() {
        let lengths = vec![10, 20, 5, 40, 8];
        let b = residue_batches(&lengths, &[0, 1, 2, 3, 4], 30);
        assert_eq!(b, vec![vec![0, 1], vec![2], vec![3], vec![4]]);
    }
}
