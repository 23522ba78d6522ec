use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceState, MASK, NUM_AMINO_ACIDS, PAD};
use crate::error::{Error, Result};
use crate::nn::{Matrix, Tape};
use crate::rng::Rng;

/// Law of the per-sequence mask ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MaskRatio {
    /// r ~ uniform(0, 1].
    #[default]
    Uniform,
    Fixed(f64),
}

/// `count` distinct indices below `n` by a partial Fisher–Yates shuffle:
/// for i in 0..count, swap slot i with slot `i + rng.random_range(0..n - i)`.
pub fn choose_positions(n: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut slots: Vec<usize> = (0..n).collect();
    for i in 0..count.min(n) {
        let j = i + rng.random_range(0..n - i);
        slots.swap(i, j);
    }
    slots.truncate(count.min(n));
    slots
}

/// One masked training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub tokens: Vec<u8>,
    pub observed: Vec<bool>,
    /// (position, native amino acid) at every masked amino-acid position.
    pub targets: Vec<(usize, usize)>,
}

/// Draws r, masks `max(1, round(r · L))` positions chosen uniformly without
/// replacement and replaces them by MASK. The ratio draw is `1 - u` for
/// `u = rng.random::<f64>()`, followed by [`choose_positions`].
pub fn cmlm_mask(state: &SequenceState, law: MaskRatio, rng: &mut Rng) -> Result<MaskedSequence> {
    let l = state.len();
    if l == 0 {
        return Err(Error::invalid("cannot mask an empty sequence"));
    }
    if state.observed.iter().any(|&o| !o) {
        return Err(Error::invalid("masking expects a fully observed sequence"));
    }
    let r = match law {
        MaskRatio::Uniform => 1.0 - rng.random::<f64>(),
        MaskRatio::Fixed(r) => r,
    };
    let m = ((r * l as f64).round() as usize).clamp(1, l);
    let mut positions = choose_positions(l, m, rng);
    positions.sort_unstable();
    let mut tokens = state.tokens.clone();
    let mut observed = vec![true; l];
    let mut targets = Vec::with_capacity(m);
    for &i in &positions {
        if (tokens[i] as usize) < NUM_AMINO_ACIDS {
            targets.push((i, tokens[i] as usize));
        }
        tokens[i] = MASK;
        observed[i] = false;
    }
    Ok(MaskedSequence {
        tokens,
        observed,
        targets,
    })
}

/// Masked sequences padded to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    /// B × max_len, PAD beyond each length.
    pub tokens: Vec<Vec<u8>>,
    /// Padding counts as observed.
    pub observed: Vec<Vec<bool>>,
    pub targets: Vec<Vec<(usize, usize)>>,
    pub lengths: Vec<usize>,
}

impl MaskedBatch {
    pub fn new(entries: &[MaskedSequence]) -> Self {
        Self::with_width(
            entries,
            entries.iter().map(|e| e.tokens.len()).max().unwrap_or(0),
        )
    }

    /// Pads to `width` (at least the longest entry).
    pub fn with_width(entries: &[MaskedSequence], width: usize) -> Self {
        let width = width.max(entries.iter().map(|e| e.tokens.len()).max().unwrap_or(0));
        let mut batch = MaskedBatch {
            tokens: Vec::new(),
            observed: Vec::new(),
            targets: Vec::new(),
            lengths: Vec::new(),
        };
        for e in entries {
            let mut t = e.tokens.clone();
            t.resize(width, PAD);
            let mut o = e.observed.clone();
            o.resize(width, true);
            batch.tokens.push(t);
            batch.observed.push(o);
            batch.targets.push(e.targets.clone());
            batch.lengths.push(e.tokens.len());
        }
        batch
    }

    pub fn num_targets(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }
}

/// Loss value and its gradient with respect to each logits matrix.
#[derive(Debug, Clone)]
pub struct CmlmLoss {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

/// Mean cross-entropy over masked, non-padded positions; `logits[b]` is
/// width × 20 (or wider; extra columns are ignored).
pub fn cmlm_loss(logits: &[Matrix], batch: &MaskedBatch) -> Result<CmlmLoss> {
    if logits.len() != batch.tokens.len() {
        return Err(Error::invalid(format!(
            "{} logit matrices for a batch of {}",
            logits.len(),
            batch.tokens.len()
        )));
    }
    let n = batch.num_targets();
    if n == 0 {
        return Err(Error::invalid("batch has no masked positions"));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (lg, targets) in logits.iter().zip(&batch.targets) {
        if lg.cols < NUM_AMINO_ACIDS {
            return Err(Error::Shape {
                name: "design logits".into(),
                expected: (lg.rows, NUM_AMINO_ACIDS),
                actual: lg.shape(),
            });
        }
        let mut tape = Tape::new();
        let x = tape.watched(lg.clone());
        let loss = tape.cross_entropy(x, targets.clone(), NUM_AMINO_ACIDS, n as f64);
        value += tape.value(loss).data[0];
        let all = tape.backward_all(loss);
        grads.push(
            all.wrt(x)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(lg.rows, lg.cols)),
        );
    }
    Ok(CmlmLoss { value, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn st(s: &str) -> SequenceState {
        SequenceState::fully_observed(crate::data::Vocabulary::tokenize(s).0)
    }

    #[test]
    fn full_ratio_masks_everything() {
        let m = cmlm_mask(&st("ACDE"), MaskRatio::Fixed(1.0), &mut stream(0, &[])).unwrap();
        assert_eq!(m.tokens, vec![MASK; 4]);
        assert_eq!(m.targets, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn single_residue_always_masks_one() {
        for seed in 0..50 {
            let m = cmlm_mask(&st("W"), MaskRatio::Uniform, &mut stream(seed, &[])).unwrap();
            assert_eq!(m.observed, vec![false]);
        }
        let m = cmlm_mask(&st("W"), MaskRatio::Fixed(0.0), &mut stream(0, &[])).unwrap();
        assert_eq!(m.observed, vec![false]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(cmlm_mask(
            &SequenceState::fully_observed(vec![]),
            MaskRatio::Uniform,
            &mut stream(0, &[])
        )
        .is_err());
    }

    #[test]
    fn subset_replays_from_the_stream() {
        let seq = st("ACDEFGHIKL");
        let m = cmlm_mask(&seq, MaskRatio::Fixed(0.5), &mut stream(42, &[7])).unwrap();
        // Independent replay of the documented draw sequence.
        let mut rng = stream(42, &[7]);
        let mut slots: Vec<usize> = (0..10).collect();
        for i in 0..5 {
            let j = i + rng.random_range(0..10 - i);
            slots.swap(i, j);
        }
        let mut want: Vec<usize> = slots[..5].to_vec();
        want.sort();
        let got: Vec<usize> = (0..10).filter(|&i| !m.observed[i]).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn uniform_logits_give_ln20_and_observed_gradients_vanish() {
        let a = cmlm_mask(&st("ACDEFGHIK"), MaskRatio::Fixed(0.4), &mut stream(1, &[])).unwrap();
        let b = cmlm_mask(&st("MNPQ"), MaskRatio::Fixed(0.5), &mut stream(2, &[])).unwrap();
        let batch = MaskedBatch::new(&[a, b]);
        let logits = vec![Matrix::zeros(9, 20), Matrix::filled(9, 20, 3.5)];
        let out = cmlm_loss(&logits, &batch).unwrap();
        assert!((out.value - 20f64.ln()).abs() < 1e-12);
        for (bi, g) in out.grads.iter().enumerate() {
            for r in 0..9 {
                let masked = !batch.observed[bi][r];
                if !masked {
                    assert!(g.row(r).iter().all(|&v| v == 0.0), "row {r}");
                }
            }
        }
    }

    #[test]
    fn confident_correct_logits_drive_loss_to_zero() {
        let a = cmlm_mask(&st("ACD"), MaskRatio::Fixed(1.0), &mut stream(1, &[])).unwrap();
        let batch = MaskedBatch::new(&[a]);
        let mut lg = Matrix::zeros(3, 20);
        for r in 0..3 {
            lg.set(r, r, 1e3);
        }
        assert!(cmlm_loss(&[lg], &batch).unwrap().value < 1e-12);
    }

    #[test]
    fn padding_amount_does_not_change_loss() {
        let a = cmlm_mask(&st("ACDEFG"), MaskRatio::Fixed(0.5), &mut stream(3, &[])).unwrap();
        let lg = crate::nn::gaussian(0, "l", 6, 20, 2.0);
        let base = cmlm_loss(&[lg.clone()], &MaskedBatch::new(&[a.clone()]))
            .unwrap()
            .value;
        for width in [7, 12, 30] {
            let mut padded = Matrix::filled(width, 20, 9.0);
            for r in 0..6 {
                padded.row_mut(r).copy_from_slice(lg.row(r));
            }
            let out = cmlm_loss(&[padded], &MaskedBatch::with_width(&[a.clone()], width)).unwrap();
            assert_eq!(out.value.to_bits(), base.to_bits());
            for r in 6..width {
                assert!(out.grads[0].row(r).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn zero_targets_is_an_error() {
        let batch = MaskedBatch::new(&[MaskedSequence {
            tokens: vec![0],
            observed: vec![true],
            targets: vec![],
        }]);
        assert!(cmlm_loss(&[Matrix::zeros(1, 20)], &batch).is_err());
    }
}
