use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, MASK};
use crate::error::{Error, Result};
use crate::geometry::linalg::dist;

pub type Vec3 = [f64; 3];

/// Consecutive CA atoms closer than this (Å) are treated as a gap.
const MIN_BONDED_CA: f64 = 1.0;
/// Consecutive CA atoms farther apart than this (Å) are treated as a gap.
const MAX_BONDED_CA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidueAtoms {
    pub n: Vec3,
    pub ca: Vec3,
    pub c: Vec3,
    pub o: Option<Vec3>,
}

impl ResidueAtoms {
    pub fn atoms(&self) -> impl Iterator<Item = &Vec3> {
        [&self.n, &self.ca, &self.c]
            .into_iter()
            .chain(self.o.as_ref())
    }

    pub fn atoms_mut(&mut self) -> impl Iterator<Item = &mut Vec3> {
        [&mut self.n, &mut self.ca, &mut self.c]
            .into_iter()
            .chain(self.o.as_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub id: String,
    pub residues: Vec<ResidueAtoms>,
}

/// A protein backbone: one or more chains of N/CA/C(/O) atoms, with the
/// native sequence when it is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneStructure {
    pub id: String,
    pub chains: Vec<Chain>,
    pub native: Option<Vec<u8>>,
}

impl BackboneStructure {
    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.residues.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn residues(&self) -> impl Iterator<Item = &ResidueAtoms> {
        self.chains.iter().flat_map(|c| c.residues.iter())
    }

    pub fn residues_mut(&mut self) -> impl Iterator<Item = &mut ResidueAtoms> {
        self.chains.iter_mut().flat_map(|c| c.residues.iter_mut())
    }

    pub fn ca_coords(&self) -> Vec<Vec3> {
        self.residues().map(|r| r.ca).collect()
    }

    /// Chain index of every residue.
    pub fn chain_index(&self) -> Vec<usize> {
        self.chains
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| std::iter::repeat_n(ci, c.residues.len()))
            .collect()
    }

    /// `breaks[i]` is true when residue `i` and `i + 1` are not bonded: they
    /// sit on different chains, or their CA–CA distance is outside (1, 5) Å.
    /// The last entry is always true.
    pub fn chain_breaks(&self) -> Vec<bool> {
        let chain = self.chain_index();
        let ca = self.ca_coords();
        (0..ca.len())
            .map(|i| {
                if i + 1 == ca.len() || chain[i] != chain[i + 1] {
                    return true;
                }
                let d = dist(&ca[i], &ca[i + 1]);
                !(d > MIN_BONDED_CA && d < MAX_BONDED_CA)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains.is_empty() {
            return Err(Error::InvalidStructure(format!("{}: no chains", self.id)));
        }
        for chain in &self.chains {
            if chain.residues.is_empty() {
                return Err(Error::InvalidStructure(format!(
                    "{}: chain `{}` has no residues",
                    self.id, chain.id
                )));
            }
        }
        for (i, r) in self.residues().enumerate() {
            if r.atoms().flatten().any(|x| !x.is_finite()) {
                return Err(Error::InvalidStructure(format!(
                    "{}: non-finite coordinate at residue {i}",
                    self.id
                )));
            }
        }
        if let Some(native) = &self.native {
            if native.len() != self.len() {
                return Err(Error::LengthMismatch {
                    sequence: native.len(),
                    structure: self.len(),
                });
            }
        }
        Ok(())
    }

    pub fn native_string(&self) -> Option<String> {
        self.native.as_deref().map(Vocabulary::detokenize)
    }
}

/// Token input to the sequence model: `observed[i] == false` marks a masked
/// position, whose token is always `MASK`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceState {
    pub tokens: Vec<u8>,
    pub observed: Vec<bool>,
}

impl SequenceState {
    pub fn fully_observed(tokens: Vec<u8>) -> Self {
        let observed = tokens.iter().map(|&t| t != MASK).collect();
        SequenceState { tokens, observed }
    }

    pub fn fully_masked(len: usize) -> Self {
        SequenceState {
            tokens: vec![MASK; len],
            observed: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Masks the given positions in place.
    pub fn mask_positions(&mut self, positions: &[usize]) {
        for &p in positions {
            self.tokens[p] = MASK;
            self.observed[p] = false;
        }
    }

    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.observed[i]).collect()
    }

    pub fn is_consistent(&self) -> bool {
        self.tokens.len() == self.observed.len()
            && self
                .tokens
                .iter()
                .zip(&self.observed)
                .all(|(&t, &o)| (t == MASK) != o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residue(x: f64) -> ResidueAtoms {
        ResidueAtoms {
            n: [x - 1.0, 0.5, 0.0],
            ca: [x, 0.0, 0.0],
            c: [x + 1.0, 0.5, 0.0],
            o: None,
        }
    }

    #[test]
    fn breaks_between_chains_and_gaps() {
        let s = BackboneStructure {
            id: "t".into(),
            chains: vec![
                Chain {
                    id: "A".into(),
                    residues: vec![residue(0.0), residue(3.8), residue(20.0)],
                },
                Chain {
                    id: "B".into(),
                    residues: vec![residue(23.8)],
                },
            ],
            native: None,
        };
        assert_eq!(s.chain_breaks(), vec![false, true, true, true]);
        assert_eq!(s.chain_index(), vec![0, 0, 0, 1]);
    }

    #[test]
    fn rejects_bad_native_length() {
        let s = BackboneStructure {
            id: "t".into(),
            chains: vec![Chain {
                id: "A".into(),
                residues: vec![residue(0.0)],
            }],
            native: Some(vec![0, 1]),
        };
        assert!(matches!(s.validate(), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn masking_keeps_invariant() {
        let mut s = SequenceState::fully_observed(vec![0, 1, 2, 3]);
        s.mask_positions(&[1, 3]);
        assert!(s.is_consistent());
        assert_eq!(s.masked_positions(), vec![1, 3]);
        assert!(SequenceState::fully_masked(3).is_consistent());
    }
}
