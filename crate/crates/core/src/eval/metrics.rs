use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::NUM_AMINO_ACIDS;
use crate::error::{Error, Result};

/// Fraction of positions where `pred` equals `native`.
pub fn recovery(pred: &[u8], native: &[u8]) -> Result<f64> {
    if pred.len() != native.len() {
        return Err(Error::LengthMismatch {
            sequence: pred.len(),
            structure: native.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("recovery of an empty sequence"));
    }
    let hits = pred.iter().zip(native).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Median; the lower middle element for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty set"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[(v.len() - 1) / 2])
}

pub fn median_recovery(recoveries: &[f64]) -> Result<f64> {
    median(recoveries)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean identity over all unordered pairs; `None` for fewer than two.
pub fn mean_pairwise_identity(seqs: &[Vec<u8>]) -> Result<Option<f64>> {
    if seqs.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..seqs.len() {
        for j in i + 1..seqs.len() {
            total += recovery(&seqs[i], &seqs[j])?;
            pairs += 1;
        }
    }
    Ok(Some(total / pairs as f64))
}

/// Number of distinct sequences divided by the number of sequences.
pub fn distinct_fraction(seqs: &[Vec<u8>]) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let set: HashSet<&Vec<u8>> = seqs.iter().collect();
    set.len() as f64 / seqs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntibodyMetrics {
    pub aar: f64,
    /// `None` when the contact mask is empty.
    pub caar: Option<f64>,
    pub longest_comm_subseq: usize,
    pub longest_cons_ratio: f64,
    pub aa_entropy: f64,
}

fn select(seq: &[u8], mask: &[bool]) -> Vec<u8> {
    seq.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&t, _)| t)
        .collect()
}

/// Length of the longest contiguous run of one letter.
pub fn longest_run(seq: &[u8]) -> usize {
    let mut best = 0;
    let mut cur = 0;
    for i in 0..seq.len() {
        cur = if i > 0 && seq[i] == seq[i - 1] {
            cur + 1
        } else {
            1
        };
        best = best.max(cur);
    }
    best
}

/// Entropy (natural log) of the letter frequencies of `seq`.
pub fn composition_entropy(seq: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    for &t in seq {
        counts[t as usize] += 1;
    }
    let n = seq.len() as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let f = c as f64 / n;
            f * f.ln()
        })
        .sum::<f64>()
}

/// Longest length `k` such that some length-`k` substring occurs in at least
/// `min_count` of `seqs`.
pub fn longest_shared_substring(seqs: &[Vec<u8>], min_count: usize) -> usize {
    let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    let mut best = 0;
    // A shared substring's prefixes are shared too, so lengths can be tried
    // in increasing order until one fails.
    for k in 1..=max_len {
        let mut counts: std::collections::HashMap<&[u8], usize> = std::collections::HashMap::new();
        for s in seqs {
            let uniq: HashSet<&[u8]> = s.windows(k).collect();
            for w in uniq {
                *counts.entry(w).or_default() += 1;
            }
        }
        if counts.values().any(|&c| c >= min_count) {
            best = k;
        } else {
            break;
        }
    }
    best
}

/// Metrics over `designs` of one protein, restricted to the designed region.
pub fn antibody_metrics(
    designs: &[Vec<u8>],
    native: &[u8],
    region: &[bool],
    contact: &[bool],
) -> Result<AntibodyMetrics> {
    if designs.is_empty() {
        return Err(Error::invalid("antibody metrics need at least one design"));
    }
    let l = native.len();
    if region.len() != l || contact.len() != l {
        return Err(Error::invalid(format!(
            "mask lengths ({}, {}) differ from sequence length {l}",
            region.len(),
            contact.len()
        )));
    }
    if let Some(i) = (0..l).find(|&i| contact[i] && !region[i]) {
        return Err(Error::invalid(format!(
            "contact position {i} lies outside the region"
        )));
    }
    let region_len = region.iter().filter(|&&m| m).count();
    if region_len == 0 {
        return Err(Error::invalid("region mask is empty"));
    }
    let native_region = select(native, region);
    let native_contact = select(native, contact);
    let mut aar = 0.0;
    let mut caar = 0.0;
    let mut runs = 0.0;
    let mut entropy = 0.0;
    let mut regions = Vec::with_capacity(designs.len());
    for d in designs {
        if d.len() != l {
            return Err(Error::LengthMismatch {
                sequence: d.len(),
                structure: l,
            });
        }
        let r = select(d, region);
        aar += recovery(&r, &native_region)?;
        if !native_contact.is_empty() {
            caar += recovery(&select(d, contact), &native_contact)?;
        }
        runs += longest_run(&r) as f64 / region_len as f64;
        entropy += composition_entropy(&r);
        regions.push(r);
    }
    let n = designs.len() as f64;
    let min_count = (0.3 * n).ceil() as usize;
    Ok(AntibodyMetrics {
        aar: aar / n,
        caar: (!native_contact.is_empty()).then(|| caar / n),
        longest_comm_subseq: longest_shared_substring(&regions, min_count.max(1)),
        longest_cons_ratio: runs / n,
        aa_entropy: entropy / n,
    })
}

/// Upper bound of [`composition_entropy`] over amino acids.
pub fn max_aa_entropy() -> f64 {
    (NUM_AMINO_ACIDS as f64).ln()
}
