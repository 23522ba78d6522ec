//! Recovery, perplexity, context dissection, antibody metrics and diversity.

mod context;
mod metrics;

pub use context::{
    contact_mask, dissect_recovery, label_contexts, secondary_of, Burial, ClassCount, ContextLabel,
    ContextRecovery, Secondary, BURIAL_RADIUS, CORE_MIN_NEIGHBORS, INTERFACE_RADIUS,
};
pub use metrics::{
    antibody_metrics, composition_entropy, distinct_fraction, longest_run,
    longest_shared_substring, max_aa_entropy, mean, mean_pairwise_identity, median,
    median_recovery, recovery, AntibodyMetrics,
};

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{BackboneStructure, Vocabulary, MASK, NUM_AMINO_ACIDS};
use crate::decoding::{batch_design, batch_design_samples, DecodingConfig, Execution};
use crate::error::{Error, Result};
use crate::geometry::StructureInput;
use crate::model::{Designer, ModelConfig};
use crate::nn::{log_sum_exp, Matrix, ParamStore};
use crate::training::map_ordered;

/// Summed negative log-likelihood of `native` under rows of `logits`, over
/// amino-acid positions only, and the number of such positions.
pub fn nll_from_logits(logits: &Matrix, native: &[u8]) -> (f64, usize) {
    let mut total = 0.0;
    let mut count = 0;
    for (i, &tok) in native.iter().enumerate() {
        if !Vocabulary::is_amino_acid(tok) {
            continue;
        }
        let row = &logits.row(i)[..NUM_AMINO_ACIDS];
        total += log_sum_exp(row) - row[tok as usize];
        count += 1;
    }
    (total, count)
}

pub fn perplexity_from_logits(logits: &[Matrix], natives: &[Vec<u8>]) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for (l, n) in logits.iter().zip(natives) {
        let (t, c) = nll_from_logits(l, n);
        total += t;
        count += c;
    }
    if count == 0 {
        return Err(Error::invalid(
            "perplexity needs at least one native residue",
        ));
    }
    Ok((total / count as f64).exp())
}

/// Perplexity of native sequences given structure, from one fully masked
/// pass per protein.
pub fn perplexity(
    params: &ParamStore,
    model: &ModelConfig,
    structures: &[BackboneStructure],
) -> Result<f64> {
    let natives = natives_of(structures)?;
    let logits = map_ordered(structures, |_, s| {
        let input = StructureInput::build(s, &model.graph)?;
        let d = Designer::new(params, model, &input)?;
        d.design_logits(&vec![MASK; s.len()])
    })?;
    perplexity_from_logits(&logits, &natives)
}

fn natives_of(structures: &[BackboneStructure]) -> Result<Vec<Vec<u8>>> {
    structures
        .iter()
        .map(|s| {
            s.native.clone().ok_or_else(|| {
                Error::invalid(format!("structure `{}` has no native sequence", s.id))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityRow {
    pub tau: f64,
    pub mean_recovery: f64,
    pub distinct_fraction: f64,
    /// `None` with fewer than two samples.
    pub mean_pairwise_identity: Option<f64>,
}

/// Samples `config.n_samples` designs per structure at each temperature.
pub fn diversity_sweep(
    structures: &[BackboneStructure],
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
    taus: &[f64],
    execution: Execution,
) -> Result<Vec<DiversityRow>> {
    let natives = natives_of(structures)?;
    taus.iter()
        .map(|&tau| {
            let cfg = DecodingConfig {
                tau,
                ..config.clone()
            };
            let results = batch_design_samples(structures, params, model, &cfg, execution);
            let (mut recs, mut distinct, mut ident) = (Vec::new(), Vec::new(), Vec::new());
            for (res, native) in results.into_iter().zip(&natives) {
                let seqs: Vec<Vec<u8>> = res?.into_iter().map(|r| r.sequence).collect();
                for s in &seqs {
                    recs.push(recovery(s, native)?);
                }
                distinct.push(distinct_fraction(&seqs));
                if let Some(x) = mean_pairwise_identity(&seqs)? {
                    ident.push(x);
                }
            }
            Ok(DiversityRow {
                tau,
                mean_recovery: mean(&recs),
                distinct_fraction: mean(&distinct),
                mean_pairwise_identity: (!ident.is_empty()).then(|| mean(&ident)),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_structures: usize,
    pub n_failed: usize,
    pub median_recovery: f64,
    pub mean_recovery: f64,
    pub perplexity: f64,
    pub contexts: ContextRecovery,
    /// Per-structure (id, recovery), in input order; failures omitted.
    pub per_structure: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<18}{:>10}", "metric", "value").unwrap();
        writeln!(s, "{:<18}{:>10}", "structures", self.n_structures).unwrap();
        writeln!(s, "{:<18}{:>10}", "failed", self.n_failed).unwrap();
        writeln!(s, "{:<18}{:>10.4}", "median recovery", self.median_recovery).unwrap();
        writeln!(s, "{:<18}{:>10.4}", "mean recovery", self.mean_recovery).unwrap();
        writeln!(s, "{:<18}{:>10.4}", "perplexity", self.perplexity).unwrap();
        for (name, rate, n) in self.contexts.rows() {
            let v = rate.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
            writeln!(s, "{:<18}{:>10}  (n={n})", format!("recovery/{name}"), v).unwrap();
        }
        s
    }
}

/// Designs every structure once and reports recovery, perplexity and
/// context-dissected recovery. Structures that fail to design are counted
/// in `n_failed`; if all fail the first error is returned.
pub fn evaluate(
    structures: &[BackboneStructure],
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
    execution: Execution,
) -> Result<EvalReport> {
    let natives = natives_of(structures)?;
    let results = batch_design(structures, params, model, config, execution);
    let mut designs = Vec::new();
    let mut kept_natives = Vec::new();
    let mut labels = Vec::new();
    let mut kept = Vec::new();
    let mut per_structure = Vec::new();
    let mut first_err = None;
    for ((res, s), native) in results.into_iter().zip(structures).zip(&natives) {
        match res {
            Ok(r) => {
                per_structure.push((s.id.clone(), recovery(&r.sequence, native)?));
                designs.push(r.sequence);
                kept_natives.push(native.clone());
                labels.push(label_contexts(s));
                kept.push(s.clone());
            }
            Err(e) => {
                log::warn!("design failed for `{}`: {e}", s.id);
                first_err.get_or_insert(e);
            }
        }
    }
    if designs.is_empty() {
        return Err(first_err.unwrap_or_else(|| Error::invalid("no structures to evaluate")));
    }
    let recs: Vec<f64> = per_structure.iter().map(|(_, r)| *r).collect();
    Ok(EvalReport {
        n_structures: structures.len(),
        n_failed: structures.len() - designs.len(),
        median_recovery: median(&recs)?,
        mean_recovery: mean(&recs),
        perplexity: perplexity(params, model, &kept)?,
        contexts: dissect_recovery(&designs, &kept_natives, &labels)?,
        per_structure,
    })
}
