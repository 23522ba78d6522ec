use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::cmlm::{choose_positions, MaskedSequence};
use super::item_loss;
use crate::error::{Error, Result};
use crate::geometry::StructureInput;
use crate::model::ModelConfig;
use crate::nn::{Gradients, ParamStore, Tape};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: String,
    pub checked: usize,
    pub max_relative_error: f64,
    /// `tensor[index]` with the largest error.
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
    pub max_relative_error: f64,
}

/// Component a tensor belongs to; the proposal head is its own group.
fn group_of(name: &str) -> String {
    if name.starts_with("encoder.proposal.") {
        return "proposal".into();
    }
    name.split('.').next().unwrap_or(name).to_string()
}

/// Compares `analytic` against central differences of `loss` on at least
/// `per_group` scalars of every trainable group (every tensor contributes at
/// least one). Relative error is |a − n| / max(|a|, |n|, 1e-8).
pub fn gradcheck_fn(
    params: &ParamStore,
    analytic: &Gradients,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    epsilon: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {epsilon}"
        )));
    }
    let mut groups: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    let mut rng = stream(seed, &[tag::GRADCHECK]);
    for (name, p) in params.iter().filter(|(_, p)| p.trainable) {
        let n = p.value.len();
        let all = groups.entry(group_of(name)).or_default();
        all.push((name.clone(), rng.random_range(0..n)));
    }
    for (group, picks) in groups.iter_mut() {
        let pool: Vec<(String, usize)> = params
            .iter()
            .filter(|(n, p)| p.trainable && &group_of(n) == group)
            .flat_map(|(n, p)| (0..p.value.len()).map(move |i| (n.clone(), i)))
            .collect();
        let want = per_group.min(pool.len());
        for k in choose_positions(pool.len(), pool.len(), &mut rng) {
            if picks.len() >= want {
                break;
            }
            if !picks.contains(&pool[k]) {
                picks.push(pool[k].clone());
            }
        }
    }
    let mut report = GradcheckReport {
        groups: Vec::new(),
        max_relative_error: 0.0,
    };
    for (group, picks) in groups {
        let mut worst = (0.0f64, String::new());
        for (name, i) in &picks {
            let mut probe = params.clone();
            let base = probe.get(name).unwrap().value.data[*i];
            probe.get_mut(name).unwrap().value.data[*i] = base + epsilon;
            let up = loss(&probe)?;
            probe.get_mut(name).unwrap().value.data[*i] = base - epsilon;
            let down = loss(&probe)?;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.get(name).map_or(0.0, |g| g.data[*i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel >= worst.0 {
                worst = (rel, format!("{name}[{i}]"));
            }
        }
        report.max_relative_error = report.max_relative_error.max(worst.0);
        report.groups.push(GroupError {
            group,
            checked: picks.len(),
            max_relative_error: worst.0,
            worst: worst.1,
        });
    }
    Ok(report)
}

/// Gradient check of the full training loss (design plus proposal
/// cross-entropy) on one masked sample.
pub fn gradcheck(
    params: &ParamStore,
    model: &ModelConfig,
    input: &StructureInput,
    masked: &MaskedSequence,
    epsilon: f64,
    per_group: usize,
    seed: u64,
) -> Result<GradcheckReport> {
    let norm = masked.targets.len().max(1) as f64;
    let (_, _, grads) = item_loss(params, model, input, masked, norm, None)?;
    let loss = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = crate::model::forward_tape(&mut tape, p, model, input, &masked.tokens, None)?;
        let ld = tape.cross_entropy(
            v.design,
            masked.targets.clone(),
            crate::data::NUM_AMINO_ACIDS,
            norm,
        );
        let lp = tape.cross_entropy(
            v.proposal,
            masked.targets.clone(),
            crate::data::NUM_AMINO_ACIDS,
            norm,
        );
        Ok(tape.value(ld).data[0] + tape.value(lp).data[0])
    };
    gradcheck_fn(params, &grads, loss, epsilon, per_group, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    #[test]
    fn quadratic_probe() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::from_vec(1, 1, vec![3.0]));
        let mut g = Gradients::new();
        g.insert("w".into(), Matrix::from_vec(1, 1, vec![6.0]));
        let loss = |p: &ParamStore| Ok(p.get("w").unwrap().value.data[0].powi(2));
        let r = gradcheck_fn(&p, &g, loss, 1e-4, 32, 0).unwrap();
        assert!(r.max_relative_error < 1e-8);
        assert!(gradcheck_fn(&p, &g, loss, 0.0, 32, 0).is_err());
        // A wrong analytic gradient is caught.
        g.insert("w".into(), Matrix::from_vec(1, 1, vec![5.0]));
        assert!(
            gradcheck_fn(&p, &g, loss, 1e-4, 32, 0)
                .unwrap()
                .max_relative_error
                > 0.1
        );
    }
}
