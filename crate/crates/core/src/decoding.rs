//! Iterative-refinement sequence design.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BackboneStructure, SequenceState, MASK, NUM_AMINO_ACIDS};
use crate::error::{Error, Result};
use crate::geometry::StructureInput;
use crate::model::{Designer, ModelConfig};
use crate::nn::{argmax, log_sum_exp, softmax_in_place, Matrix, ParamStore};
use crate::rng::{name_hash, stream, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Proposal,
    FullMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Remask {
    /// Feed the previous sequence fully observed and re-predict everything.
    #[default]
    None,
    /// Re-mask this fraction of lowest-confidence positions each step and
    /// re-predict only those.
    Confidence(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodingConfig {
    /// Maximum refinement steps.
    #[serde(rename = "T")]
    pub t: usize,
    pub tau: f64,
    pub init: InitMode,
    pub strategy: Strategy,
    pub remask: Remask,
    pub fuse_encoder_logits: bool,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            t: 5,
            tau: 1.0,
            init: InitMode::Proposal,
            strategy: Strategy::Argmax,
            remask: Remask::None,
            fuse_encoder_logits: false,
            n_samples: 1,
            seed: 0,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.strategy == Strategy::Sample && !(self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be positive for sampling, got {}",
                self.tau
            )));
        }
        if let Remask::Confidence(f) = self.remask {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "confidence fraction {f} outside (0, 1)"
                )));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if self.n_samples > 1 && self.strategy != Strategy::Sample {
            return Err(Error::Config(
                "n_samples > 1 requires the sample strategy".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub sequence: Vec<u8>,
    /// Log-probability of each designed residue under the final logits.
    pub logprobs: Vec<f64>,
    /// S^(0), ..., S^(steps_used).
    pub trajectory: Vec<Vec<u8>>,
    pub steps_used: usize,
    pub converged: bool,
}

/// Row-wise softmax(logits / tau).
pub fn temperature_scale(logits: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}; use the argmax strategy instead"
        )));
    }
    let mut p = logits.clone();
    p.scale_in_place(1.0 / tau);
    for r in 0..p.rows {
        softmax_in_place(p.row_mut(r), None);
    }
    Ok(p)
}

/// Index of the first CDF entry exceeding a uniform draw.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last
}

fn row_softmax(row: &[f64]) -> Vec<f64> {
    let mut p = row[..NUM_AMINO_ACIDS].to_vec();
    softmax_in_place(&mut p, None);
    p
}

/// Picks a token per position from `logits`; returns tokens and their
/// untempered probabilities.
fn emit(
    logits: &Matrix,
    positions: &[usize],
    config: &DecodingConfig,
    rng: &mut Rng,
    tokens: &mut [u8],
    confidence: &mut [f64],
) -> Result<()> {
    let scaled = match config.strategy {
        Strategy::Sample => Some(temperature_scale(&first_20(logits), config.tau)?),
        Strategy::Argmax => None,
    };
    for &i in positions {
        let row = &logits.row(i)[..NUM_AMINO_ACIDS];
        let k = match &scaled {
            Some(p) => sample_categorical(p.row(i), rng),
            None => argmax(row),
        };
        tokens[i] = k as u8;
        confidence[i] = row_softmax(row)[k];
    }
    Ok(())
}

fn first_20(m: &Matrix) -> Matrix {
    if m.cols == NUM_AMINO_ACIDS {
        return m.clone();
    }
    let mut out = Matrix::zeros(m.rows, NUM_AMINO_ACIDS);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[..NUM_AMINO_ACIDS]);
    }
    out
}

fn initial(
    designer: &Designer,
    config: &DecodingConfig,
    rng: &mut Rng,
) -> Result<(SequenceState, Vec<f64>)> {
    let l = designer.len();
    match config.init {
        InitMode::FullMask => Ok((SequenceState::fully_masked(l), vec![0.0; l])),
        InitMode::Proposal => {
            let mut tokens = vec![MASK; l];
            let mut conf = vec![0.0; l];
            let all: Vec<usize> = (0..l).collect();
            emit(
                &designer.proposal,
                &all,
                config,
                rng,
                &mut tokens,
                &mut conf,
            )?;
            Ok((SequenceState::fully_observed(tokens), conf))
        }
    }
}

/// Stream for sample `sample` of the structure identified by `key`.
pub fn design_rng(config: &DecodingConfig, key: u64, sample: u64) -> Rng {
    stream(config.seed, &[tag::DECODE, key, sample])
}

/// Per-structure key used to derive decoding streams.
pub fn structure_key(structure: &BackboneStructure) -> u64 {
    name_hash(&structure.id)
}

/// S^(0) for a structure.
pub fn init_sequence(
    structure: &BackboneStructure,
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
) -> Result<SequenceState> {
    config.validate()?;
    let input = StructureInput::build(structure, &model.graph)?;
    let designer = Designer::new(params, model, &input)?;
    let mut rng = design_rng(config, structure_key(structure), 0);
    Ok(initial(&designer, config, &mut rng)?.0)
}

/// Iterative refinement with an existing encoder pass.
pub fn design_with(
    designer: &Designer,
    config: &DecodingConfig,
    rng: &mut Rng,
) -> Result<DesignResult> {
    config.validate()?;
    let l = designer.len();
    let (state, mut confidence) = initial(designer, config, rng)?;
    let mut current = state.tokens;
    let mut trajectory = vec![current.clone()];
    let mut converged = false;
    let mut steps_used = 0;
    let mut last_logits = None;
    for t in 1..=config.t {
        let (input, positions) = match config.remask {
            Remask::None => (current.clone(), (0..l).collect::<Vec<_>>()),
            Remask::Confidence(f) => {
                let already: Vec<usize> = (0..l).filter(|&i| current[i] == MASK).collect();
                let positions = if !already.is_empty() {
                    already
                } else {
                    let n = ((f * l as f64).round() as usize).clamp(1, l);
                    let mut order: Vec<usize> = (0..l).collect();
                    order.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then(a.cmp(&b)));
                    let mut p = order[..n].to_vec();
                    p.sort_unstable();
                    p
                };
                let mut input = current.clone();
                for &i in &positions {
                    input[i] = MASK;
                }
                (input, positions)
            }
        };
        let mut logits = designer.design_logits(&input)?;
        if config.fuse_encoder_logits {
            logits.add_assign(&designer.proposal);
        }
        let mut next = current.clone();
        emit(&logits, &positions, config, rng, &mut next, &mut confidence)?;
        last_logits = Some(logits);
        steps_used = t;
        let fixed = next == current;
        trajectory.push(next.clone());
        current = next;
        if config.strategy == Strategy::Argmax && fixed {
            converged = true;
            break;
        }
    }
    let logits = last_logits.expect("at least one refinement step");
    let logprobs = current
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            let row = &logits.row(i)[..NUM_AMINO_ACIDS];
            row[tok as usize] - log_sum_exp(row)
        })
        .collect();
    Ok(DesignResult {
        sequence: current,
        logprobs,
        trajectory,
        steps_used,
        converged,
    })
}

/// Designs `config.n_samples` sequences for one structure.
pub fn design_samples(
    structure: &BackboneStructure,
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
) -> Result<Vec<DesignResult>> {
    config.validate()?;
    let input = StructureInput::build(structure, &model.graph)?;
    let designer = Designer::new(params, model, &input)?;
    let key = structure_key(structure);
    (0..config.n_samples as u64)
        .map(|s| design_with(&designer, config, &mut design_rng(config, key, s)))
        .collect()
}

pub fn design(
    structure: &BackboneStructure,
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
) -> Result<DesignResult> {
    let single = DecodingConfig {
        n_samples: 1,
        ..config.clone()
    };
    Ok(design_samples(structure, params, model, &single)?.remove(0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

/// [`design_samples`] over many structures, in input order. Streams depend on
/// each structure's id, so results do not depend on batch order or on the
/// execution mode. A failing item does not abort the others.
pub fn batch_design_samples(
    structures: &[BackboneStructure],
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
    execution: Execution,
) -> Vec<Result<Vec<DesignResult>>> {
    let run = |s: &BackboneStructure| design_samples(s, params, model, config);
    match execution {
        Execution::Serial => structures.iter().map(run).collect(),
        Execution::Parallel => structures.par_iter().map(run).collect(),
    }
}

/// One design per structure.
pub fn batch_design(
    structures: &[BackboneStructure],
    params: &ParamStore,
    model: &ModelConfig,
    config: &DecodingConfig,
    execution: Execution,
) -> Vec<Result<DesignResult>> {
    let single = DecodingConfig {
        n_samples: 1,
        ..config.clone()
    };
    batch_design_samples(structures, params, model, &single, execution)
        .into_iter()
        .map(|r| r.map(|mut v| v.remove(0)))
        .collect()
}
