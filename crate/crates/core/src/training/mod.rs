//! Conditional masked language model training.

mod cmlm;
mod gradcheck;
mod optim;

pub use cmlm::{
    choose_positions, cmlm_loss, cmlm_mask, CmlmLoss, MaskRatio, MaskedBatch, MaskedSequence,
};
pub use gradcheck::{gradcheck, gradcheck_fn, GradcheckReport, GroupError};
pub use optim::{noam_lr, Adam, AdamConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BackboneStructure, SequenceState, NUM_AMINO_ACIDS};
use crate::decoding::{design_with, DecodingConfig};
use crate::error::{Error, Result};
use crate::eval::recovery;
use crate::geometry::{perturb, StructureInput};
use crate::lm::{residue_batches, shuffled};
use crate::model::{forward_tape, Designer, ModelConfig};
use crate::nn::{Gradients, Matrix, ParamStore, Tape};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    #[default]
    ScratchJoint,
    PretrainedEncoderFrozen,
    PretrainedEncoderFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LmMode {
    #[default]
    LmFrozen,
    LmFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainMode {
    pub encoder: EncoderMode,
    pub lm: LmMode,
}

impl TrainMode {
    pub const ALL_TRAINABLE: TrainMode = TrainMode {
        encoder: EncoderMode::ScratchJoint,
        lm: LmMode::LmFinetune,
    };
    pub const ADAPTER_ONLY: TrainMode = TrainMode {
        encoder: EncoderMode::PretrainedEncoderFrozen,
        lm: LmMode::LmFrozen,
    };

    /// Sets trainability flags. The adapter and the proposal head are always
    /// trainable.
    pub fn apply(&self, params: &mut ParamStore) {
        params.set_trainable("", true);
        if self.lm == LmMode::LmFrozen {
            params.set_trainable("lm.", false);
        }
        if self.encoder == EncoderMode::PretrainedEncoderFrozen {
            params.set_trainable("encoder.", false);
            params.set_trainable("encoder.proposal.", true);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder_mode: EncoderMode,
    pub lm_mode: LmMode,
    pub mask_ratio_law: MaskRatio,
    /// Target residues per optimizer step.
    pub batch_residues: usize,
    pub warmup: u64,
    pub lr_factor: f64,
    pub adam: AdamConfig,
    pub max_epochs: u64,
    /// Optional cap on optimizer steps.
    pub max_steps: Option<u64>,
    /// Standard deviation in Å of Gaussian noise added to every backbone atom.
    pub eps_noise: f64,
    /// Validation cadence in steps; 0 validates only after the last step.
    pub val_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder_mode: EncoderMode::ScratchJoint,
            lm_mode: LmMode::LmFrozen,
            mask_ratio_law: MaskRatio::Uniform,
            batch_residues: 6000,
            warmup: 200,
            lr_factor: 1.0,
            adam: AdamConfig::default(),
            max_epochs: 100,
            max_steps: None,
            eps_noise: 0.0,
            val_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn mode(&self) -> TrainMode {
        TrainMode {
            encoder: self.encoder_mode,
            lm: self.lm_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 {
            return Err(Error::Config("warmup must be at least 1".into()));
        }
        if self.batch_residues == 0 {
            return Err(Error::Config("batch_residues must be positive".into()));
        }
        if !(self.eps_noise >= 0.0) {
            return Err(Error::Config("eps_noise must be non-negative".into()));
        }
        if let MaskRatio::Fixed(r) = self.mask_ratio_law {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!(
                    "fixed mask ratio {r} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub design_loss: f64,
    pub proposal_loss: f64,
    pub lr: f64,
    pub val_recovery: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub log: Vec<StepMetrics>,
    pub steps: u64,
}

/// Maps `f` over `items` on the rayon pool, keeping input order.
pub fn map_ordered<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(usize, &T) -> Result<R> + Sync + Send,
) -> Result<Vec<R>> {
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Sums losses and gradients in item order, so the result does not depend
/// on how items were scheduled.
pub fn reduce_grads(results: Vec<(f64, Gradients)>) -> (f64, Gradients) {
    let mut loss = 0.0;
    let mut total = Gradients::new();
    for (l, g) in results {
        loss += l;
        for (name, m) in g {
            match total.get_mut(&name) {
                Some(acc) => acc.add_assign(&m),
                None => {
                    total.insert(name, m);
                }
            }
        }
    }
    (loss, total)
}

/// Design and proposal cross-entropy sums (each divided by `norm`) and their
/// parameter gradients for one masked sequence.
pub fn item_loss(
    params: &ParamStore,
    model: &ModelConfig,
    input: &StructureInput,
    masked: &MaskedSequence,
    norm: f64,
    rng: Option<&mut crate::rng::Rng>,
) -> Result<(f64, f64, Gradients)> {
    let mut tape = Tape::new();
    let v = forward_tape(&mut tape, params, model, input, &masked.tokens, rng)?;
    let ld = tape.cross_entropy(v.design, masked.targets.clone(), NUM_AMINO_ACIDS, norm);
    let lp = tape.cross_entropy(v.proposal, masked.targets.clone(), NUM_AMINO_ACIDS, norm);
    let total = tape.add(ld, lp);
    Ok((
        tape.value(ld).data[0],
        tape.value(lp).data[0],
        tape.backward(total),
    ))
}

/// Adds zero buffers for every parameter without a gradient.
pub fn complete_buffers(params: &ParamStore, grads: &mut Gradients) {
    for (name, p) in params.iter() {
        grads
            .entry(name.clone())
            .or_insert_with(|| Matrix::zeros(p.value.rows, p.value.cols));
    }
}

/// Losses and full gradient buffers for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub design_loss: f64,
    pub proposal_loss: f64,
    pub grads: Gradients,
}

pub fn batch_gradients(
    params: &ParamStore,
    model: &ModelConfig,
    items: &[(StructureInput, MaskedSequence)],
    dropout_seed: Option<(u64, u64)>,
) -> Result<BatchGradients> {
    let n: usize = items.iter().map(|(_, m)| m.targets.len()).sum();
    if n == 0 {
        return Err(Error::invalid("batch has no masked amino-acid positions"));
    }
    let per_item = map_ordered(items, |k, (input, masked)| {
        let mut rng =
            dropout_seed.map(|(seed, step)| stream(seed, &[tag::MASK, step, k as u64, 1]));
        item_loss(params, model, input, masked, n as f64, rng.as_mut())
    })?;
    let mut design_loss = 0.0;
    let mut proposal_loss = 0.0;
    let mut parts = Vec::with_capacity(per_item.len());
    for (d, p, g) in per_item {
        design_loss += d;
        proposal_loss += p;
        parts.push((0.0, g));
    }
    let (_, mut grads) = reduce_grads(parts);
    complete_buffers(params, &mut grads);
    Ok(BatchGradients {
        design_loss,
        proposal_loss,
        grads,
    })
}

/// Mean one-shot (T = 1, proposal init, argmax) recovery.
pub fn quick_recovery(
    params: &ParamStore,
    model: &ModelConfig,
    data: &[(StructureInput, Vec<u8>)],
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let cfg = DecodingConfig {
        t: 1,
        ..DecodingConfig::default()
    };
    let recs = map_ordered(data, |_, (input, native)| {
        let d = Designer::new(params, model, input)?;
        let r = design_with(&d, &cfg, &mut stream(0, &[]))?;
        recovery(&r.sequence, native)
    })?;
    Ok(recs.iter().sum::<f64>() / recs.len() as f64)
}

fn prepare(
    data: &[(BackboneStructure, SequenceState)],
    model: &ModelConfig,
) -> Result<Vec<StructureInput>> {
    map_ordered(data, |_, (s, seq)| {
        if seq.len() != s.len() {
            return Err(Error::LengthMismatch {
                sequence: seq.len(),
                structure: s.len(),
            });
        }
        StructureInput::build(s, &model.graph)
    })
}

pub fn train(
    data: &[(BackboneStructure, SequenceState)],
    val: &[(BackboneStructure, SequenceState)],
    params: ParamStore,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(data, val, params, model, config, &mut |_| {})
}

/// [`train`] with a callback after every optimizer step.
pub fn train_with(
    data: &[(BackboneStructure, SequenceState)],
    val: &[(BackboneStructure, SequenceState)],
    mut params: ParamStore,
    model: &ModelConfig,
    config: &TrainConfig,
    on_step: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let lengths: Vec<usize> = data.iter().map(|(s, _)| s.len()).collect();
    let longest = lengths.iter().copied().max().unwrap_or(0);
    if config.batch_residues < longest {
        return Err(Error::Config(format!(
            "batch_residues ({}) is smaller than the longest protein ({longest})",
            config.batch_residues
        )));
    }
    config.mode().apply(&mut params);
    let cached = if config.eps_noise == 0.0 {
        Some(prepare(data, model)?)
    } else {
        None
    };
    let val_inputs: Vec<(StructureInput, Vec<u8>)> = prepare(val, model)?
        .into_iter()
        .zip(val)
        .map(|(i, (_, s))| (i, s.tokens.clone()))
        .collect();
    let dropout = model.encoder.dropout > 0.0 || model.lm.dropout > 0.0;

    let mut adam = Adam::new(config.adam);
    let mut log = Vec::new();
    let mut step = 0u64;
    let max_steps = config.max_steps.unwrap_or(u64::MAX);
    'epochs: for epoch in 0..config.max_epochs {
        let order = shuffled(data.len(), &mut stream(config.seed, &[tag::SHUFFLE, epoch]));
        for batch in residue_batches(&lengths, &order, config.batch_residues) {
            if step >= max_steps {
                break 'epochs;
            }
            step += 1;
            let items = map_ordered(&batch, |_, &i| {
                let input = match &cached {
                    Some(c) => c[i].clone(),
                    None => {
                        let noisy = perturb(
                            &data[i].0,
                            config.eps_noise,
                            stream_seed(config.seed, step, i),
                        );
                        StructureInput::build(&noisy, &model.graph)?
                    }
                };
                let mut rng = stream(config.seed, &[tag::MASK, step, i as u64]);
                let masked = cmlm_mask(&data[i].1, config.mask_ratio_law, &mut rng)?;
                Ok((input, masked))
            })?;
            let items: Vec<_> = items
                .into_iter()
                .filter(|(_, m)| !m.targets.is_empty())
                .collect();
            if items.is_empty() {
                continue;
            }
            let bg = batch_gradients(
                &params,
                model,
                &items,
                dropout.then_some((config.seed, step)),
            )?;
            let loss = bg.design_loss + bg.proposal_loss;
            if !loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            let lr = noam_lr(step, model.lm.d_model, config.warmup, config.lr_factor);
            adam.step(&mut params, &bg.grads, lr);
            let last = step == max_steps;
            let val_recovery = if !val_inputs.is_empty()
                && ((config.val_every > 0 && step % config.val_every == 0) || last)
            {
                Some(quick_recovery(&params, model, &val_inputs)?)
            } else {
                None
            };
            let m = StepMetrics {
                step,
                epoch,
                loss,
                design_loss: bg.design_loss,
                proposal_loss: bg.proposal_loss,
                lr,
                val_recovery,
            };
            on_step(&m);
            log.push(m);
        }
    }
    if let Some(last) = log.last_mut() {
        if last.val_recovery.is_none() && !val_inputs.is_empty() {
            last.val_recovery = Some(quick_recovery(&params, model, &val_inputs)?);
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        steps: step,
    })
}

/// Seed for the perturbation stream of item `i` at `step`.
fn stream_seed(seed: u64, step: u64, i: usize) -> u64 {
    crate::rng::stream_id(&[seed, tag::PERTURB, step, i as u64])
}
