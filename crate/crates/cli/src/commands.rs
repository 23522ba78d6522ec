use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use seqdesign_core::checkpoint::{self, Checkpoint, Dtype, ModelSpec, RngState};
use seqdesign_core::data::{
    gen_synthetic_record, parse_dataset, write_dataset, BackboneStructure, SequenceState,
    Vocabulary,
};
use seqdesign_core::decoding::{batch_design_samples, Execution, Strategy};
use seqdesign_core::eval::{diversity_sweep, evaluate};
use seqdesign_core::geometry::StructureInput;
use seqdesign_core::lm::pretrain_lm;
use seqdesign_core::model::init_model;
use seqdesign_core::nn::ParamStore;
use seqdesign_core::rng::{stream, tag};
use seqdesign_core::training::{cmlm_mask, gradcheck, train_with, EncoderMode, MaskRatio};
use serde::Serialize;
use serde_json::json;

use crate::config::{optional, Precision, RunConfig};
use crate::error::{code, CliError, CliResult};

type Records = Vec<(BackboneStructure, SequenceState)>;

fn load_dataset(path: &Path, what: &str) -> CliResult<Records> {
    if !path.exists() {
        return Err(CliError::data(format!(
            "{what} dataset not found: {}",
            path.display()
        )));
    }
    let parsed = parse_dataset(path)?;
    if parsed.stats.unknown_residues > 0 {
        log::warn!(
            "{}: {} residue letters mapped to UNK",
            path.display(),
            parsed.stats.unknown_residues
        );
    }
    log::info!(
        "loaded {} records from {}",
        parsed.records.len(),
        path.display()
    );
    Ok(parsed.records)
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.join(checkpoint::MANIFEST).is_file() {
        return Err(CliError::new(
            code::CHECKPOINT,
            format!("checkpoint not found: {}", path.display()),
        ));
    }
    Ok(checkpoint::load_checkpoint(path)?)
}

fn save(cfg: &RunConfig, path: &Path, mut ckpt: Checkpoint) -> CliResult<()> {
    let dtype = match cfg.precision {
        Precision::F32 => {
            ckpt.params.quantize_f32();
            Dtype::F32
        }
        Precision::F64 => Dtype::F64,
    };
    checkpoint::save_checkpoint(path, &ckpt, dtype)?;
    log::info!("wrote checkpoint {}", path.display());
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<Box<dyn Write>>> {
    let sink: Box<dyn Write> = if path == Path::new("-") {
        Box::new(std::io::stdout())
    } else {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        Box::new(
            File::create(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
        )
    };
    Ok(BufWriter::new(sink))
}

fn write_line(out: &mut impl Write, value: &impl Serialize) -> CliResult<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::data(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn gen_data(cfg: &RunConfig) -> CliResult<()> {
    let g = &cfg.gen_data;
    let spec = g.spec(cfg.seed);
    spec.validate()?;
    let all: Vec<BackboneStructure> = (0..spec.n_samples as u64)
        .map(|i| gen_synthetic_record(&spec, i).structure)
        .collect();
    let splits = [
        (&cfg.paths.train, 0..g.n_train),
        (&cfg.paths.val, g.n_train..g.n_train + g.n_val),
        (&cfg.paths.test, g.n_train + g.n_val..spec.n_samples),
    ];
    for (path, range) in splits {
        let Some(path) = optional(path) else {
            continue;
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_dataset(path, &all[range.clone()])?;
        log::info!("wrote {} records to {}", range.len(), path.display());
    }
    Ok(())
}

pub fn pretrain(cfg: &RunConfig) -> CliResult<()> {
    let data = load_dataset(&cfg.paths.train, "training")?;
    let corpus: Vec<SequenceState> = data.into_iter().map(|(_, s)| s).collect();
    let out = pretrain_lm(&corpus, &cfg.pretrain, &cfg.model.lm)?;
    if let Some(path) = optional(&cfg.paths.metrics) {
        let mut w = create(path)?;
        for (i, loss) in out.losses.iter().enumerate() {
            write_line(&mut w, &json!({"step": i + 1, "loss": loss}))?;
        }
        w.flush()?;
    }
    if let Some(last) = out.losses.last() {
        log::info!(
            "pretraining finished after {} steps, loss {last:.4}",
            out.losses.len()
        );
    }
    let lm_path =
        optional(&cfg.paths.lm).ok_or_else(|| CliError::config("paths.lm is required"))?;
    save(
        cfg,
        lm_path,
        Checkpoint {
            model: ModelSpec::Lm(cfg.model.lm.clone()),
            params: out.params,
            step: cfg.pretrain.steps,
            rng: RngState {
                seed: cfg.pretrain.seed,
                counter: cfg.pretrain.steps + 1,
            },
        },
    )
}

/// Initial parameters for training: fresh, with the pretrained LM and, for
/// the pretrained-encoder modes, a previous model's encoder.
fn initial_params(cfg: &RunConfig) -> CliResult<ParamStore> {
    let mut params = init_model(&cfg.model, cfg.train.seed);
    match optional(&cfg.paths.lm) {
        Some(path) => {
            let lm = load_checkpoint(path)?;
            match &lm.model {
                ModelSpec::Lm(c) | ModelSpec::Full(seqdesign_core::ModelConfig { lm: c, .. })
                    if *c == cfg.model.lm => {}
                _ => {
                    return Err(CliError::config(format!(
                        "language model in {} does not match model.lm",
                        path.display()
                    )))
                }
            }
            params.merge(lm.params.subset("lm."));
        }
        None => log::warn!("paths.lm is empty; the language model starts from random weights"),
    }
    if cfg.train.encoder_mode != EncoderMode::ScratchJoint {
        let path = optional(&cfg.paths.encoder)
            .ok_or_else(|| CliError::config("pretrained encoder modes need paths.encoder"))?;
        let enc = load_checkpoint(path)?;
        let full = enc.full_config()?;
        if full.encoder != cfg.model.encoder || full.graph != cfg.model.graph {
            return Err(CliError::config(format!(
                "encoder in {} does not match model.encoder / model.graph",
                path.display()
            )));
        }
        params.merge(enc.params.subset("encoder."));
    }
    Ok(params)
}

pub fn train(cfg: &RunConfig) -> CliResult<()> {
    let data = load_dataset(&cfg.paths.train, "training")?;
    let val = match optional(&cfg.paths.val) {
        Some(p) if p.exists() => load_dataset(p, "validation")?,
        _ => Vec::new(),
    };
    let params = initial_params(cfg)?;
    let mut metrics = optional(&cfg.paths.metrics).map(create).transpose()?;
    let mut write_err = None;
    let out = train_with(&data, &val, params, &cfg.model, &cfg.train, &mut |m| {
        if m.step % 10 == 0 || m.val_recovery.is_some() {
            log::info!(
                "step {} epoch {} loss {:.4} lr {:.2e}{}",
                m.step,
                m.epoch,
                m.loss,
                m.lr,
                m.val_recovery
                    .map(|r| format!(" val_recovery {r:.4}"))
                    .unwrap_or_default()
            );
        }
        if let Some(w) = metrics.as_mut() {
            if let Err(e) = write_line(w, m).and_then(|_| w.flush().map_err(CliError::from)) {
                write_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let path = optional(&cfg.paths.checkpoint)
        .ok_or_else(|| CliError::config("paths.checkpoint is required"))?;
    save(
        cfg,
        path,
        Checkpoint {
            model: ModelSpec::Full(cfg.model.clone()),
            params: out.params,
            step: out.steps,
            rng: RngState {
                seed: cfg.train.seed,
                counter: out.steps + 1,
            },
        },
    )
}

fn full_model(cfg: &RunConfig) -> CliResult<Checkpoint> {
    let path = optional(&cfg.paths.checkpoint)
        .ok_or_else(|| CliError::config("paths.checkpoint is required"))?;
    let ckpt = load_checkpoint(path)?;
    ckpt.full_config()?;
    Ok(ckpt)
}

fn test_structures(cfg: &RunConfig) -> CliResult<Vec<BackboneStructure>> {
    Ok(load_dataset(&cfg.paths.test, "test")?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

pub fn design(cfg: &RunConfig, with_trajectory: bool) -> CliResult<()> {
    cfg.decoding.validate()?;
    let ckpt = full_model(cfg)?;
    let model = ckpt.full_config()?;
    let structures = test_structures(cfg)?;
    let results = batch_design_samples(
        &structures,
        &ckpt.params,
        model,
        &cfg.decoding,
        Execution::Parallel,
    );
    let mut out = create(&cfg.paths.designs)?;
    let mut failed = 0;
    for (s, res) in structures.iter().zip(results) {
        match res {
            Ok(samples) => {
                let many = samples.len() > 1;
                for (k, r) in samples.iter().enumerate() {
                    let mut rec = json!({
                        "id": s.id,
                        "sequence": Vocabulary::detokenize(&r.sequence),
                        "logprobs": r.logprobs,
                        "steps_used": r.steps_used,
                        "converged": r.converged,
                    });
                    if many {
                        rec["sample"] = json!(k);
                    }
                    if with_trajectory {
                        rec["trajectory"] = json!(r
                            .trajectory
                            .iter()
                            .map(|t| Vocabulary::detokenize(t))
                            .collect::<Vec<_>>());
                    }
                    write_line(&mut out, &rec)?;
                }
            }
            Err(e) => {
                failed += 1;
                log::error!("design failed for `{}`: {e}", s.id);
            }
        }
    }
    out.flush()?;
    log::info!(
        "designed {} of {} structures",
        structures.len() - failed,
        structures.len()
    );
    if failed > 0 {
        return Err(CliError::new(
            code::RUNTIME,
            format!(
                "{failed} of {} structures failed to design",
                structures.len()
            ),
        ));
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    cfg.decoding.validate()?;
    let ckpt = full_model(cfg)?;
    let structures = test_structures(cfg)?;
    let report = evaluate(
        &structures,
        &ckpt.params,
        ckpt.full_config()?,
        &cfg.decoding,
        Execution::Parallel,
    )?;
    print!("{}", report.table());
    if let Some(path) = optional(&cfg.paths.report) {
        let mut w = create(path)?;
        write_line(&mut w, &report)?;
        w.flush()?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> CliResult<()> {
    let ckpt = full_model(cfg)?;
    let structures = test_structures(cfg)?;
    let mut dec = cfg.decoding.clone();
    dec.strategy = Strategy::Sample;
    dec.n_samples = cfg.sweep.n_samples;
    dec.validate()?;
    let rows = diversity_sweep(
        &structures,
        &ckpt.params,
        ckpt.full_config()?,
        &dec,
        &cfg.sweep.taus,
        Execution::Parallel,
    )?;
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "tau", "recovery", "distinct", "identity"
    );
    for r in &rows {
        let ident = r
            .mean_pairwise_identity
            .map_or("n/a".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10}",
            r.tau, r.mean_recovery, r.distinct_fraction, ident
        );
    }
    if let Some(path) = optional(&cfg.paths.sweep) {
        let mut w = create(path)?;
        for r in &rows {
            write_line(&mut w, r)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> CliResult<()> {
    if cfg.precision != Precision::F64 {
        return Err(CliError::config("gradcheck requires precision = \"f64\""));
    }
    let g = &cfg.gradcheck;
    if !(g.mask_ratio > 0.0 && g.mask_ratio <= 1.0) {
        return Err(CliError::config(format!(
            "gradcheck.mask_ratio {} outside (0, 1]",
            g.mask_ratio
        )));
    }
    let rec = gen_synthetic_record(&cfg.gen_data.spec(cfg.seed), 0);
    let state = SequenceState::fully_observed(rec.structure.native.clone().unwrap_or_default());
    let input = StructureInput::build(&rec.structure, &cfg.model.graph)?;
    let masked = cmlm_mask(
        &state,
        MaskRatio::Fixed(g.mask_ratio),
        &mut stream(cfg.seed, &[tag::GRADCHECK]),
    )?;
    cfg.model.validate()?;
    let params = init_model(&cfg.model, cfg.seed);
    let report = gradcheck(
        &params,
        &cfg.model,
        &input,
        &masked,
        g.epsilon,
        g.per_group,
        cfg.seed,
    )?;
    println!(
        "{:<10} {:>8} {:>14}  worst",
        "group", "checked", "max rel err"
    );
    for grp in &report.groups {
        println!(
            "{:<10} {:>8} {:>14.3e}  {}",
            grp.group, grp.checked, grp.max_relative_error, grp.worst
        );
    }
    if report.max_relative_error > g.tolerance {
        return Err(CliError::new(
            code::RUNTIME,
            format!(
                "gradient check failed: max relative error {:.3e} exceeds {:.1e}",
                report.max_relative_error, g.tolerance
            ),
        ));
    }
    Ok(())
}
