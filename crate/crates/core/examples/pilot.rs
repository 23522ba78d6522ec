//! Synthetic-benchmark pilot: pretrains an LM, trains the full model and
//! reports proposal-only, full-model and sequence-only recovery plus
//! refinement convergence on 200 test proteins.
//!
//! Environment knobs (defaults in brackets): NTRAIN [2000], K [8], DENC [32],
//! LENC [1], DLM [64], LLM [2], PSTEPS [600], PLR [1], BATCH [2000],
//! STEPS [600], WARMUP [100], LR [1], SEED [0], SEQONLY [1] and HELIX, the
//! helix counter letters [AELKMQRHWF].
//!
//! ```sh
//! K=4 SEED=3 cargo run --release -p seqdesign-core --example pilot
//! ```

use std::time::Instant;

use seqdesign_core::data::{
    bayes_optimal_recovery, default_rule_table, gen_synthetic, SequenceState, SyntheticSpec,
    Vocabulary,
};
use seqdesign_core::decoding::{batch_design, DecodingConfig, Execution, InitMode};
use seqdesign_core::eval::{median, recovery};
use seqdesign_core::geometry::StructureInput;
use seqdesign_core::lm::{pretrain_lm, PretrainConfig};
use seqdesign_core::model::{init_model, Designer, ModelConfig};
use seqdesign_core::nn::argmax;
use seqdesign_core::training::{train_with, TrainConfig};

fn env(name: &str, default: f64) -> f64 {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let n_train = env("NTRAIN", 2000.0) as usize;
    let mut model = ModelConfig::default();
    model.graph.k = env("K", 8.0) as usize;
    model.encoder.d_model = env("DENC", 32.0) as usize;
    model.encoder.n_layers = env("LENC", 1.0) as usize;
    model.lm.d_model = env("DLM", 64.0) as usize;
    model.lm.n_layers = env("LLM", 2.0) as usize;
    model.lm.n_heads = 4;
    model.adapter.n_heads = 4;
    let letters: Vec<u8> = std::env::var("HELIX")
        .unwrap_or("AELKMQRHWF".into())
        .chars()
        .map(|c| Vocabulary::amino_acid(c).unwrap())
        .collect();
    let mut table = default_rule_table();
    for prev in 0..=20usize {
        let state = letters
            .iter()
            .position(|&h| h as usize == prev)
            .map_or(0, |p| p + 1);
        table[0][prev] = letters[state.min(letters.len() - 1)];
    }
    let base = SyntheticSpec {
        rule_tables: table,
        ..SyntheticSpec::default()
    };
    eprintln!("bayes {:.4}", bayes_optimal_recovery(&base));
    let train_spec = SyntheticSpec {
        n_samples: n_train,
        seed: 1,
        ..base.clone()
    };
    let test_spec = SyntheticSpec {
        n_samples: 200,
        seed: 2,
        ..base.clone()
    };
    let train = gen_synthetic(&train_spec).unwrap();
    let test = gen_synthetic(&test_spec).unwrap();
    let t0 = Instant::now();
    let corpus: Vec<SequenceState> = train.iter().map(|(_, s)| s.clone()).collect();
    let pre = pretrain_lm(
        &corpus,
        &PretrainConfig {
            steps: env("PSTEPS", 600.0) as u64,
            batch_residues: 2000,
            warmup: 100,
            lr_factor: env("PLR", 1.0),
            ..PretrainConfig::default()
        },
        &model.lm,
    )
    .unwrap();
    eprintln!(
        "pretrain {:.1}s last loss {:.3}",
        t0.elapsed().as_secs_f64(),
        pre.losses.iter().rev().take(20).sum::<f64>() / 20.0
    );

    let run = |model: &ModelConfig| {
        let mut params = init_model(model, 3);
        params.merge(pre.params.clone());
        let cfg = TrainConfig {
            batch_residues: env("BATCH", 2000.0) as usize,
            max_steps: Some(env("STEPS", 600.0) as u64),
            warmup: env("WARMUP", 100.0) as u64,
            lr_factor: env("LR", 1.0),
            seed: env("SEED", 0.0) as u64,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let out = train_with(&train, &[], params, model, &cfg, &mut |m| {
            if m.step % 50 == 0 {
                eprintln!(
                    "step {} loss {:.3} design {:.3} prop {:.3} {:.0}s",
                    m.step,
                    m.loss,
                    m.design_loss,
                    m.proposal_loss,
                    t.elapsed().as_secs_f64()
                );
            }
        })
        .unwrap();
        out.params
    };
    let structures: Vec<_> = test.iter().map(|(s, _)| s.clone()).collect();
    let natives: Vec<_> = test.iter().map(|(_, s)| s.tokens.clone()).collect();

    let full = run(&model);
    let prop: Vec<f64> = structures
        .iter()
        .zip(&natives)
        .map(|(s, n)| {
            let input = StructureInput::build(s, &model.graph).unwrap();
            let d = Designer::new(&full, &model, &input).unwrap();
            let pred: Vec<u8> = (0..d.len())
                .map(|i| argmax(d.proposal.row(i)) as u8)
                .collect();
            recovery(&pred, n).unwrap()
        })
        .collect();
    for t in [1usize, 5] {
        let cfg = DecodingConfig {
            t,
            ..DecodingConfig::default()
        };
        let res: Vec<_> = batch_design(&structures, &full, &model, &cfg, Execution::Serial)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let r: Vec<f64> = res
            .iter()
            .zip(&natives)
            .map(|(r, n)| recovery(&r.sequence, n).unwrap())
            .collect();
        let conv = res.iter().filter(|r| r.converged).count();
        eprintln!(
            "full T={t} median {:.4} mean {:.4} converged {conv}",
            median(&r).unwrap(),
            r.iter().sum::<f64>() / r.len() as f64
        );
    }
    eprintln!("proposal median {:.4}", median(&prop).unwrap());
    for t in [1usize, 2, 5, 10] {
        let fm = DecodingConfig {
            t,
            init: InitMode::FullMask,
            ..DecodingConfig::default()
        };
        let res: Vec<_> = batch_design(&structures, &full, &model, &fm, Execution::Serial)
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let r: Vec<f64> = res
            .iter()
            .zip(&natives)
            .map(|(r, n)| recovery(&r.sequence, n).unwrap())
            .collect();
        let conv = res
            .iter()
            .filter(|r| r.converged || r.steps_used < t)
            .count();
        eprintln!(
            "full-mask T={t} median {:.4} mean {:.4} converged {conv}",
            median(&r).unwrap(),
            r.iter().sum::<f64>() / r.len() as f64
        );
        let two_cycles = res
            .iter()
            .filter(|r| {
                !r.converged
                    && r.trajectory.len() >= 3
                    && r.trajectory[r.trajectory.len() - 1] == r.trajectory[r.trajectory.len() - 3]
            })
            .count();
        let last_diff: Vec<usize> = res
            .iter()
            .filter(|r| !r.converged)
            .map(|r| {
                let n = r.trajectory.len();
                r.trajectory[n - 1]
                    .iter()
                    .zip(&r.trajectory[n - 2])
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .collect();
        eprintln!(
            "  non-converged two-cycles {two_cycles}, positions changed at last step {last_diff:?}"
        );
    }
    let fm = DecodingConfig {
        t: 5,
        init: InitMode::FullMask,
        ..DecodingConfig::default()
    };
    let r: Vec<f64> = batch_design(&structures, &full, &model, &fm, Execution::Serial)
        .into_iter()
        .zip(&natives)
        .map(|(r, n)| recovery(&r.unwrap().sequence, n).unwrap())
        .collect();
    eprintln!("full full-mask T=5 median {:.4}", median(&r).unwrap());
    if env("SEQONLY", 1.0) > 0.0 {
        let mut seq_model = model.clone();
        seq_model.zero_structure = true;
        let seq = run(&seq_model);
        let r: Vec<f64> = batch_design(&structures, &seq, &seq_model, &fm, Execution::Serial)
            .into_iter()
            .zip(&natives)
            .map(|(r, n)| recovery(&r.unwrap().sequence, n).unwrap())
            .collect();
        eprintln!("seq-only median {:.4}", median(&r).unwrap());
    }
    eprintln!("total {:.1}s", t0.elapsed().as_secs_f64());
}
