//! Command-line entry point: data generation, LM pretraining, training,
//! design, evaluation, temperature sweeps and gradient checks.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqdesign_core::checkpoint::FORMAT_VERSION;
use seqdesign_core::decoding::{InitMode, Strategy};

use crate::config::RunConfig;
use crate::error::{code, CliError, CliResult};

fn version() -> &'static str {
    Box::leak(
        format!(
            "{} (checkpoint format {FORMAT_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

/// Options accepted both before and after the subcommand. They are
/// declared at each level rather than as clap globals, because a global
/// given after the subcommand replaces, instead of extending, the values
/// given before it.
#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.max_steps=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Also write the resolved configuration to this file.
    #[arg(long, value_name = "PATH")]
    dump_config: Option<PathBuf>,
}

impl Common {
    /// Options after the subcommand take precedence; overrides apply in
    /// command-line order.
    fn then(mut self, later: &Common) -> Common {
        self.config = later.config.clone().or(self.config);
        self.overrides.extend(later.overrides.iter().cloned());
        self.dump_config = later.dump_config.clone().or(self.dump_config);
        self
    }
}

#[derive(Parser, Debug)]
#[command(name = "seqdesign", version = version(), about = "Structure-conditioned protein sequence design")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic train/val/test datasets.
    GenData(Common),
    /// Pretrain the sequence-only language model.
    PretrainLm(Common),
    /// Train the structure-conditioned model.
    Train(Common),
    /// Design sequences for the test structures.
    Design {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["proposal", "full-mask"])]
        init: Option<String>,
        /// Maximum refinement steps.
        #[arg(long = "T", value_name = "T")]
        t: Option<usize>,
        #[arg(long, value_parser = ["argmax", "sample"])]
        strategy: Option<String>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        n_samples: Option<usize>,
        /// Input structures (overrides paths.test).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output JSONL, `-` for stdout (overrides paths.designs).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Include intermediate sequences in each record.
        #[arg(long)]
        trajectory: bool,
    },
    /// Design the test set and report recovery, perplexity and contexts.
    Eval(Common),
    /// Temperature sweep of accuracy against diversity.
    Sweep(Common),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::PretrainLm(c)
            | Command::Train(c)
            | Command::Eval(c)
            | Command::Sweep(c)
            | Command::Gradcheck(c) => c,
            Command::Design { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let common = cli.common.clone().then(cli.command.common());
    let mut cfg: RunConfig = config::resolve(common.config.as_deref(), &common.overrides)?;
    let mut with_trajectory = false;
    if let Command::Design {
        init,
        t,
        strategy,
        tau,
        n_samples,
        input,
        output,
        trajectory,
        ..
    } = &cli.command
    {
        let d = &mut cfg.decoding;
        if let Some(i) = init {
            d.init = if i == "proposal" {
                InitMode::Proposal
            } else {
                InitMode::FullMask
            };
        }
        if let Some(s) = strategy {
            d.strategy = if s == "argmax" {
                Strategy::Argmax
            } else {
                Strategy::Sample
            };
        }
        d.t = t.unwrap_or(d.t);
        d.tau = tau.unwrap_or(d.tau);
        d.n_samples = n_samples.unwrap_or(d.n_samples);
        if let Some(p) = input {
            cfg.paths.test = p.clone();
        }
        if let Some(p) = output {
            cfg.paths.designs = p.clone();
        }
        with_trajectory = *trajectory;
    }
    let resolved = cfg.to_toml();
    log::info!("resolved configuration:\n{resolved}");
    if let Some(path) = &common.dump_config {
        std::fs::write(path, &resolved)?;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::new(code::OTHER, e.to_string()))?;
    }
    // Reductions are ordered by item index, so thread count never changes
    // results; the flag is recorded for provenance.
    log::debug!("deterministic = {}", cfg.deterministic);
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::PretrainLm(_) => commands::pretrain(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Design { .. } => commands::design(&cfg, with_trajectory),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Sweep(_) => commands::sweep(&cfg),
        Command::Gradcheck(_) => commands::gradcheck_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { code::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
