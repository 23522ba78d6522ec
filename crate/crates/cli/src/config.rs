use std::path::{Path, PathBuf};

use seqdesign_core::data::SyntheticSpec;
use seqdesign_core::decoding::DecodingConfig;
use seqdesign_core::lm::PretrainConfig;
use seqdesign_core::model::ModelConfig;
use seqdesign_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// File locations. An empty string disables an optional path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    /// Pretrained language model checkpoint.
    pub lm: PathBuf,
    /// Full-model checkpoint whose encoder seeds the pretrained-encoder modes.
    pub encoder: PathBuf,
    pub checkpoint: PathBuf,
    pub designs: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub sweep: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let run = |f: &str| PathBuf::from("run").join(f);
        Paths {
            train: run("train.jsonl"),
            val: run("val.jsonl"),
            test: run("test.jsonl"),
            lm: run("lm"),
            encoder: PathBuf::new(),
            checkpoint: run("model"),
            designs: run("designs.jsonl"),
            metrics: run("metrics.jsonl"),
            report: run("report.jsonl"),
            sweep: run("sweep.jsonl"),
        }
    }
}

/// `None` for the empty path.
pub fn optional(p: &Path) -> Option<&Path> {
    (!p.as_os_str().is_empty()).then_some(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenDataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub length_range: (usize, usize),
    pub ss_segment_length_range: (usize, usize),
    pub noise_rate: f64,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        GenDataConfig {
            n_train: s.n_samples,
            n_val: 100,
            n_test: 200,
            length_range: s.length_range,
            ss_segment_length_range: s.ss_segment_length_range,
            noise_rate: s.noise_rate,
        }
    }
}

impl GenDataConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_samples: self.n_train + self.n_val + self.n_test,
            length_range: self.length_range,
            ss_segment_length_range: self.ss_segment_length_range,
            noise_rate: self.noise_rate,
            seed,
            ..SyntheticSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub n_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            taus: vec![0.1, 0.5, 1.0, 1.2, 1.5],
            n_samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub epsilon: f64,
    /// Scalars probed per parameter group.
    pub per_group: usize,
    /// Largest accepted relative error.
    pub tolerance: f64,
    pub mask_ratio: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            epsilon: 1e-5,
            per_group: 32,
            tolerance: 1e-4,
            mask_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    /// Refuse settings whose results could depend on scheduling.
    pub deterministic: bool,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub paths: Paths,
    pub gen_data: GenDataConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub decoding: DecodingConfig,
    pub sweep: SweepConfig,
    pub gradcheck: GradcheckConfig,
}

/// Model sizes and schedules small enough for the whole pipeline to finish
/// in minutes on one core. The library defaults describe the full-size model.
fn desk_model() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.encoder.d_model = 64;
    m.encoder.n_layers = 2;
    m.lm.d_model = 64;
    m.lm.n_layers = 2;
    m
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F64,
            deterministic: true,
            threads: 0,
            paths: Paths::default(),
            gen_data: GenDataConfig::default(),
            model: desk_model(),
            pretrain: PretrainConfig {
                steps: 600,
                ..PretrainConfig::default()
            },
            train: TrainConfig {
                batch_residues: 2000,
                warmup: 100,
                max_steps: Some(1000),
                ..TrainConfig::default()
            },
            decoding: DecodingConfig::default(),
            sweep: SweepConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn has_key(table: &Table, path: &[&str]) -> bool {
    match path {
        [] => true,
        [last] => table.contains_key(*last),
        [first, rest @ ..] => table
            .get(*first)
            .and_then(Value::as_table)
            .is_some_and(|t| has_key(t, rest)),
    }
}

/// Loads the optional config file, applies `key=value` overrides and fills
/// per-command seeds that were not given explicitly from the global seed.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> CliResult<RunConfig> {
    let mut table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            text.parse::<Table>()
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        let (key, raw) = o.split_once('=').ok_or_else(|| {
            CliError::config(format!("override `{o}` is not of the form key=value"))
        })?;
        set_dotted(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    let mut cfg: RunConfig = Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(e.message().trim().to_string()))?;
    if !has_key(&table, &["pretrain", "seed"]) {
        cfg.pretrain.seed = cfg.seed;
    }
    if !has_key(&table, &["train", "seed"]) {
        cfg.train.seed = cfg.seed;
    }
    if !has_key(&table, &["decoding", "seed"]) {
        cfg.decoding.seed = cfg.seed;
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }
}
