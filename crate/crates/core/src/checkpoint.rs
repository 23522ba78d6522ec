//! Checkpoint directories: `manifest.json` plus little-endian `tensors.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::{init_lm, LMConfig};
use crate::model::{init_model, ModelConfig};
use crate::nn::{Matrix, ParamStore};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// What the tensors parameterize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Encoder, language model and adapter.
    Full(ModelConfig),
    /// A pretrained language model alone.
    Lm(LMConfig),
}

impl ModelSpec {
    fn expected_names(&self) -> Vec<String> {
        let mut p = ParamStore::new();
        match self {
            ModelSpec::Full(c) => p = init_model(c, 0),
            ModelSpec::Lm(c) => init_lm(&mut p, 0, c),
        }
        p.names().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    /// Next unused step counter.
    pub counter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: Dtype,
    /// Byte offset into `tensors.bin`.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub vocabulary: Vec<String>,
    pub model: ModelSpec,
    pub step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub params: ParamStore,
    pub step: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn full_config(&self) -> Result<&ModelConfig> {
        match &self.model {
            ModelSpec::Full(c) => Ok(c),
            ModelSpec::Lm(_) => Err(Error::invalid(
                "checkpoint holds a language model only; a full model is required",
            )),
        }
    }
}

/// Writes `dir/manifest.json` and `dir/tensors.bin`, creating `dir`.
/// With `Dtype::F32` values are rounded to single precision.
pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint, dtype: Dtype) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, p) in ckpt.params.iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: [p.value.rows, p.value.cols],
            dtype,
            offset: bytes.len() as u64,
            trainable: p.trainable,
        });
        for &v in &p.value.data {
            match dtype {
                Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        vocabulary: Vocabulary::symbols(),
        model: ckpt.model.clone(),
        step: ckpt.step,
        rng: ckpt.rng,
        tensors,
    };
    fs::write(dir.join(TENSORS), &bytes)?;
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let found = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::CorruptCheckpoint("manifest has no format_version".into()))?;
    if found != FORMAT_VERSION as u64 {
        return Err(Error::CheckpointVersion {
            found: found.min(u32::MAX as u64) as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    if manifest.vocabulary != Vocabulary::symbols() {
        return Err(Error::CorruptCheckpoint(
            "vocabulary differs from this build".into(),
        ));
    }
    let bytes = fs::read(dir.join(TENSORS))?;
    let mut params = ParamStore::new();
    let mut end_max = 0usize;
    for t in &manifest.tensors {
        if params.contains(&t.name) {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor `{}` appears twice",
                t.name
            )));
        }
        let n = t.shape[0] * t.shape[1];
        let start = t.offset as usize;
        let end = start + n * t.dtype.width();
        if end > bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{TENSORS} is truncated: tensor `{}` needs bytes {start}..{end}, file has {}",
                t.name,
                bytes.len()
            )));
        }
        end_max = end_max.max(end);
        let raw = &bytes[start..end];
        let data: Vec<f64> = match t.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        params.insert(
            t.name.clone(),
            Matrix::from_vec(t.shape[0], t.shape[1], data),
        );
        params.get_mut(&t.name).unwrap().trainable = t.trainable;
    }
    if end_max != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{TENSORS} has {} bytes, manifest describes {end_max}",
            bytes.len()
        )));
    }
    for name in manifest.model.expected_names() {
        if !params.contains(&name) {
            return Err(Error::MissingTensor(name));
        }
    }
    Ok(Checkpoint {
        model: manifest.model,
        params,
        step: manifest.step,
        rng: manifest.rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Checkpoint {
        let mut c = ModelConfig::default();
        c.encoder.d_model = 8;
        c.encoder.n_layers = 1;
        c.lm.d_model = 8;
        c.lm.n_layers = 1;
        c.lm.n_heads = 2;
        c.adapter.n_heads = 2;
        let mut params = init_model(&c, 5);
        params.set_trainable("lm.", false);
        Checkpoint {
            params,
            model: ModelSpec::Full(c),
            step: 17,
            rng: RngState {
                seed: 5,
                counter: 18,
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny();
        save_checkpoint(dir.path(), &c, Dtype::F64).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, c);
        for (name, p) in c.params.iter() {
            let q = &back.params.get(name).unwrap().value;
            assert!(p
                .value
                .data
                .iter()
                .zip(&q.data)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn single_precision_round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.params.quantize_f32();
        save_checkpoint(dir.path(), &c, Dtype::F32).unwrap();
        assert_eq!(load_checkpoint(dir.path()).unwrap(), c);
    }

    #[test]
    fn truncated_tensor_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &tiny(), Dtype::F64).unwrap();
        let path = dir.path().join(TENSORS);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn unknown_version_names_both() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &tiny(), Dtype::F64).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&path, text).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            Error::CheckpointVersion {
                found: 99,
                expected: 1
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("99") && msg.contains('1'));
    }

    #[test]
    fn missing_tensor_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &tiny(), Dtype::F64).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let gone = m
            .tensors
            .iter()
            .position(|t| t.name == "adapter.head.b")
            .unwrap();
        let removed = m.tensors.remove(gone);
        // Keep the byte layout consistent so only the name check can fail.
        let width = removed.shape[0] * removed.shape[1] * 8;
        let bytes = fs::read(dir.path().join(TENSORS)).unwrap();
        let mut kept = bytes[..removed.offset as usize].to_vec();
        kept.extend_from_slice(&bytes[removed.offset as usize + width..]);
        for t in &mut m.tensors {
            if t.offset > removed.offset {
                t.offset -= width as u64;
            }
        }
        fs::write(dir.path().join(TENSORS), kept).unwrap();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("adapter.head.b"), "{err}");
    }
}
