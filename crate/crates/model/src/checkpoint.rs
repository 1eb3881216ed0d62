//! Checkpoint directories: `manifest.json` describing every tensor,
//! `tensors.bin` holding them as little-endian `f32`, and `vocab.txt`.

use std::fs;
use std::path::Path;

use cmdrisk_core::Vocabulary;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::params::{init_params_shape, Parameters, PRETRAINING_HEADS};
use crate::ModelError;

pub const FORMAT: &str = "cmdrisk-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `tensors.bin`.
    pub offset: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Which tensors to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Export {
    Full,
    /// Drop the masked-LM bias and next-command head.
    Backbone,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(dir: &Path, params: &Parameters<f32>, vocab: &Vocabulary, export: Export) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in params.named() {
        if export == Export::Backbone && PRETRAINING_HEADS.contains(&name.as_str()) {
            continue;
        }
        let start = blob.len();
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape.clone(),
            offset: start as u64,
            sha256: hex(&Sha256::digest(&blob[start..])),
        });
    }
    let manifest = Manifest { format: FORMAT.into(), config: params.config.clone(), tensors };
    fs::write(dir.join("tensors.bin"), &blob)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("vocab.txt"), vocab.to_file_string())?;
    Ok(())
}

/// Loads a checkpoint. Tensors absent from the manifest (the pretraining
/// heads of an exported backbone) are zero-filled.
pub fn load_checkpoint(dir: &Path) -> Result<(Parameters<f32>, Vocabulary, Manifest), ModelError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT {
        return Err(ModelError::Checkpoint(format!("unknown format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    let blob = fs::read(dir.join("tensors.bin"))?;
    let vocab = Vocabulary::from_file_str(&fs::read_to_string(dir.join("vocab.txt"))?)?;
    if vocab.len() > manifest.config.vocab_size {
        return Err(ModelError::Checkpoint(format!(
            "vocabulary has {} tokens but the model only {}",
            vocab.len(),
            manifest.config.vocab_size
        )));
    }
    let mut params = init_params_shape::<f32>(&manifest.config);
    let mut seen = 0;
    for (name, t) in params.named_mut() {
        let Some(entry) = manifest.tensors.iter().find(|e| e.name == name) else {
            if PRETRAINING_HEADS.contains(&name.as_str()) {
                continue;
            }
            return Err(ModelError::Tensor { name, message: "missing from manifest".into() });
        };
        seen += 1;
        let err = |message: String| ModelError::Tensor { name: name.clone(), message };
        if entry.shape != t.shape {
            return Err(err(format!("shape {:?}, expected {:?}", entry.shape, t.shape)));
        }
        let start = entry.offset as usize;
        let end = start + 4 * t.data.len();
        let bytes = blob.get(start..end).ok_or_else(|| err("extends past end of tensors.bin".into()))?;
        if hex(&Sha256::digest(bytes)) != entry.sha256 {
            return Err(err("checksum mismatch".into()));
        }
        for (v, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        if !t.is_finite() {
            return Err(err("non-finite values".into()));
        }
    }
    if seen != manifest.tensors.len() {
        return Err(ModelError::Checkpoint("manifest lists unknown tensors".into()));
    }
    Ok((params, vocab, manifest))
}
