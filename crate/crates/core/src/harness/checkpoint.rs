//! Checkpoint = `<stem>.json` metadata + `<stem>.bin` weights.
//!
//! The blob holds little-endian `f64`s: the teacher's parameters followed by
//! the student's, each in layer order (layer 0, 1, 2), and within a layer the
//! weight tensor `out × in × 3 × 3` row-major followed by the `out` biases.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelParams, INPUT_CHANNELS, KERNEL};
use crate::teacher_student::{Method, TrainerState};

use super::config::hex;

pub const CHECKPOINT_FORMAT: &str = "ipixmatch-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const SECTIONS: [&str; 2] = ["teacher", "student"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub num_classes: usize,
    pub kernel: usize,
    pub layers: usize,
    pub iteration: u64,
    pub epoch: usize,
    pub seed: u64,
    pub method: Method,
    pub config_hash: String,
    pub sections: Vec<String>,
    pub values_per_section: usize,
    pub blob: String,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub teacher: ModelParams,
    pub student: ModelParams,
}

pub fn checkpoint_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.bin")))
}

/// Writes both files; the metadata is written last so a torn write never
/// leaves metadata pointing at a stale blob with a matching hash.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    state: &TrainerState,
    epoch: usize,
    config_hash: &str,
) -> Result<CheckpointMeta> {
    let (meta_path, blob_path) = checkpoint_paths(dir, stem);
    let mut blob = Vec::with_capacity(2 * state.student.num_params() * 8);
    for params in [&state.teacher, &state.student] {
        for v in params.values() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        input_channels: INPUT_CHANNELS,
        hidden_channels: state.student.hidden_channels(),
        num_classes: state.student.num_classes(),
        kernel: KERNEL,
        layers: state.student.layers.len(),
        iteration: state.iteration,
        epoch,
        seed: state.run_seed,
        method: state.config.method,
        config_hash: config_hash.into(),
        sections: SECTIONS.iter().map(|s| s.to_string()).collect(),
        values_per_section: state.student.num_params(),
        blob: blob_path.file_name().unwrap().to_string_lossy().into_owned(),
        blob_sha256: hex(&Sha256::digest(&blob)),
    };
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

/// Loads a checkpoint from its metadata path.
pub fn load_checkpoint(meta_path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
    let integrity = |offset: u64, reason: String| Error::Integrity {
        path: meta_path.to_path_buf(),
        offset,
        reason,
    };
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| integrity(0, format!("bad metadata: {e}")))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(integrity(0, format!("not a checkpoint (format {:?})", meta.format)));
    }
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: meta_path.to_path_buf(),
            found: meta.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if meta.input_channels != INPUT_CHANNELS || meta.kernel != KERNEL || meta.layers != 3 {
        return Err(integrity(0, "unsupported architecture".into()));
    }
    if meta.hidden_channels == 0 || meta.num_classes < 2 {
        return Err(integrity(0, "invalid architecture dimensions".into()));
    }
    let blob_path = meta_path.with_file_name(&meta.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut teacher = ModelParams::zeros(meta.hidden_channels, meta.num_classes);
    let n = teacher.num_params();
    let want = 2 * n * 8;
    if meta.values_per_section != n || blob.len() != want {
        return Err(Error::Integrity {
            path: blob_path,
            offset: blob.len().min(want) as u64,
            reason: format!("expected {want} bytes, found {}", blob.len()),
        });
    }
    if hex(&Sha256::digest(&blob)) != meta.blob_sha256 {
        return Err(Error::Integrity {
            path: blob_path,
            offset: 0,
            reason: "blob hash does not match metadata".into(),
        });
    }
    let mut values = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    for v in teacher.values_mut() {
        *v = values.next().expect("length checked");
    }
    let mut student = teacher.zeros_like();
    for v in student.values_mut() {
        *v = values.next().expect("length checked");
    }
    Ok(Checkpoint { meta, teacher, student })
}
