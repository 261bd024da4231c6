//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `SVQACKPT`, a little-endian `u32` version, a
//! `u64` header length, the JSON header, the parameter values as
//! little-endian `f64` in registration order, then (if the header says so)
//! the optimizer first and second moments in the same order, and finally a
//! sha256 of everything before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamW, TrainConfig, TrainState};
use crate::error::CheckpointError;
use crate::language::Vocabulary;
use crate::model::{ModelBundle, ModelConfig};
use crate::nn::Matrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SVQACKPT";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    init_seed: u64,
    vocabulary: String,
    tags: Vec<String>,
    dataset_hash: Option<String>,
    audio_seed: Option<u64>,
    frames_per_char: Option<usize>,
    train: Option<TrainHeader>,
    params: Vec<ParamHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    step: usize,
    total_steps: usize,
    adam_t: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    rows: usize,
    cols: usize,
}

fn push_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes the bundle atomically (temporary file, then rename).
pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<(), CheckpointError> {
    let params = &bundle.params;
    let header = Header {
        model_config: bundle.config.clone(),
        init_seed: bundle.init_seed,
        vocabulary: Vocabulary::NAME.into(),
        tags: bundle.tags.clone(),
        dataset_hash: bundle.dataset_hash.clone(),
        audio_seed: bundle.audio_seed,
        frames_per_char: bundle.frames_per_char,
        train: bundle.train_state.as_ref().map(|s| TrainHeader {
            config: s.config.clone(),
            step: s.step,
            total_steps: s.total_steps,
            adam_t: s.optimizer.t,
        }),
        params: params
            .ids()
            .map(|id| ParamHeader {
                name: params.name(id).to_string(),
                rows: params.get(id).nrows(),
                cols: params.get(id).ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(params.num_scalars() * 8 * 3 + json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in params.ids() {
        push_matrix(&mut out, params.get(id));
    }
    if let Some(s) = &bundle.train_state {
        for m in s.optimizer.m.iter().chain(&s.optimizer.v) {
            push_matrix(&mut out, m);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&out)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Corrupt("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, CheckpointError> {
        let raw = self.take(rows * cols * 8)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Matrix::from_shape_vec((rows, cols), vals).expect("shape matches length"))
    }
}

/// Hash of a checkpoint file's bytes, for naming reports.
pub fn checkpoint_hash(path: &Path) -> Result<String, CheckpointError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum);
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    if header.vocabulary != Vocabulary::NAME {
        return Err(CheckpointError::ConfigMismatch {
            field: "vocabulary".into(),
            expected: Vocabulary::NAME.into(),
            found: header.vocabulary,
        });
    }
    let mut bundle = ModelBundle::new(header.model_config, header.init_seed)
        .map_err(|e| CheckpointError::Corrupt(format!("model config: {e}")))?;
    let ids: Vec<_> = bundle.params.ids().collect();
    if ids.len() != header.params.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} parameters stored, model has {}",
            header.params.len(),
            ids.len()
        )));
    }
    for (id, ph) in ids.iter().zip(&header.params) {
        let current = bundle.params.get(*id);
        if bundle.params.name(*id) != ph.name || current.dim() != (ph.rows, ph.cols) {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {} ({}x{}) does not match model parameter {} {:?}",
                ph.name,
                ph.rows,
                ph.cols,
                bundle.params.name(*id),
                current.dim()
            )));
        }
    }
    for id in &ids {
        let (rows, cols) = bundle.params.get(*id).dim();
        *bundle.params.get_mut(*id) = r.matrix(rows, cols)?;
    }
    if let Some(t) = header.train {
        let mut opt = AdamW::new(&bundle.params, t.config.beta1, t.config.beta2, t.config.eps, t.config.weight_decay);
        opt.t = t.adam_t;
        for slot in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            let (rows, cols) = slot.dim();
            *slot = r.matrix(rows, cols)?;
        }
        bundle.train_state = Some(TrainState {
            config: t.config,
            step: t.step,
            total_steps: t.total_steps,
            optimizer: opt,
        });
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    bundle.tags = header.tags;
    bundle.dataset_hash = header.dataset_hash;
    bundle.audio_seed = header.audio_seed;
    bundle.frames_per_char = header.frames_per_char;
    Ok(bundle)
}

/// [`load_checkpoint`], failing with the first differing field if the stored
/// model config is not `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<ModelBundle, CheckpointError> {
    let bundle = load_checkpoint(path)?;
    if let Some((field, want, found)) = expected.diff(&bundle.config) {
        return Err(CheckpointError::ConfigMismatch {
            field,
            expected: want,
            found,
        });
    }
    Ok(bundle)
}
