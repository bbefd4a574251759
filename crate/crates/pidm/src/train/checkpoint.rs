//! The `.ckpt` container: magic "PIDC", u32 LE version = 1, u32 LE config
//! length plus UTF-8 JSON config text, u32 LE tensor count, then per tensor
//! sorted by name: u16 LE name length, name bytes, u8 dtype tag, u8 rank,
//! u32 LE dims, little-endian payload. Round trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::tensor::{Dtype, ParamStore, Scalar};

use super::{TrainConfig, TrainError};

const MAGIC: [u8; 4] = *b"PIDC";
const VERSION: u32 = 1;
const MOMENT_M: &str = "opt.m.";
const MOMENT_V: &str = "opt.v.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<E: Scalar> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub params: ParamStore<E>,
    /// First/second Adam moments, when saved for exact resume.
    pub moments: Option<(ParamStore<E>, ParamStore<E>)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
}

pub fn checkpoint_to_bytes<E: Scalar>(ckpt: &Checkpoint<E>) -> Result<Vec<u8>, TrainError> {
    let config = serde_json::to_vec(&ConfigBlock {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        step: ckpt.step,
    })
    .map_err(|e| TrainError::BadCheckpoint(e.to_string()))?;

    let mut entries: Vec<(String, &Vec<usize>, &Vec<E>)> = Vec::new();
    for (name, p) in ckpt.params.iter() {
        entries.push((name.clone(), &p.shape, &p.data));
    }
    if let Some((m, v)) = &ckpt.moments {
        for (name, p) in m.iter() {
            entries.push((format!("{MOMENT_M}{name}"), &p.shape, &p.data));
        }
        for (name, p) in v.iter() {
            entries.push((format!("{MOMENT_V}{name}"), &p.shape, &p.data));
        }
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));

    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in entries {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(E::DTYPE.tag());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save_checkpoint<E: Scalar>(ckpt: &Checkpoint<E>, path: &Path) -> Result<(), TrainError> {
    fs::write(path, checkpoint_to_bytes(ckpt)?)?;
    Ok(())
}

/// Parse a `.ckpt` byte stream; safe on arbitrary input.
pub fn checkpoint_from_bytes<E: Scalar>(bytes: &[u8]) -> Result<Checkpoint<E>, TrainError> {
    let take = |section: &'static str, offset: usize, needed: usize| -> Result<&[u8], TrainError> {
        bytes.get(offset..offset + needed).ok_or(TrainError::CkptTruncated {
            section,
            offset,
        })
    };
    let magic = take("magic", 0, 4)?;
    if magic != MAGIC {
        return Err(TrainError::BadCheckpoint(format!(
            "bad magic {magic:?}, expected \"PIDC\""
        )));
    }
    let version = u32::from_le_bytes(take("version", 4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(TrainError::BadCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let clen = u32::from_le_bytes(take("config length", 8, 4)?.try_into().unwrap()) as usize;
    let config: ConfigBlock = serde_json::from_slice(take("config", 12, clen)?)
        .map_err(|e| TrainError::BadCheckpoint(format!("config: {e}")))?;
    let mut offset = 12 + clen;
    let count = u32::from_le_bytes(take("tensor count", offset, 4)?.try_into().unwrap()) as usize;
    offset += 4;

    let mut params = ParamStore::new();
    let mut m = ParamStore::new();
    let mut v = ParamStore::new();
    let mut prev_name: Option<String> = None;
    for _ in 0..count {
        let nlen = u16::from_le_bytes(take("tensor name length", offset, 2)?.try_into().unwrap())
            as usize;
        offset += 2;
        let name = std::str::from_utf8(take("tensor name", offset, nlen)?)
            .map_err(|e| TrainError::BadCheckpoint(format!("tensor name: {e}")))?
            .to_string();
        offset += nlen;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(TrainError::BadCheckpoint(
                    "tensor names must be strictly sorted".into(),
                ));
            }
        }
        prev_name = Some(name.clone());
        let tag = take("dtype tag", offset, 1)?[0];
        offset += 1;
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| TrainError::BadCheckpoint(format!("unknown dtype tag {tag}")))?;
        if dtype != E::DTYPE {
            return Err(TrainError::BadCheckpoint(format!(
                "tensor {name:?} has dtype {dtype:?}, expected {:?}",
                E::DTYPE
            )));
        }
        let rank = take("rank", offset, 1)?[0] as usize;
        offset += 1;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take("dims", offset, 4)?.try_into().unwrap()) as usize);
            offset += 4;
        }
        let numel: usize = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or(
            TrainError::BadCheckpoint("tensor size overflows".into()),
        )?;
        let payload = take("tensor payload", offset, numel * E::DTYPE.size())?;
        offset += numel * E::DTYPE.size();
        let data: Vec<E> = payload
            .chunks_exact(E::DTYPE.size())
            .map(E::read_le)
            .collect();
        let target = if let Some(stripped) = name.strip_prefix(MOMENT_M) {
            m.insert(stripped, shape, data)
        } else if let Some(stripped) = name.strip_prefix(MOMENT_V) {
            v.insert(stripped, shape, data)
        } else {
            params.insert(&name, shape, data)
        };
        target.map_err(|e| TrainError::BadCheckpoint(e.to_string()))?;
    }
    if offset != bytes.len() {
        return Err(TrainError::BadCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - offset
        )));
    }
    let moments = if m.is_empty() && v.is_empty() {
        None
    } else {
        if m.len() != params.len() || v.len() != params.len() {
            return Err(TrainError::BadCheckpoint(
                "optimizer moments do not cover the parameters".into(),
            ));
        }
        Some((m, v))
    };
    Ok(Checkpoint {
        model: config.model,
        train: config.train,
        step: config.step,
        params,
        moments,
    })
}

pub fn load_checkpoint<E: Scalar>(path: &Path) -> Result<Checkpoint<E>, TrainError> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Architecture compatibility for fine-tuning from a checkpoint; lists every
/// differing field by name.
pub fn check_arch_compat(expected: &ModelConfig, loaded: &ModelConfig) -> Result<(), TrainError> {
    let mut diffs = Vec::new();
    for ((name, a), (_, b)) in expected.arch_fields().iter().zip(loaded.arch_fields()) {
        if *a != b {
            diffs.push(format!("{name} ({a} vs {b})"));
        }
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(TrainError::ArchMismatch(diffs.join(", ")))
    }
}
