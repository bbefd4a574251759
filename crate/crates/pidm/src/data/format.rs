//! The `.traj` container and the per-dataset manifest.
//!
//! Layout: magic "PIDM", u32 LE version = 1, u32 LE header length, a UTF-8
//! JSON header, then raw little-endian blocks in order: images u8
//! [T][views][H][W][3], states f32 [T][state_dim], actions f32
//! [T][action_dim]. Reads are bit-exact inverses of writes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Result, StageEvent, Trajectory};

const MAGIC: [u8; 4] = *b"PIDM";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    task: String,
    instruction: Option<String>,
    #[serde(rename = "T")]
    len: usize,
    views: usize,
    #[serde(rename = "H")]
    height: usize,
    #[serde(rename = "W")]
    width: usize,
    state_dim: usize,
    action_dim: usize,
    seed: u64,
    stages: Vec<StageEvent>,
}

pub fn trajectory_to_bytes(traj: &Trajectory) -> Result<Vec<u8>> {
    traj.validate()?;
    let header = Header {
        task: traj.task.clone(),
        instruction: traj.instruction.clone(),
        len: traj.len,
        views: traj.views,
        height: traj.height,
        width: traj.width,
        state_dim: traj.state_dim,
        action_dim: traj.action_dim,
        seed: traj.seed,
        stages: traj.stages.clone(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| DataError::BadHeader(e.to_string()))?;
    let mut out = Vec::with_capacity(
        12 + header_bytes.len() + traj.images.len() + 4 * (traj.states.len() + traj.actions.len()),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&traj.images);
    for v in &traj.states {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &traj.actions {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    fs::write(path, trajectory_to_bytes(traj)?)?;
    Ok(())
}

/// Parse a `.traj` byte stream; safe on arbitrary (untrusted) input.
pub fn read_trajectory_bytes(bytes: &[u8]) -> Result<Trajectory> {
    let take = |section: &'static str, offset: usize, needed: usize| -> Result<&[u8]> {
        if offset + needed > bytes.len() {
            return Err(DataError::Truncated {
                section,
                offset,
                needed,
                got: bytes.len().saturating_sub(offset),
            });
        }
        Ok(&bytes[offset..offset + needed])
    };

    let magic = take("magic", 0, 4)?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(DataError::BadMagic { found });
    }
    let version = u32::from_le_bytes(take("version", 4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(DataError::BadVersion(version));
    }
    let header_len = u32::from_le_bytes(take("header length", 8, 4)?.try_into().unwrap()) as usize;
    let header_bytes = take("header", 12, header_len)?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| DataError::BadHeader(e.to_string()))?;
    if header.len == 0 {
        return Err(DataError::Invalid("T must be >= 1".into()));
    }
    let frame = header
        .height
        .checked_mul(header.width)
        .and_then(|p| p.checked_mul(3))
        .and_then(|p| p.checked_mul(header.views))
        .and_then(|p| p.checked_mul(header.len))
        .ok_or_else(|| DataError::Invalid("image block size overflows".into()))?;
    let states_len = header
        .len
        .checked_mul(header.state_dim)
        .ok_or_else(|| DataError::Invalid("state block size overflows".into()))?;
    let actions_len = header
        .len
        .checked_mul(header.action_dim)
        .ok_or_else(|| DataError::Invalid("action block size overflows".into()))?;

    let mut offset = 12 + header_len;
    let images = take("images", offset, frame)?.to_vec();
    offset += frame;
    let states_raw = take("states", offset, 4 * states_len)?;
    let states: Vec<f32> = states_raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    offset += 4 * states_len;
    let actions_raw = take("actions", offset, 4 * actions_len)?;
    let actions: Vec<f32> = actions_raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    offset += 4 * actions_len;
    if offset != bytes.len() {
        return Err(DataError::Invalid(format!(
            "{} trailing bytes after the actions section",
            bytes.len() - offset
        )));
    }

    let traj = Trajectory {
        task: header.task,
        instruction: header.instruction,
        len: header.len,
        views: header.views,
        height: header.height,
        width: header.width,
        state_dim: header.state_dim,
        action_dim: header.action_dim,
        images,
        states,
        actions,
        seed: header.seed,
        stages: header.stages,
    };
    traj.validate()?;
    Ok(traj)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    read_trajectory_bytes(&fs::read(path)?)
}

/// Relative paths of every trajectory in a dataset directory, by split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub pretrain: Vec<String>,
    pub finetune: Vec<String>,
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(manifest)
        .map_err(|e| DataError::BadManifest(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Parse and validate a manifest; the two splits must be disjoint by path.
pub fn read_manifest_bytes(bytes: &[u8]) -> Result<Manifest> {
    let manifest: Manifest =
        serde_json::from_slice(bytes).map_err(|e| DataError::BadManifest(e.to_string()))?;
    if manifest.version != 1 {
        return Err(DataError::BadManifest(format!(
            "unsupported version {}",
            manifest.version
        )));
    }
    for p in manifest.pretrain.iter().chain(&manifest.finetune) {
        if p.is_empty() || Path::new(p).is_absolute() || p.contains("..") {
            return Err(DataError::BadManifest(format!("bad relative path {p:?}")));
        }
    }
    for p in &manifest.pretrain {
        if manifest.finetune.iter().any(|q| q == p) {
            return Err(DataError::BadManifest(format!(
                "{p:?} appears in both splits"
            )));
        }
    }
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    read_manifest_bytes(&fs::read(path)?)
}
