//! Trajectory persistence, dataset splits, window sampling, and batching.

mod batch;
mod format;
mod window;

pub use batch::{BatchIter, WindowRef};
pub use format::{
    read_manifest, read_manifest_bytes, read_trajectory, read_trajectory_bytes, write_manifest,
    write_trajectory, Manifest,
};
pub use window::{sample_window, Mode, TrainingWindow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset 0: expected \"PIDM\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {0} (expected 1)")]
    BadVersion(u32),
    #[error("truncated in {section} section: need {needed} bytes at offset {offset}, have {got}")]
    Truncated {
        section: &'static str,
        offset: usize,
        needed: usize,
        got: usize,
    },
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("invalid trajectory: {0}")]
    Invalid(String),
    #[error("window focus step {t} outside valid range {lo}..={hi}")]
    WindowOutOfRange { t: usize, lo: usize, hi: usize },
    #[error("fine-tuning window requires an instruction, trajectory has none")]
    MissingInstruction,
    #[error("batch size must be >= 1")]
    BadBatchSize,
    #[error("no valid training windows in the {0} split")]
    EmptySplit(&'static str),
    #[error("manifest: {0}")]
    BadManifest(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// A stage predicate becoming satisfied at a given step of a demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: usize,
    pub step: usize,
}

/// One recorded episode: optional instruction, per-step two-view images,
/// robot states, and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: String,
    pub instruction: Option<String>,
    /// Number of recorded steps T.
    pub len: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// u8, row-major [T][views][H][W][3].
    pub images: Vec<u8>,
    /// f32, row-major [T][state_dim].
    pub states: Vec<f32>,
    /// f32, row-major [T][action_dim].
    pub actions: Vec<f32>,
    pub seed: u64,
    pub stages: Vec<StageEvent>,
}

impl Trajectory {
    pub fn frame_bytes(&self) -> usize {
        self.height * self.width * 3
    }

    /// Bytes of the image for (step, view).
    pub fn image(&self, step: usize, view: usize) -> &[u8] {
        let fb = self.frame_bytes();
        let start = (step * self.views + view) * fb;
        &self.images[start..start + fb]
    }

    pub fn state(&self, step: usize) -> &[f32] {
        &self.states[step * self.state_dim..(step + 1) * self.state_dim]
    }

    pub fn action(&self, step: usize) -> &[f32] {
        &self.actions[step * self.action_dim..(step + 1) * self.action_dim]
    }

    /// Internal consistency of the header dims against the payload lengths.
    pub fn validate(&self) -> Result<()> {
        if self.len == 0 {
            return Err(DataError::Invalid("T must be >= 1".into()));
        }
        if self.views == 0 || self.height == 0 || self.width == 0 {
            return Err(DataError::Invalid("views/H/W must be >= 1".into()));
        }
        let want_img = self.len * self.views * self.frame_bytes();
        if self.images.len() != want_img {
            return Err(DataError::Invalid(format!(
                "images block holds {} bytes, header implies {want_img}",
                self.images.len()
            )));
        }
        if self.states.len() != self.len * self.state_dim {
            return Err(DataError::Invalid("states block length mismatch".into()));
        }
        if self.actions.len() != self.len * self.action_dim {
            return Err(DataError::Invalid("actions block length mismatch".into()));
        }
        Ok(())
    }
}

/// In-memory D1 (pretrain) / D2 (fine-tune) split.
#[derive(Debug, Default)]
pub struct DatasetSplit {
    pub pretrain: Vec<Trajectory>,
    pub finetune: Vec<Trajectory>,
}

impl DatasetSplit {
    /// Load every trajectory named by the manifest in `dir`.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let manifest = read_manifest(&dir.join("manifest.json"))?;
        let mut split = DatasetSplit::default();
        for rel in &manifest.pretrain {
            split.pretrain.push(read_trajectory(&dir.join(rel))?);
        }
        for rel in &manifest.finetune {
            split.finetune.push(read_trajectory(&dir.join(rel))?);
        }
        Ok(split)
    }

    /// Keep floor(fraction * N) whole fine-tuning trajectories, picked by a
    /// seeded shuffle. Pretrain data is left untouched.
    pub fn subsample_finetune(&mut self, fraction: f64, seed: u64) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let keep = ((fraction * self.finetune.len() as f64).floor() as usize)
            .min(self.finetune.len());
        let mut order: Vec<usize> = (0..self.finetune.len()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        order.truncate(keep);
        order.sort_unstable();
        let mut kept = Vec::with_capacity(keep);
        for (i, traj) in std::mem::take(&mut self.finetune).into_iter().enumerate() {
            if order.binary_search(&i).is_ok() {
                kept.push(traj);
            }
        }
        self.finetune = kept;
    }
}

#[cfg(test)]
mod tests;
