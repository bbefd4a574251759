//! Seeded epoch shuffling over every valid (trajectory, focus step) pair.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Mode, Result, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub traj: usize,
    pub t: usize,
}

/// Enumerates valid windows once, then yields seeded shuffles of them in
/// batches. The final short batch of an epoch is emitted.
pub struct BatchIter {
    pairs: Vec<WindowRef>,
    batch_size: usize,
    seed: u64,
}

impl BatchIter {
    /// Trajectories shorter than n + 2 steps admit no window and are skipped.
    pub fn new(
        trajs: &[Trajectory],
        mode: Mode,
        n: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size < 1 {
            return Err(DataError::BadBatchSize);
        }
        let mut pairs = Vec::new();
        for (ti, traj) in trajs.iter().enumerate() {
            if traj.len < n + 2 {
                continue;
            }
            if mode == Mode::Finetune && traj.instruction.is_none() {
                return Err(DataError::MissingInstruction);
            }
            let hi = match mode {
                Mode::Finetune => traj.len - 1 - n,
                Mode::Pretrain => traj.len - 2 - n,
            };
            for t in 0..=hi {
                pairs.push(WindowRef { traj: ti, t });
            }
        }
        if pairs.is_empty() {
            return Err(DataError::EmptySplit(match mode {
                Mode::Pretrain => "pretrain",
                Mode::Finetune => "finetune",
            }));
        }
        Ok(BatchIter {
            pairs,
            batch_size,
            seed,
        })
    }

    pub fn windows_per_epoch(&self) -> usize {
        self.pairs.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch_size)
    }

    /// The batch sequence for one epoch; identical (seed, epoch) gives an
    /// identical sequence.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<WindowRef>> {
        let mut order = self.pairs.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size)
            .map(|c| c.to_vec())
            .collect()
    }
}
