//! Training-window extraction: an m-step history slice ending at a focus
//! step, a goal (instruction or future robot state), and per-timestep
//! foresight / action-chunk targets with a validity mask.

use super::{DataError, Result, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Pretrain => write!(f, "pretrain"),
            Mode::Finetune => write!(f, "finetune"),
        }
    }
}

/// A sampled window. History arrays are front-padded by repeating step 0 when
/// the focus step is early in the episode; target slots at positions whose
/// targets would fall past the end of the trajectory are zeroed and masked
/// out via `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub mode: Mode,
    pub m: usize,
    pub n: usize,
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Absolute trajectory step of each window position.
    pub steps: Vec<usize>,
    /// Goal for fine-tuning windows.
    pub instruction: Option<String>,
    /// Goal for pretraining windows: the robot state at focus + n + 1.
    pub goal_state: Option<Vec<f32>>,
    /// u8 [m][views][H][W][3].
    pub hist_images: Vec<u8>,
    /// f32 [m][state_dim].
    pub hist_states: Vec<f32>,
    /// u8 [m][views][H][W][3]; the image n steps after each position.
    pub target_images: Vec<u8>,
    /// f32 [m][n][action_dim]; the action chunk starting at each position.
    pub target_actions: Vec<f32>,
    /// [m]; whether the position's targets lie inside the trajectory.
    pub valid: Vec<bool>,
}

impl TrainingWindow {
    pub fn frame_bytes(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn num_valid(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// History step index for window position `j` (0 = oldest, m-1 = focus).
fn history_step(t: usize, m: usize, j: usize) -> usize {
    (t + j + 1).saturating_sub(m)
}

pub fn sample_window(
    traj: &Trajectory,
    t: usize,
    m: usize,
    n: usize,
    mode: Mode,
) -> Result<TrainingWindow> {
    assert!(m >= 1 && n >= 1);
    let len = traj.len;
    let hi = match mode {
        Mode::Finetune => len.checked_sub(1 + n),
        Mode::Pretrain => len.checked_sub(2 + n),
    }
    .ok_or(DataError::WindowOutOfRange { t, lo: 0, hi: 0 })?;
    if t > hi {
        return Err(DataError::WindowOutOfRange { t, lo: 0, hi });
    }
    if mode == Mode::Finetune && traj.instruction.is_none() {
        return Err(DataError::MissingInstruction);
    }

    let fb = traj.frame_bytes();
    let frame_stride = traj.views * fb;
    let mut w = TrainingWindow {
        mode,
        m,
        n,
        views: traj.views,
        height: traj.height,
        width: traj.width,
        state_dim: traj.state_dim,
        action_dim: traj.action_dim,
        steps: Vec::with_capacity(m),
        instruction: match mode {
            Mode::Finetune => traj.instruction.clone(),
            Mode::Pretrain => None,
        },
        goal_state: match mode {
            Mode::Pretrain => Some(traj.state(t + n + 1).to_vec()),
            Mode::Finetune => None,
        },
        hist_images: vec![0; m * frame_stride],
        hist_states: vec![0.0; m * traj.state_dim],
        target_images: vec![0; m * frame_stride],
        target_actions: vec![0.0; m * n * traj.action_dim],
        valid: vec![false; m],
    };

    for j in 0..m {
        let step = history_step(t, m, j);
        w.steps.push(step);
        w.hist_images[j * frame_stride..(j + 1) * frame_stride]
            .copy_from_slice(&traj.images[step * frame_stride..(step + 1) * frame_stride]);
        w.hist_states[j * traj.state_dim..(j + 1) * traj.state_dim]
            .copy_from_slice(traj.state(step));
        let target_ok = match mode {
            Mode::Finetune => step + n <= len - 1,
            Mode::Pretrain => step + n + 1 <= len - 1,
        };
        if target_ok {
            w.valid[j] = true;
            let ti = step + n;
            w.target_images[j * frame_stride..(j + 1) * frame_stride]
                .copy_from_slice(&traj.images[ti * frame_stride..(ti + 1) * frame_stride]);
            for s in 0..n {
                let dst = (j * n + s) * traj.action_dim;
                w.target_actions[dst..dst + traj.action_dim]
                    .copy_from_slice(traj.action(step + s));
            }
        }
    }
    Ok(w)
}
