//! Training losses: pixel-level foresight MSE, smooth-L1 arm loss plus
//! binary-cross-entropy gripper loss, and their weighted total.

use thiserror::Error;

use crate::tensor::{Graph, Scalar, Tensor, TensorError};

/// Gripper-loss weight inside the inverse-dynamics loss.
pub const LAMBDA_GRIPPER: f64 = 0.01;
/// Foresight weight inside the total loss.
pub const ALPHA_FORE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("no valid timesteps to average over")]
    NoValidTimesteps,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// Loss ablations (rows of the objective-ablation grid).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Ablation {
    /// Drop the foresight term entirely.
    pub no_fore: bool,
    /// Drop the inverse-dynamics term entirely.
    pub no_inv: bool,
    /// Keep both losses but sever the action-readout -> foresight-readout
    /// attention edges, reducing the model to decoupled prediction plus
    /// behavior cloning.
    pub detach_frs: bool,
}

impl Ablation {
    pub fn parse(name: &str) -> Option<Ablation> {
        match name {
            "no_fore" => Some(Ablation {
                no_fore: true,
                ..Default::default()
            }),
            "no_inv" => Some(Ablation {
                no_inv: true,
                ..Default::default()
            }),
            "detach_frs" => Some(Ablation {
                detach_frs: true,
                ..Default::default()
            }),
            _ => None,
        }
    }
}

/// Mean over valid rows, both views, and every pixel of squared prediction
/// error. `pred` and `target` are [rows, P, patch_dim] patch layouts with
/// pixel values scaled to [0, 1]; `valid_rows` selects rows to average.
pub fn loss_fore<E: Scalar>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    valid_rows: &[usize],
) -> Result<Tensor<E>> {
    if valid_rows.is_empty() {
        return Err(ObjectiveError::NoValidTimesteps);
    }
    let p = pred.gather(0, valid_rows)?;
    let t = target.gather(0, valid_rows)?;
    let diff = p.sub(&t)?;
    Ok(diff.mul(&diff)?.mean_all()?)
}

#[derive(Debug)]
pub struct InvLoss<E: Scalar> {
    pub l_arm: Tensor<E>,
    pub l_gripper: Tensor<E>,
    pub l_inv: Tensor<E>,
}

/// Smooth-L1 over valid (timestep, slot, arm dim) entries plus
/// lambda-weighted BCE over valid (timestep, slot) gripper entries.
/// `chunk` is [rows, n, arm_dim + 1] with the gripper probability last;
/// targets are [rows, n, arm_dim] and [rows, n, 1].
pub fn loss_inv<E: Scalar>(
    chunk: &Tensor<E>,
    target_arm: &Tensor<E>,
    target_grip: &Tensor<E>,
    valid_rows: &[usize],
) -> Result<InvLoss<E>> {
    if valid_rows.is_empty() {
        return Err(ObjectiveError::NoValidTimesteps);
    }
    let arm_dim = *target_arm.shape().last().unwrap();
    let pred = chunk.gather(0, valid_rows)?;
    let pred_arm = pred.slice(2, 0, arm_dim)?;
    let pred_grip = pred.slice(2, arm_dim, 1)?;
    let t_arm = target_arm.gather(0, valid_rows)?;
    let t_grip = target_grip.gather(0, valid_rows)?;
    let l_arm = pred_arm.smooth_l1(&t_arm)?.mean_all()?;
    let l_gripper = pred_grip.bce(&t_grip)?.mean_all()?;
    let l_inv = l_arm.add(&l_gripper.scale(LAMBDA_GRIPPER)?)?;
    Ok(InvLoss {
        l_arm,
        l_gripper,
        l_inv,
    })
}

/// Total loss: alpha * L_fore + L_inv, with either term droppable.
pub fn total_loss<E: Scalar>(
    g: &Graph<E>,
    l_fore: Option<&Tensor<E>>,
    l_inv: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let total = match (l_fore, l_inv) {
        (Some(f), Some(i)) => f.scale(ALPHA_FORE)?.add(i)?,
        (Some(f), None) => f.scale(ALPHA_FORE)?,
        (None, Some(i)) => i.clone(),
        (None, None) => g.scalar(E::zero()),
    };
    Ok(total)
}
