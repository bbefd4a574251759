//! Predictive inverse dynamics policy for a toy tabletop world.
//!
//! The crate is organized around the training pipeline: [`tensor`] supplies a
//! differentiable array substrate, [`sim`] generates demonstrations and play
//! data, [`data`] persists and samples them, [`model`] is the multi-modal
//! transformer with foresight/action readouts, [`objective`] its losses,
//! [`train`] the optimization loop, and [`rollout`] closed-loop evaluation.

pub mod data;
pub mod model;
pub mod objective;
pub mod sim;
pub mod train;
pub mod tensor;
pub(crate) mod util;
