//! The policy network: input tokenizers, perceiver resampler, masked
//! multi-modal transformer backbone with foresight/action readouts, and the
//! image/action decoders.

mod config;
mod mask;
mod net;
mod vocab;


pub use config::ModelConfig;
pub use mask::{build_mask, AttentionMask, Group, TokenLayout};
pub use net::{
    decays, decode_actions, decode_image_patches, forward, init_params, is_encoder_param,
    patchify, prepare_batch, resample, sincos_2d, unpatchify, Latents, PreparedBatch,
};
pub use vocab::Vocab;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("unknown instruction word {0:?}")]
    UnknownWord(String),
    #[error("instruction has no words")]
    EmptyInstruction,
    #[error("window mode {window} does not match model mode {model}")]
    ModeMismatch {
        window: crate::data::Mode,
        model: crate::data::Mode,
    },
    #[error("window geometry {0} does not match the model config")]
    WindowMismatch(String),
    #[error("vocabulary has {words} words but the config allows {limit}")]
    VocabTooLarge { words: usize, limit: usize },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;
