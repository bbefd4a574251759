//! Architecture configuration and the three shipped presets.

use serde::{Deserialize, Serialize};

use crate::data::Mode;

use super::mask::TokenLayout;
use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: String,
    /// Backbone embedding width d.
    pub embed_dim: usize,
    pub backbone_layers: usize,
    pub backbone_heads: usize,
    /// Perceiver resampler: k latent tokens per view.
    pub resampler_latents: usize,
    pub resampler_layers: usize,
    pub resampler_heads: usize,
    pub resampler_dim: usize,
    pub image_decoder_layers: usize,
    pub image_decoder_heads: usize,
    pub image_decoder_dim: usize,
    pub img_size: usize,
    pub patch_size: usize,
    /// History length m.
    pub history: usize,
    /// Action chunk length n.
    pub chunk: usize,
    pub arm_dim: usize,
    pub state_dim: usize,
    pub vocab_size: usize,
    pub mode: Mode,
}

impl ModelConfig {
    /// Smallest config that exercises every pathway; used by the gradient
    /// checker.
    pub fn tiny() -> Self {
        ModelConfig {
            preset: "tiny".into(),
            embed_dim: 16,
            backbone_layers: 1,
            backbone_heads: 1,
            resampler_latents: 1,
            resampler_layers: 1,
            resampler_heads: 1,
            resampler_dim: 16,
            image_decoder_layers: 1,
            image_decoder_heads: 1,
            image_decoder_dim: 16,
            img_size: 8,
            patch_size: 4,
            history: 2,
            chunk: 3,
            arm_dim: 2,
            state_dim: 4,
            vocab_size: 32,
            mode: Mode::Finetune,
        }
    }

    /// Desk-scale experiment config.
    pub fn toy() -> Self {
        ModelConfig {
            preset: "toy".into(),
            embed_dim: 64,
            backbone_layers: 4,
            backbone_heads: 4,
            resampler_latents: 4,
            resampler_layers: 2,
            resampler_heads: 4,
            resampler_dim: 64,
            image_decoder_layers: 2,
            image_decoder_heads: 4,
            image_decoder_dim: 64,
            img_size: 32,
            patch_size: 8,
            history: 7,
            chunk: 3,
            arm_dim: 2,
            state_dim: 4,
            vocab_size: 32,
            mode: Mode::Finetune,
        }
    }

    /// Full-scale transformer sizes: backbone 384 wide, 24 layers, 12 heads;
    /// resampler 768/3/8; image decoder 384/2/16; 224x224 inputs with patch
    /// 16; history 7, chunk 3; 6-DOF arm plus a one-hot gripper.
    pub fn paper() -> Self {
        ModelConfig {
            preset: "paper".into(),
            embed_dim: 384,
            backbone_layers: 24,
            backbone_heads: 12,
            resampler_latents: 9,
            resampler_layers: 3,
            resampler_heads: 8,
            resampler_dim: 768,
            image_decoder_layers: 2,
            image_decoder_heads: 16,
            image_decoder_dim: 384,
            img_size: 224,
            patch_size: 16,
            history: 7,
            chunk: 3,
            arm_dim: 6,
            state_dim: 8,
            vocab_size: 32,
            mode: Mode::Finetune,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "toy" => Some(Self::toy()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.embed_dim == 0 || self.embed_dim % self.backbone_heads != 0 {
            problems.push("embed dim must be a positive multiple of backbone heads");
        }
        if self.embed_dim % 2 != 0 {
            problems.push("embed dim must be even (state tokenizer splits it)");
        }
        if self.resampler_dim % self.resampler_heads != 0 {
            problems.push("resampler dim must be a multiple of resampler heads");
        }
        if self.image_decoder_dim % self.image_decoder_heads != 0 {
            problems.push("image decoder dim must be a multiple of its heads");
        }
        if self.image_decoder_dim % 4 != 0 {
            problems.push("image decoder dim must be a multiple of 4 (2D sin-cos)");
        }
        if self.patch_size == 0 || self.img_size % self.patch_size != 0 {
            problems.push("patch size must divide the image side");
        }
        if self.history == 0 || self.chunk == 0 {
            problems.push("history and chunk lengths must be >= 1");
        }
        if self.resampler_latents >= self.num_patches() {
            problems.push("resampler must compress: k < patch count");
        }
        if self.state_dim < 3 {
            problems.push("state dim must hold an arm state plus a one-hot gripper");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::BadConfig(problems.join("; ")))
        }
    }

    pub fn num_patches(&self) -> usize {
        let side = self.img_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            m: self.history,
            k: self.resampler_latents,
            n: self.chunk,
        }
    }

    /// Architecture fields that must match when loading a checkpoint for
    /// fine-tuning; mode and preset label are regime, not architecture.
    pub fn arch_fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("embed dim", self.embed_dim.to_string()),
            ("backbone layers", self.backbone_layers.to_string()),
            ("backbone heads", self.backbone_heads.to_string()),
            ("resampler latents", self.resampler_latents.to_string()),
            ("resampler layers", self.resampler_layers.to_string()),
            ("resampler heads", self.resampler_heads.to_string()),
            ("resampler dim", self.resampler_dim.to_string()),
            ("image decoder layers", self.image_decoder_layers.to_string()),
            ("image decoder heads", self.image_decoder_heads.to_string()),
            ("image decoder dim", self.image_decoder_dim.to_string()),
            ("image size", self.img_size.to_string()),
            ("patch size", self.patch_size.to_string()),
            ("history", self.history.to_string()),
            ("chunk", self.chunk.to_string()),
            ("arm dim", self.arm_dim.to_string()),
            ("state dim", self.state_dim.to_string()),
            ("vocab size", self.vocab_size.to_string()),
        ]
    }
}
