//! Model hyperparameters and the expert layout switch.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Network dimensions. Defaults are the desk-scale configuration used by the
/// whole pipeline; everything fits on a laptop CPU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    pub patch_size: usize,
    pub image_side: usize,
    pub action_dim: usize,
    pub action_chunk_len: usize,
    pub diffusion_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 4,
            d_ff: 128,
            vocab_size: 64,
            max_seq: 48,
            patch_size: 8,
            image_side: 32,
            action_dim: 3,
            action_chunk_len: 4,
            diffusion_steps: 10,
        }
    }
}

impl ModelConfig {
    /// Small dimensions for gradient checks and fast unit tests.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            d_ff: 16,
            vocab_size: 16,
            max_seq: 12,
            patch_size: 8,
            image_side: 32,
            action_dim: 3,
            action_chunk_len: 4,
            diffusion_steps: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        // n_layers may be zero (an empty composition leaves the final
        // layer-norm as the whole backbone); every other field must be
        // positive.
        let fields = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
            ("patch_size", self.patch_size),
            ("image_side", self.image_side),
            ("action_dim", self.action_dim),
            ("action_chunk_len", self.action_chunk_len),
            ("diffusion_steps", self.diffusion_steps),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.image_side % self.patch_size != 0 {
            return Err(ModelError::BadConfig(format!(
                "image_side {} not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        Ok(())
    }

    /// Patches per image (the image token count).
    pub fn n_patches(&self) -> usize {
        let per_side = self.image_side / self.patch_size;
        per_side * per_side
    }

    /// Raw values per patch (pixels x 3 channels).
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    /// Flattened action-chunk length.
    pub fn chunk_numel(&self) -> usize {
        self.action_chunk_len * self.action_dim
    }
}

/// Expert arrangement of the FFN sublayer.
///
/// `Moe` is the dual-router architecture: one understanding expert plus
/// `control_experts` control experts, selected per sequence by the task tag.
/// `Dense` is the co-training baseline: a single shared FFN, widened to
/// `2 * d_ff` so total parameter count matches the two-expert layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpertLayout {
    Moe { control_experts: usize },
    Dense,
}

impl Default for ExpertLayout {
    fn default() -> Self {
        ExpertLayout::Moe { control_experts: 1 }
    }
}

impl ExpertLayout {
    pub fn ffn_hidden(&self, d_ff: usize) -> usize {
        match self {
            ExpertLayout::Moe { .. } => d_ff,
            ExpertLayout::Dense => 2 * d_ff,
        }
    }

    pub fn control_experts(&self) -> usize {
        match self {
            ExpertLayout::Moe { control_experts } => *control_experts,
            ExpertLayout::Dense => 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let ExpertLayout::Moe { control_experts } = self {
            if *control_experts == 0 {
                return Err(ModelError::BadConfig(
                    "control_experts must be at least 1".into(),
                ));
            }
        }
        Ok(())
    }
}
