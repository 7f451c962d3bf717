//! The network: patch + token embedding, L transformer blocks with shared
//! self-attention and task-routed FFN experts, an autoregressive text head,
//! and a diffusion action head.

mod blocks;
mod config;
pub mod diffusion;
mod sequence;

pub use blocks::{
    attention_sublayer, build_mask, moe_sublayer, AttnWeights, BlockWeights, ExpertBank,
    FfnWeights,
};
pub use config::{ExpertLayout, ModelConfig};
pub use diffusion::{ActionChunk, DiffusionSchedule};
pub use sequence::{
    RouterDecision, SeqLayout, TaskTag, TokenSequence, PROMPT_CONTROL, PROMPT_UNDERSTANDING,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{randn_param, Tensor, TensorError};

use blocks::LN_EPS;

/// Width of the sinusoidal timestep embedding fed to the action head.
pub const TIME_EMB_DIM: usize = 16;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("unknown system prompt: {0:?}")]
    UnknownSystemPrompt(String),
    #[error("router decision m={m} out of range for {control_experts} control experts")]
    BadRouterDecision { m: usize, control_experts: usize },
    #[error("sequence length {len} exceeds max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },
    #[error("timestep {t} out of range for {steps} diffusion steps")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("{0} requires an Understanding-tagged sequence")]
    WrongTag(&'static str),
    #[error("patch grid mismatch: got {got} values, expected {expected}")]
    PatchMismatch { got: usize, expected: usize },
    #[error("checkpoint tensor {name}: expected shape {expected:?}, got {got:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
}

/// Diffusion denoiser head: a 2-layer MLP over
/// `[pooled features | timestep embedding | noisy chunk]`.
#[derive(Clone)]
pub struct ActionHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ActionHead {
    fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self, TensorError> {
        let in_dim = config.d_model + TIME_EMB_DIM + config.chunk_numel();
        let hidden = 4 * config.d_model;
        Ok(ActionHead {
            w1: randn_param(&[in_dim, hidden], INIT_STD, rng)?,
            b1: Tensor::param(&[hidden], vec![0.0; hidden])?,
            w2: randn_param(&[hidden, config.chunk_numel()], INIT_STD, rng)?,
            b2: Tensor::param(&[config.chunk_numel()], vec![0.0; config.chunk_numel()])?,
        })
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        vec![
            ("action_head.w1".into(), self.w1.clone()),
            ("action_head.b1".into(), self.b1.clone()),
            ("action_head.w2".into(), self.w2.clone()),
            ("action_head.b2".into(), self.b2.clone()),
        ]
    }
}

/// Result of greedy decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResult {
    /// Generated tokens, excluding the end-of-sequence token.
    pub tokens: Vec<usize>,
    /// Count of oldest text tokens dropped to stay within `max_seq`.
    pub truncated: usize,
}

pub struct Model {
    pub config: ModelConfig,
    pub layout: ExpertLayout,
    pub embed_token: Tensor,
    pub embed_pos: Tensor,
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub final_ln_g: Tensor,
    pub final_ln_b: Tensor,
    pub text_w: Tensor,
    pub text_b: Tensor,
    pub action_head: ActionHead,
    pub schedule: DiffusionSchedule,
}

impl Model {
    /// Deterministic Gaussian initialization from a seed.
    pub fn new(config: ModelConfig, layout: ExpertLayout, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        layout.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let hidden = layout.ffn_hidden(config.d_ff);

        let embed_token = randn_param(&[config.vocab_size, d], INIT_STD, &mut rng)?;
        let embed_pos = randn_param(&[config.max_seq, d], INIT_STD, &mut rng)?;
        let patch_w = randn_param(&[config.patch_dim(), d], INIT_STD, &mut rng)?;
        let patch_b = Tensor::param(&[d], vec![0.0; d])?;

        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let attn = AttnWeights::init(d, &mut rng)?;
            let experts = match layout {
                ExpertLayout::Moe { control_experts } => {
                    let vl = FfnWeights::init(d, hidden, &mut rng)?;
                    let robot = (0..control_experts)
                        .map(|_| FfnWeights::init(d, hidden, &mut rng))
                        .collect::<Result<Vec<_>, _>>()?;
                    ExpertBank::Moe { vl, robot }
                }
                ExpertLayout::Dense => ExpertBank::Dense {
                    shared: FfnWeights::init(d, hidden, &mut rng)?,
                },
            };
            blocks.push(BlockWeights { attn, experts });
        }

        let final_ln_g = Tensor::param(&[d], vec![1.0; d])?;
        let final_ln_b = Tensor::param(&[d], vec![0.0; d])?;
        let text_w = randn_param(&[d, config.vocab_size], INIT_STD, &mut rng)?;
        let text_b = Tensor::param(&[config.vocab_size], vec![0.0; config.vocab_size])?;
        let action_head = ActionHead::init(&config, &mut rng)?;
        let schedule = DiffusionSchedule::default_for(config.diffusion_steps);

        Ok(Model {
            config,
            layout,
            embed_token,
            embed_pos,
            patch_w,
            patch_b,
            blocks,
            final_ln_g,
            final_ln_b,
            text_w,
            text_b,
            action_head,
            schedule,
        })
    }

    /// All parameters in canonical name order.
    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("embed.token".to_string(), self.embed_token.clone()),
            ("embed.pos".to_string(), self.embed_pos.clone()),
            ("embed.patch_w".to_string(), self.patch_w.clone()),
            ("embed.patch_b".to_string(), self.patch_b.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.attn.named(&format!("block{i}.attn")));
            out.extend(b.experts.named(&format!("block{i}")));
        }
        out.push(("final_norm.g".into(), self.final_ln_g.clone()));
        out.push(("final_norm.b".into(), self.final_ln_b.clone()));
        out.push(("text_head.w".into(), self.text_w.clone()));
        out.push(("text_head.b".into(), self.text_b.clone()));
        out.extend(self.action_head.named());
        out
    }

    /// Embed a sequence into `[len, d_model]` plus its index layout.
    pub fn embed_sequence(&self, seq: &TokenSequence) -> Result<(Tensor, SeqLayout), ModelError> {
        let n_patches = self.config.n_patches();
        let layout = SeqLayout {
            sys_len: seq.sys.len(),
            image_len: if seq.patches.is_some() { n_patches } else { 0 },
            text_len: seq.text.len(),
        };
        let total = layout.total();
        if total == 0 {
            return Err(ModelError::BadConfig("empty sequence".into()));
        }
        if total > self.config.max_seq {
            return Err(ModelError::SequenceTooLong {
                len: total,
                max_seq: self.config.max_seq,
            });
        }

        let mut parts: Vec<Tensor> = Vec::new();
        if !seq.sys.is_empty() {
            parts.push(self.embed_token.embedding(&seq.sys)?);
        }
        if let Some(patches) = &seq.patches {
            let expected = n_patches * self.config.patch_dim();
            if patches.len() != expected {
                return Err(ModelError::PatchMismatch {
                    got: patches.len(),
                    expected,
                });
            }
            let grid = Tensor::from_vec(&[n_patches, self.config.patch_dim()], patches.clone())?;
            parts.push(grid.matmul(&self.patch_w)?.add_bias(&self.patch_b)?);
        }
        if !seq.text.is_empty() {
            parts.push(self.embed_token.embedding(&seq.text)?);
        }
        let tokens = Tensor::concat_rows(&parts)?;
        let positions: Vec<usize> = (0..total).collect();
        let pos = self.embed_pos.embedding(&positions)?;
        Ok((tokens.add(&pos)?, layout))
    }

    /// Backbone features `[len, d_model]`: L blocks of shared attention and
    /// tag-routed experts, then a final layer-norm.
    pub fn backbone_forward(&self, seq: &TokenSequence) -> Result<Tensor, ModelError> {
        self.backbone_forward_routed(seq, 0)
    }

    /// Backbone forward with an explicit routing seed; only relevant when
    /// the layout has more than one control expert.
    pub fn backbone_forward_routed(
        &self,
        seq: &TokenSequence,
        route_seed: u64,
    ) -> Result<Tensor, ModelError> {
        let decision = RouterDecision::for_tag(
            seq.tag,
            self.layout.control_experts().max(1),
            route_seed,
        );
        if matches!(self.layout, ExpertLayout::Moe { .. }) {
            decision.validate(seq.tag)?;
        }
        let (mut x, layout) = self.embed_sequence(seq)?;
        let mask = build_mask(layout.total(), layout.sys_len, layout.prefix_end());
        for block in &self.blocks {
            let x_prime = attention_sublayer(&x, &block.attn, self.config.n_heads, &mask)?;
            x = moe_sublayer(&x_prime, &block.experts, &decision)?;
        }
        Ok(x.layer_norm(&self.final_ln_g, &self.final_ln_b, LN_EPS)?)
    }

    /// Vocabulary logits `[len, vocab]` (no softmax; losses take logits).
    pub fn text_logits(&self, features: &Tensor) -> Result<Tensor, ModelError> {
        Ok(features.matmul(&self.text_w)?.add_bias(&self.text_b)?)
    }

    /// Greedy argmax decoding, one token at a time, stopping at `eos_id` or
    /// after `max_new` tokens. On context overflow the oldest text tokens are
    /// dropped (never system-prompt or image positions) and the drop count is
    /// reported.
    pub fn decode_text(
        &self,
        seq: &TokenSequence,
        max_new: usize,
        eos_id: usize,
    ) -> Result<DecodeResult, ModelError> {
        if seq.tag != TaskTag::Understanding {
            return Err(ModelError::WrongTag("decode_text"));
        }
        let mut work = seq.clone();
        let mut generated = Vec::new();
        let mut truncated = 0usize;
        let n_patches = self.config.n_patches();
        for _ in 0..max_new {
            while work.len(n_patches) >= self.config.max_seq && !work.text.is_empty() {
                work.text.remove(0);
                truncated += 1;
            }
            let features = self.backbone_forward(&work)?;
            let logits = self.text_logits(&features)?;
            let last = logits.slice_rows(logits.shape()[0] - 1, 1)?;
            let next = argmax(&last.data());
            if next == eos_id {
                break;
            }
            generated.push(next);
            work.text.push(next);
        }
        Ok(DecodeResult {
            tokens: generated,
            truncated,
        })
    }

    /// Mean-pool features over sequence positions, optionally restricted to
    /// positions marked valid.
    pub fn pool_features(
        &self,
        features: &Tensor,
        valid: Option<&[bool]>,
    ) -> Result<Tensor, ModelError> {
        let rows = features.shape()[0];
        let weights = match valid {
            None => vec![1.0 / rows as f64; rows],
            Some(mask) => {
                debug_assert_eq!(mask.len(), rows);
                let count = mask.iter().filter(|&&b| b).count().max(1) as f64;
                mask.iter()
                    .map(|&b| if b { 1.0 / count } else { 0.0 })
                    .collect()
            }
        };
        let w = Tensor::from_vec(&[1, rows], weights)?;
        Ok(w.matmul(features)?)
    }

    /// Predict the noise added to a clean action chunk, conditioned on
    /// mean-pooled features and a sinusoidal timestep embedding.
    pub fn denoise_step(
        &self,
        features: &Tensor,
        noisy_chunk: &Tensor,
        timestep: usize,
    ) -> Result<Tensor, ModelError> {
        if timestep >= self.config.diffusion_steps {
            return Err(ModelError::TimestepOutOfRange {
                t: timestep,
                steps: self.config.diffusion_steps,
            });
        }
        let pooled = self.pool_features(features, None)?;
        let temb = Tensor::from_vec(
            &[1, TIME_EMB_DIM],
            diffusion::timestep_embedding(timestep, TIME_EMB_DIM),
        )?;
        // Precondition the noisy input so the target noise map has unit
        // slope at every timestep; without this the head would need slopes
        // of 1/sqrt(1 - alpha_bar_t), which small MLPs fit poorly.
        let c_in = 1.0 / (1.0 - self.schedule.alpha_bars[timestep]).sqrt();
        let flat = noisy_chunk
            .reshape(&[1, self.config.chunk_numel()])?
            .scale(c_in)?;
        let inp = Tensor::concat_cols(&[pooled, temb, flat])?;
        let h = inp
            .matmul(&self.action_head.w1)?
            .add_bias(&self.action_head.b1)?
            .gelu()?;
        let out = h
            .matmul(&self.action_head.w2)?
            .add_bias(&self.action_head.b2)?;
        Ok(out.reshape(&[self.config.action_chunk_len, self.config.action_dim])?)
    }

    /// Run the full reverse diffusion from unit Gaussian noise; deterministic
    /// for a given seed. Output is clipped to `[-1, 1]`.
    pub fn sample_action_chunk(
        &self,
        features: &Tensor,
        rng_seed: u64,
    ) -> Result<ActionChunk, ModelError> {
        let n = self.config.chunk_numel();
        let out = diffusion::ancestral_sample(&self.schedule, n, rng_seed, |x, t| {
            let noisy = Tensor::from_vec(
                &[self.config.action_chunk_len, self.config.action_dim],
                x.to_vec(),
            )?;
            let pred = self.denoise_step(features, &noisy, t).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => TensorError::InvalidShape {
                    op: "denoise_step",
                    shape: vec![],
                    reason: other.to_string(),
                },
            })?;
            Ok(pred.to_vec())
        })?;
        Ok(ActionChunk::clipped(
            self.config.action_chunk_len,
            self.config.action_dim,
            out,
        ))
    }
}

/// Index of the largest value; ties resolve to the lowest index, which keeps
/// greedy decoding deterministic.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
