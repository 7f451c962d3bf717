//! Task tags, per-sequence routing decisions, and tokenized model inputs.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// System prompt selecting the understanding path.
pub const PROMPT_UNDERSTANDING: &str = "Answer based on question";
/// System prompt selecting the control path.
pub const PROMPT_CONTROL: &str = "Predict robot action";

/// Which task a sequence belongs to. Derived only from the system prompt;
/// any other prompt is rejected at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskTag {
    Understanding,
    Control,
}

impl TaskTag {
    pub fn from_system_prompt(prompt: &str) -> Result<TaskTag, ModelError> {
        match prompt {
            PROMPT_UNDERSTANDING => Ok(TaskTag::Understanding),
            PROMPT_CONTROL => Ok(TaskTag::Control),
            other => Err(ModelError::UnknownSystemPrompt(other.to_string())),
        }
    }

    pub fn system_prompt(&self) -> &'static str {
        match self {
            TaskTag::Understanding => PROMPT_UNDERSTANDING,
            TaskTag::Control => PROMPT_CONTROL,
        }
    }
}

/// Expert index chosen for one whole sequence.
///
/// `m = 0` is the understanding expert; `1..=control_experts` are control
/// experts. Routing is static: every token in a sequence shares the same `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouterDecision {
    pub m: usize,
    pub control_experts: usize,
}

impl RouterDecision {
    /// Route a tag. With more than one control expert (an extension, off by
    /// default) the index is drawn uniformly from the provided seed.
    pub fn for_tag(tag: TaskTag, control_experts: usize, route_seed: u64) -> RouterDecision {
        let m = match tag {
            TaskTag::Understanding => 0,
            TaskTag::Control => {
                if control_experts <= 1 {
                    1
                } else {
                    use rand::{Rng, SeedableRng};
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(route_seed);
                    1 + rng.gen_range(0..control_experts)
                }
            }
        };
        RouterDecision {
            m,
            control_experts,
        }
    }

    pub fn validate(&self, tag: TaskTag) -> Result<(), ModelError> {
        let ok = match tag {
            TaskTag::Understanding => self.m == 0,
            TaskTag::Control => self.m >= 1 && self.m <= self.control_experts,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadRouterDecision {
                m: self.m,
                control_experts: self.control_experts,
            })
        }
    }
}

/// Model input: system-prompt tokens, optional image patches, and text
/// tokens, in that order. Image patches are stored as a flattened
/// `[n_patches, patch_dim]` row-major matrix of values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TokenSequence {
    pub tag: TaskTag,
    pub sys: Vec<usize>,
    pub patches: Option<Vec<f64>>,
    pub text: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tag: TaskTag, sys: Vec<usize>, patches: Option<Vec<f64>>, text: Vec<usize>) -> Self {
        TokenSequence {
            tag,
            sys,
            patches,
            text,
        }
    }

    /// Total token count given the model's patch grid size.
    pub fn len(&self, n_patches: usize) -> usize {
        self.sys.len() + if self.patches.is_some() { n_patches } else { 0 } + self.text.len()
    }

    pub fn is_empty(&self, n_patches: usize) -> bool {
        self.len(n_patches) == 0
    }
}

/// Index layout of an embedded sequence; used for masking, loss spans, and
/// pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub sys_len: usize,
    pub image_len: usize,
    pub text_len: usize,
}

impl SeqLayout {
    pub fn total(&self) -> usize {
        self.sys_len + self.image_len + self.text_len
    }

    /// First text position in the full sequence.
    pub fn text_start(&self) -> usize {
        self.sys_len + self.image_len
    }

    /// End of the bidirectional prefix (system prompt + image patches).
    pub fn prefix_end(&self) -> usize {
        self.sys_len + self.image_len
    }
}
