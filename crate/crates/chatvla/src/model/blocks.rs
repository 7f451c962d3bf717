//! Transformer block weights and the two sublayers.
//!
//! Blocks are pre-norm residual: `x' = MHA(LN(x)) + x` followed by
//! `x = x' + FFN_m(LN(x'))`, where `m` is the per-sequence routing decision.
//! The attention path has no tag input at all, which is what makes it shared
//! between tasks by construction.

use rand_chacha::ChaCha8Rng;

use crate::tensor::{randn_param, Tensor, TensorError};

use super::sequence::RouterDecision;
use super::ModelError;

pub(crate) const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
/// Additive mask value for disallowed attention edges. Large enough that the
/// post-softmax weight underflows to exactly zero in f64.
const MASK_NEG: f64 = -1e9;

/// One feed-forward expert: pre-norm, two linear layers with GELU between.
#[derive(Clone)]
pub struct FfnWeights {
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FfnWeights {
    pub fn init(d_model: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self, TensorError> {
        Ok(FfnWeights {
            ln_g: Tensor::param(&[d_model], vec![1.0; d_model])?,
            ln_b: Tensor::param(&[d_model], vec![0.0; d_model])?,
            w1: randn_param(&[d_model, hidden], INIT_STD, rng)?,
            b1: Tensor::param(&[hidden], vec![0.0; hidden])?,
            w2: randn_param(&[hidden, d_model], INIT_STD, rng)?,
            b2: Tensor::param(&[d_model], vec![0.0; d_model])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.layer_norm(&self.ln_g, &self.ln_b, LN_EPS)?
            .matmul(&self.w1)?
            .add_bias(&self.b1)?
            .gelu()?
            .matmul(&self.w2)?
            .add_bias(&self.b2)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.ln_g"), self.ln_g.clone()),
            (format!("{prefix}.ln_b"), self.ln_b.clone()),
            (format!("{prefix}.w1"), self.w1.clone()),
            (format!("{prefix}.b1"), self.b1.clone()),
            (format!("{prefix}.w2"), self.w2.clone()),
            (format!("{prefix}.b2"), self.b2.clone()),
        ]
    }
}

/// Shared multi-head self-attention weights.
#[derive(Clone)]
pub struct AttnWeights {
    pub ln_g: Tensor,
    pub ln_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttnWeights {
    pub fn init(d_model: usize, rng: &mut ChaCha8Rng) -> Result<Self, TensorError> {
        let proj = |rng: &mut ChaCha8Rng| randn_param(&[d_model, d_model], INIT_STD, rng);
        Ok(AttnWeights {
            ln_g: Tensor::param(&[d_model], vec![1.0; d_model])?,
            ln_b: Tensor::param(&[d_model], vec![0.0; d_model])?,
            wq: proj(rng)?,
            bq: Tensor::param(&[d_model], vec![0.0; d_model])?,
            wk: proj(rng)?,
            bk: Tensor::param(&[d_model], vec![0.0; d_model])?,
            wv: proj(rng)?,
            bv: Tensor::param(&[d_model], vec![0.0; d_model])?,
            wo: proj(rng)?,
            bo: Tensor::param(&[d_model], vec![0.0; d_model])?,
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.ln_g"), self.ln_g.clone()),
            (format!("{prefix}.ln_b"), self.ln_b.clone()),
            (format!("{prefix}.wq"), self.wq.clone()),
            (format!("{prefix}.bq"), self.bq.clone()),
            (format!("{prefix}.wk"), self.wk.clone()),
            (format!("{prefix}.bk"), self.bk.clone()),
            (format!("{prefix}.wv"), self.wv.clone()),
            (format!("{prefix}.bv"), self.bv.clone()),
            (format!("{prefix}.wo"), self.wo.clone()),
            (format!("{prefix}.bo"), self.bo.clone()),
        ]
    }
}

/// Expert bank of one block: either the dual-router pair or a single dense
/// FFN for the baseline.
#[derive(Clone)]
pub enum ExpertBank {
    Moe {
        vl: FfnWeights,
        robot: Vec<FfnWeights>,
    },
    Dense {
        shared: FfnWeights,
    },
}

impl ExpertBank {
    /// Expert for a routing decision. The selected expert is the only set of
    /// FFN parameters entering the forward graph.
    pub fn select(&self, decision: &RouterDecision) -> Result<&FfnWeights, ModelError> {
        match self {
            ExpertBank::Dense { shared } => Ok(shared),
            ExpertBank::Moe { vl, robot } => {
                if decision.m == 0 {
                    Ok(vl)
                } else if decision.m <= robot.len() {
                    Ok(&robot[decision.m - 1])
                } else {
                    Err(ModelError::BadRouterDecision {
                        m: decision.m,
                        control_experts: robot.len(),
                    })
                }
            }
        }
    }

    pub fn named(&self, block_prefix: &str) -> Vec<(String, Tensor)> {
        match self {
            ExpertBank::Moe { vl, robot } => {
                let mut out = vl.named(&format!("{block_prefix}.expert_vl"));
                for (m, e) in robot.iter().enumerate() {
                    out.extend(e.named(&format!("{block_prefix}.expert_robot{m}")));
                }
                out
            }
            ExpertBank::Dense { shared } => shared.named(&format!("{block_prefix}.expert_shared")),
        }
    }
}

/// All parameters of one transformer block.
#[derive(Clone)]
pub struct BlockWeights {
    pub attn: AttnWeights,
    pub experts: ExpertBank,
}

/// Attention mask over the sequence: the prefix (system prompt + image
/// patches) is bidirectional for image positions, text positions are causal.
pub fn build_mask(total: usize, image_start: usize, prefix_end: usize) -> Tensor {
    let mut data = vec![MASK_NEG; total * total];
    for i in 0..total {
        let in_image = i >= image_start && i < prefix_end;
        for j in 0..total {
            let allowed = j <= i || (in_image && j < prefix_end);
            if allowed {
                data[i * total + j] = 0.0;
            }
        }
    }
    Tensor::from_vec(&[total, total], data).expect("mask shape")
}

/// `x' = MHA(LN(x)) + x`. The mask is part of the input geometry, not the
/// task: there is no tag on this path.
pub fn attention_sublayer(
    x: &Tensor,
    w: &AttnWeights,
    n_heads: usize,
    mask: &Tensor,
) -> Result<Tensor, TensorError> {
    let d_model = x.shape()[1];
    let d_head = d_model / n_heads;
    let scale = 1.0 / (d_head as f64).sqrt();

    let h = x.layer_norm(&w.ln_g, &w.ln_b, LN_EPS)?;
    let q = h.matmul(&w.wq)?.add_bias(&w.bq)?;
    let k = h.matmul(&w.wk)?.add_bias(&w.bk)?;
    let v = h.matmul(&w.wv)?.add_bias(&w.bv)?;

    let mut heads = Vec::with_capacity(n_heads);
    for i in 0..n_heads {
        let qi = q.slice_cols(i * d_head, d_head)?;
        let ki = k.slice_cols(i * d_head, d_head)?;
        let vi = v.slice_cols(i * d_head, d_head)?;
        let scores = qi.matmul(&ki.transpose()?)?.scale(scale)?.add(mask)?;
        let probs = scores.softmax()?;
        heads.push(probs.matmul(&vi)?);
    }
    let ctx = Tensor::concat_cols(&heads)?;
    let out = ctx.matmul(&w.wo)?.add_bias(&w.bo)?;
    out.add(x)
}

/// `x = x' + FFN_m(LN(x'))` with exactly one expert in the graph.
pub fn moe_sublayer(
    x_prime: &Tensor,
    bank: &ExpertBank,
    decision: &RouterDecision,
) -> Result<Tensor, ModelError> {
    let expert = bank.select(decision)?;
    Ok(x_prime.add(&expert.forward(x_prime)?)?)
}
