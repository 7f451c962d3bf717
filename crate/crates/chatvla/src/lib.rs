//! Desk-scale vision-language-action stack.
//!
//! The crate builds a complete, reproducible pipeline on a laptop CPU:
//!
//! - [`tensor`]: dense f64 tensors with reverse-mode automatic differentiation
//!   and a finite-difference verification oracle.
//! - [`model`]: a transformer backbone with shared self-attention and
//!   task-routed dual FFN experts, an autoregressive text head, and a
//!   diffusion action head.
//! - [`worldsim`]: a deterministic 2D tabletop world producing robot
//!   demonstrations (optionally with template reasoning), visual-text QA
//!   pairs, and scripted-expert rollouts.
//! - [`trainer`]: phased two-stage training (control first, then co-training
//!   at a configurable data ratio), Adam, losses, and checkpointing.
//! - [`evalbench`]: control and VQA scoring, the training-setting experiment
//!   matrix, and gradient-conflict diagnostics.
//! - [`cli`]: the operator surface behind the `chatvla` binary.
//!
//! Run `cargo run --example <name>` for focused, runnable walkthroughs of
//! each capability, or `cargo run --bin chatvla -- --help` for the CLI.

pub mod cli;
pub mod evalbench;
pub mod model;
pub mod tensor;
pub mod trainer;
pub mod worldsim;
