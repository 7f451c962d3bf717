//! Deterministic 2D tabletop world.
//!
//! Provides all three training-data regimes — expert demonstrations, the
//! same demonstrations with template reasoning, and visual-text QA pairs —
//! plus the scripted expert used as the evaluation ceiling. Scenes are value
//! types; every generator and rollout is a pure function of its seed.

pub mod datagen;
pub mod dataset_io;
pub mod expert;
pub mod scene;
pub mod tasks;
pub mod vocab;

pub use datagen::{
    gen_demonstrations, gen_vt_samples, parse_reasoning, reasoning_text, Episode, EpisodeStep,
    VTSample, VtCategory,
};
pub use dataset_io::{
    load_demonstrations, load_vt_samples, save_demonstrations, save_vt_samples, ImageEncoding,
};
pub use expert::{expert_action, EXPERT_STEP_BUDGET};
pub use scene::{
    cell_of, dequantize, image_to_patches, quantize, render, step_env, Action, Color, Gripper,
    Held, Receptacle, ReceptacleKind, Rect, Scene, SceneObject, Shape, Vec2, GRASP_RADIUS,
    IMAGE_SIDE, PUSH_RADIUS, SPAWN_MIN_DIST, STACK_TOL, STEP_SIZE,
};
pub use tasks::{task_registry_hash, Prompting, Subtask, TaskKind, ALL_TASKS};
pub use vocab::{vocab, Vocab, EOS, PAD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("out-of-vocabulary words: {0:?}")]
    UnknownWords(Vec<String>),
    #[error("scripted expert failed on task {task} seed {seed} sub-task {subtask}")]
    ExpertFailed {
        task: String,
        seed: u64,
        subtask: usize,
    },
    #[error("could not place objects for {task} with seed {seed}")]
    SpawnFailed { task: String, seed: u64 },
    #[error("{field} mismatch: file has {got}, this build expects {expected}")]
    HashMismatch {
        field: &'static str,
        expected: String,
        got: String,
    },
    #[error("bad dataset header: {0}")]
    BadHeader(String),
    #[error("bad dataset record: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests;
