//! Demonstration and visual-text data generators.
//!
//! Demonstrations roll the scripted expert closed-loop and optionally attach
//! a template reasoning phrase per step. Visual-text samples are balanced
//! question/answer pairs whose answers are computed from scene ground truth
//! by closed-form rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expert::{expert_action, EXPERT_STEP_BUDGET};
use super::scene::{
    quantize, render, step_env, Color, Scene, SceneObject, Shape, Vec2, ALL_COLORS,
    SPAWN_MIN_DIST,
};
use super::tasks::{cell_words, TaskKind};
use super::SimError;

/// One recorded environment step: observation before acting, the instruction
/// in force, optional reasoning text, and the expert action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    /// Quantized 32x32x3 image, row-major bytes.
    pub image: Vec<u8>,
    pub instruction: String,
    pub reasoning: Option<String>,
    pub action: [f64; 3],
}

/// One expert demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub task: String,
    pub seed: u64,
    pub steps: Vec<EpisodeStep>,
    /// Step count after which each sub-task was first satisfied.
    pub step_boundaries: Vec<usize>,
    pub success: Vec<bool>,
}

/// One visual question/answer pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VTSample {
    /// Quantized 32x32x3 image, row-major bytes.
    pub image: Vec<u8>,
    pub question: String,
    pub answer: String,
    pub category: VtCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VtCategory {
    Color,
    Count,
    Spatial,
    Existence,
}

pub const ALL_CATEGORIES: [VtCategory; 4] = [
    VtCategory::Color,
    VtCategory::Count,
    VtCategory::Spatial,
    VtCategory::Existence,
];

impl VtCategory {
    pub fn name(&self) -> &'static str {
        match self {
            VtCategory::Color => "color",
            VtCategory::Count => "count",
            VtCategory::Spatial => "spatial",
            VtCategory::Existence => "existence",
        }
    }

    pub fn from_name(name: &str) -> Option<VtCategory> {
        ALL_CATEGORIES.iter().copied().find(|c| c.name() == name)
    }
}

/// Reasoning phrase fields; `target_noun` is the receptacle word, or
/// "block" when the target is another block (stacking).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningFields {
    pub color: String,
    pub shape: String,
    pub row: String,
    pub col: String,
    pub target_noun: String,
    pub verb: String,
}

/// Fill the step reasoning template from the current scene.
pub fn reasoning_text(scene: &Scene, task: TaskKind, subtask: usize) -> String {
    let sub = task.subtasks()[subtask];
    let obj = &scene.objects[sub.focus_object(task)];
    let (row, col) = cell_words(obj.pos);
    format!(
        "the {} {} is at row {} col {} . the target is the {} . i will {} it .",
        obj.color.word(),
        obj.shape.word(),
        row,
        col,
        sub.target_noun(scene),
        sub.verb()
    )
}

/// Invert the reasoning template. Round-trips everything `reasoning_text`
/// produces; anything else is rejected.
pub fn parse_reasoning(text: &str) -> Result<ReasoningFields, SimError> {
    let words: Vec<&str> = text.split_whitespace().collect();
    // the C S is at row R col C . the target is the T . i will V it .
    let bad = || SimError::BadRecord(format!("unparseable reasoning: {text:?}"));
    if words.len() != 21 {
        return Err(bad());
    }
    let expect = |idx: usize, w: &str| -> Result<(), SimError> {
        if words[idx] == w {
            Ok(())
        } else {
            Err(bad())
        }
    };
    expect(0, "the")?;
    expect(3, "is")?;
    expect(4, "at")?;
    expect(5, "row")?;
    expect(7, "col")?;
    expect(9, ".")?;
    expect(10, "the")?;
    expect(11, "target")?;
    expect(12, "is")?;
    expect(13, "the")?;
    expect(15, ".")?;
    expect(16, "i")?;
    expect(17, "will")?;
    expect(19, "it")?;
    expect(20, ".")?;
    Ok(ReasoningFields {
        color: words[1].to_string(),
        shape: words[2].to_string(),
        row: words[6].to_string(),
        col: words[8].to_string(),
        target_noun: words[14].to_string(),
        verb: words[18].to_string(),
    })
}

fn episode_seed(rng_seed: u64, task_index: usize, episode: usize) -> u64 {
    rng_seed
        .wrapping_mul(0x100_0003)
        .wrapping_add((task_index as u64) << 32)
        .wrapping_add(episode as u64)
}

/// Roll the scripted expert on one task instance and record every step.
pub fn run_expert_episode(
    task: TaskKind,
    seed: u64,
    with_reasoning: bool,
) -> Result<Episode, SimError> {
    let mut scene = task.generate_scene(seed)?;
    let subtasks = task.subtasks();
    let mut steps = Vec::new();
    let mut boundaries = Vec::new();
    let mut success = Vec::new();

    for (k, sub) in subtasks.iter().enumerate() {
        let mut done = sub.done(&scene);
        for _ in 0..EXPERT_STEP_BUDGET {
            if done {
                break;
            }
            let action = expert_action(&scene, task, k);
            steps.push(EpisodeStep {
                image: quantize(&render(&scene)),
                instruction: task.instruction(&scene, k),
                reasoning: with_reasoning.then(|| reasoning_text(&scene, task, k)),
                action: [action.dx, action.dy, action.grip],
            });
            scene = step_env(&scene, action);
            done = sub.done(&scene);
        }
        if !done {
            return Err(SimError::ExpertFailed {
                task: task.name().to_string(),
                seed,
                subtask: k,
            });
        }
        boundaries.push(steps.len());
        success.push(true);
    }

    Ok(Episode {
        task: task.name().to_string(),
        seed,
        steps,
        step_boundaries: boundaries,
        success,
    })
}

/// Expert demonstrations for a set of tasks, `n_per_task` episodes each.
pub fn gen_demonstrations(
    tasks: &[TaskKind],
    n_per_task: usize,
    with_reasoning: bool,
    rng_seed: u64,
) -> Result<Vec<Episode>, SimError> {
    let mut out = Vec::with_capacity(tasks.len() * n_per_task);
    for (ti, task) in tasks.iter().enumerate() {
        for e in 0..n_per_task {
            out.push(run_expert_episode(
                *task,
                episode_seed(rng_seed, ti, e),
                with_reasoning,
            )?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Visual-text generation
// ---------------------------------------------------------------------------

fn digit_word(n: usize) -> &'static str {
    ["zero", "one", "two", "three"][n]
}

/// Scene of free-standing objects (no receptacles) for VQA rendering.
fn vt_scene(rng: &mut ChaCha8Rng, specs: &[(Shape, Color)]) -> Option<Scene> {
    let mut positions: Vec<Vec2> = Vec::with_capacity(specs.len());
    for _ in specs {
        let mut placed = false;
        for _ in 0..400 {
            let p = Vec2::new(rng.gen_range(0.08..0.92), rng.gen_range(0.08..0.92));
            if positions.iter().all(|q| q.dist(p) >= SPAWN_MIN_DIST) {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(Scene {
        objects: specs
            .iter()
            .zip(positions)
            .map(|(&(shape, color), pos)| SceneObject { shape, color, pos })
            .collect(),
        receptacles: vec![],
        gripper: super::scene::Gripper {
            pos: Vec2::new(0.02, 0.02),
            holding: None,
        },
        rng_seed: 0,
    })
}

fn random_distinct_pair(rng: &mut ChaCha8Rng, avoid: (Shape, Color)) -> (Shape, Color) {
    loop {
        let shape = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
        let color = ALL_COLORS[rng.gen_range(0..4)];
        if (shape, color) != avoid {
            return (shape, color);
        }
    }
}

/// Ground-truth answer rules, shared between generation and the
/// self-consistency oracle.
pub fn ground_truth_answer(scene: &Scene, category: VtCategory, question: &str) -> Option<String> {
    let words: Vec<&str> = question.split_whitespace().collect();
    match category {
        VtCategory::Color => {
            // what color is the <shape>
            let shape = *words.last()?;
            let matches: Vec<&SceneObject> = scene
                .objects
                .iter()
                .filter(|o| o.shape.word() == shape)
                .collect();
            match matches.as_slice() {
                [only] => Some(only.color.word().to_string()),
                _ => None,
            }
        }
        VtCategory::Count => {
            // how many <color> <shape>
            let (color, shape) = (*words.get(2)?, *words.get(3)?);
            let n = scene
                .objects
                .iter()
                .filter(|o| o.color.word() == color && o.shape.word() == shape)
                .count();
            (n <= 3).then(|| digit_word(n).to_string())
        }
        VtCategory::Spatial => {
            // the <color> <shape> is at
            let (color, shape) = (*words.get(1)?, *words.get(2)?);
            let matches: Vec<&SceneObject> = scene
                .objects
                .iter()
                .filter(|o| o.color.word() == color && o.shape.word() == shape)
                .collect();
            match matches.as_slice() {
                [only] => {
                    let (r, c) = cell_words(only.pos);
                    Some(format!("row {r} col {c}"))
                }
                _ => None,
            }
        }
        VtCategory::Existence => {
            // is there a <color> <shape>
            let (color, shape) = (*words.get(3)?, *words.get(4)?);
            let present = scene
                .objects
                .iter()
                .any(|o| o.color.word() == color && o.shape.word() == shape);
            Some(if present { "yes" } else { "no" }.to_string())
        }
    }
}

/// Generate one sample with its scene (scene exposed for oracle tests).
pub fn gen_vt_sample_with_scene(
    category: VtCategory,
    seed: u64,
) -> Result<(Scene, VTSample), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7A_0000 ^ seed.wrapping_mul(0x9E37_79B9));
    for _attempt in 0..50 {
        let built = build_vt(category, &mut rng);
        if let Some((scene, question)) = built {
            if let Some(answer) = ground_truth_answer(&scene, category, &question) {
                let sample = VTSample {
                    image: quantize(&render(&scene)),
                    question,
                    answer,
                    category,
                };
                return Ok((scene, sample));
            }
        }
    }
    Err(SimError::SpawnFailed {
        task: format!("vt_{}", category.name()),
        seed,
    })
}

fn build_vt(category: VtCategory, rng: &mut ChaCha8Rng) -> Option<(Scene, String)> {
    match category {
        VtCategory::Color => {
            let shape = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
            let color = ALL_COLORS[rng.gen_range(0..4)];
            let mut specs = vec![(shape, color)];
            for _ in 0..rng.gen_range(1..=3usize) {
                // distractors must not share the asked shape
                loop {
                    let s = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
                    if s != shape {
                        specs.push((s, ALL_COLORS[rng.gen_range(0..4)]));
                        break;
                    }
                }
            }
            let scene = vt_scene(rng, &specs)?;
            Some((scene, format!("what color is the {}", shape.word())))
        }
        VtCategory::Count => {
            let shape = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
            let color = ALL_COLORS[rng.gen_range(0..4)];
            let k = rng.gen_range(0..=3usize);
            let mut specs = vec![(shape, color); k];
            for _ in 0..rng.gen_range(1..=2usize) {
                specs.push(random_distinct_pair(rng, (shape, color)));
            }
            let scene = vt_scene(rng, &specs)?;
            Some((
                scene,
                format!("how many {} {}", color.word(), shape.word()),
            ))
        }
        VtCategory::Spatial => {
            let shape = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
            let color = ALL_COLORS[rng.gen_range(0..4)];
            let mut specs = vec![(shape, color)];
            for _ in 0..rng.gen_range(1..=3usize) {
                specs.push(random_distinct_pair(rng, (shape, color)));
            }
            let scene = vt_scene(rng, &specs)?;
            Some((
                scene,
                format!("the {} {} is at", color.word(), shape.word()),
            ))
        }
        VtCategory::Existence => {
            let shape = [Shape::Cube, Shape::Ball, Shape::Block][rng.gen_range(0..3)];
            let color = ALL_COLORS[rng.gen_range(0..4)];
            let present = rng.gen_bool(0.5);
            let mut specs = Vec::new();
            if present {
                specs.push((shape, color));
            }
            for _ in 0..rng.gen_range(1..=3usize) {
                specs.push(random_distinct_pair(rng, (shape, color)));
            }
            let scene = vt_scene(rng, &specs)?;
            Some((
                scene,
                format!("is there a {} {}", color.word(), shape.word()),
            ))
        }
    }
}

/// `n` visual-text samples, balanced across the four categories (within one).
pub fn gen_vt_samples(n: usize, rng_seed: u64) -> Result<Vec<VTSample>, SimError> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let category = ALL_CATEGORIES[i % 4];
        let seed = rng_seed.wrapping_mul(0x51_7CC1).wrapping_add(i as u64);
        let (_, sample) = gen_vt_sample_with_scene(category, seed)?;
        out.push(sample);
    }
    Ok(out)
}
