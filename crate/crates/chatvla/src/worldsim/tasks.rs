//! Task registry: eight tabletop tasks spanning pick-place, push, stack,
//! open/close, and sort skills, in both direct and planner-prompted variants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::scene::{
    cell_of, Color, Gripper, Receptacle, ReceptacleKind, Scene, SceneObject, Shape, Vec2,
    ALL_COLORS, SPAWN_MIN_DIST, STACK_TOL,
};
use super::vocab::hex;
use super::SimError;

/// The eight registered tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    PickPlaceBox,
    PickPlaceBasket,
    PushBlockBox,
    StackBlocks,
    SortToys,
    DrawerPlace,
    PlannerDrawer,
    PlannerTwoBlocks,
}

/// Instruction granularity: one instruction for the whole task, or one per
/// sub-task (standing in for a high-level planner).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prompting {
    Direct,
    Planner,
}

/// One sub-goal with its success predicate implied by the variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subtask {
    PlaceObject { obj: usize, rec: usize },
    PushObject { obj: usize, rec: usize },
    StackOn { top: usize, base: usize },
    OpenDrawer { rec: usize },
    CloseDrawer { rec: usize },
}

impl Subtask {
    /// Purely a function of the scene.
    pub fn done(&self, scene: &Scene) -> bool {
        match *self {
            Subtask::PlaceObject { obj, rec } | Subtask::PushObject { obj, rec } => {
                let held = scene.gripper.holding == Some(super::scene::Held::Object(obj));
                let r = &scene.receptacles[rec];
                !held && r.region.contains(scene.objects[obj].pos) && r.is_open()
            }
            Subtask::StackOn { top, base } => {
                let held = scene.gripper.holding == Some(super::scene::Held::Object(top));
                !held && scene.objects[top].pos.dist(scene.objects[base].pos) <= STACK_TOL
            }
            Subtask::OpenDrawer { rec } => scene.receptacles[rec].is_open(),
            Subtask::CloseDrawer { rec } => !scene.receptacles[rec].is_open(),
        }
    }

    /// Verb used in reasoning phrases.
    pub fn verb(&self) -> &'static str {
        match self {
            Subtask::PlaceObject { .. } => "place",
            Subtask::PushObject { .. } => "push",
            Subtask::StackOn { .. } => "stack",
            Subtask::OpenDrawer { .. } => "open",
            Subtask::CloseDrawer { .. } => "close",
        }
    }

    /// Object the sub-task is about, for reasoning phrases. Drawer sub-tasks
    /// describe the task's payload object instead (the drawer has no color).
    pub fn focus_object(&self, task: TaskKind) -> usize {
        match *self {
            Subtask::PlaceObject { obj, .. } | Subtask::PushObject { obj, .. } => obj,
            Subtask::StackOn { top, .. } => top,
            Subtask::OpenDrawer { .. } | Subtask::CloseDrawer { .. } => match task {
                TaskKind::PlannerDrawer => 1,
                _ => 0,
            },
        }
    }

    /// Target noun for reasoning phrases: the receptacle, or "block" when
    /// stacking onto another block.
    pub fn target_noun(&self, scene: &Scene) -> &'static str {
        match *self {
            Subtask::PlaceObject { rec, .. } | Subtask::PushObject { rec, .. } => {
                scene.receptacles[rec].kind.word()
            }
            Subtask::StackOn { .. } => "block",
            Subtask::OpenDrawer { .. } | Subtask::CloseDrawer { .. } => "drawer",
        }
    }
}

pub const ALL_TASKS: [TaskKind; 8] = [
    TaskKind::PickPlaceBox,
    TaskKind::PickPlaceBasket,
    TaskKind::PushBlockBox,
    TaskKind::StackBlocks,
    TaskKind::SortToys,
    TaskKind::DrawerPlace,
    TaskKind::PlannerDrawer,
    TaskKind::PlannerTwoBlocks,
];

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::PickPlaceBox => "pick_place_box",
            TaskKind::PickPlaceBasket => "pick_place_basket",
            TaskKind::PushBlockBox => "push_block_box",
            TaskKind::StackBlocks => "stack_blocks",
            TaskKind::SortToys => "sort_toys",
            TaskKind::DrawerPlace => "drawer_place",
            TaskKind::PlannerDrawer => "planner_drawer",
            TaskKind::PlannerTwoBlocks => "planner_two_blocks",
        }
    }

    pub fn from_name(name: &str) -> Result<TaskKind, SimError> {
        ALL_TASKS
            .iter()
            .copied()
            .find(|t| t.name() == name)
            .ok_or_else(|| SimError::UnknownTask(name.to_string()))
    }

    pub fn skill(&self) -> &'static str {
        match self {
            TaskKind::PickPlaceBox | TaskKind::PickPlaceBasket => "pick-place",
            TaskKind::PushBlockBox => "push",
            TaskKind::StackBlocks => "stack",
            TaskKind::SortToys => "sort",
            TaskKind::DrawerPlace => "open-close",
            TaskKind::PlannerDrawer => "open-close",
            TaskKind::PlannerTwoBlocks => "pick-place",
        }
    }

    pub fn prompting(&self) -> Prompting {
        match self {
            TaskKind::PlannerDrawer | TaskKind::PlannerTwoBlocks => Prompting::Planner,
            _ => Prompting::Direct,
        }
    }

    pub fn n_subtasks(&self) -> usize {
        self.subtasks().len()
    }

    pub fn subtasks(&self) -> Vec<Subtask> {
        match self {
            TaskKind::PickPlaceBox | TaskKind::PickPlaceBasket => {
                vec![Subtask::PlaceObject { obj: 0, rec: 0 }]
            }
            TaskKind::PushBlockBox => vec![Subtask::PushObject { obj: 0, rec: 0 }],
            TaskKind::StackBlocks => vec![
                Subtask::StackOn { top: 1, base: 0 },
                Subtask::StackOn { top: 2, base: 1 },
            ],
            TaskKind::SortToys => vec![
                Subtask::PlaceObject { obj: 0, rec: 0 },
                Subtask::PlaceObject { obj: 1, rec: 0 },
                Subtask::PlaceObject { obj: 2, rec: 1 },
                Subtask::PlaceObject { obj: 3, rec: 1 },
            ],
            TaskKind::DrawerPlace => vec![
                Subtask::OpenDrawer { rec: 0 },
                Subtask::PlaceObject { obj: 0, rec: 0 },
                Subtask::CloseDrawer { rec: 0 },
            ],
            TaskKind::PlannerDrawer => vec![
                Subtask::PlaceObject { obj: 0, rec: 0 },
                Subtask::OpenDrawer { rec: 1 },
                Subtask::PlaceObject { obj: 1, rec: 1 },
                Subtask::CloseDrawer { rec: 1 },
            ],
            TaskKind::PlannerTwoBlocks => vec![
                Subtask::PlaceObject { obj: 0, rec: 0 },
                Subtask::PlaceObject { obj: 1, rec: 0 },
            ],
        }
    }

    fn receptacles(&self) -> Vec<Receptacle> {
        match self {
            TaskKind::PickPlaceBox | TaskKind::PushBlockBox => {
                vec![Receptacle::fixed(ReceptacleKind::Box)]
            }
            TaskKind::PickPlaceBasket | TaskKind::PlannerTwoBlocks => {
                vec![Receptacle::fixed(ReceptacleKind::Basket)]
            }
            TaskKind::StackBlocks => vec![],
            TaskKind::SortToys => vec![
                Receptacle::fixed(ReceptacleKind::Box),
                Receptacle::fixed(ReceptacleKind::Basket),
            ],
            TaskKind::DrawerPlace => vec![Receptacle::fixed(ReceptacleKind::Drawer)],
            TaskKind::PlannerDrawer => vec![
                Receptacle::fixed(ReceptacleKind::Basket),
                Receptacle::fixed(ReceptacleKind::Drawer),
            ],
        }
    }

    /// Deterministic scene for (task, seed): fixed receptacles, randomized
    /// object colors/shapes/positions with spawn-separation guarantees.
    pub fn generate_scene(&self, rng_seed: u64) -> Result<Scene, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 ^ rng_seed.wrapping_mul(0x9E37_79B9));
        let receptacles = self.receptacles();

        let specs: Vec<(Shape, Color)> = match self {
            TaskKind::PickPlaceBox | TaskKind::PickPlaceBasket => {
                let target_shape = if rng.gen_bool(0.5) { Shape::Cube } else { Shape::Ball };
                let target_color = ALL_COLORS[rng.gen_range(0..4)];
                let d_shape = if target_shape == Shape::Cube { Shape::Ball } else { Shape::Cube };
                let d_color = ALL_COLORS[rng.gen_range(0..4)];
                vec![(target_shape, target_color), (d_shape, d_color)]
            }
            TaskKind::PushBlockBox => {
                vec![(Shape::Block, ALL_COLORS[rng.gen_range(0..4)])]
            }
            TaskKind::StackBlocks => vec![
                (Shape::Block, Color::Yellow),
                (Shape::Block, Color::Red),
                (Shape::Block, Color::Blue),
            ],
            TaskKind::SortToys => {
                let c = |rng: &mut ChaCha8Rng| ALL_COLORS[rng.gen_range(0..4)];
                vec![
                    (Shape::Ball, c(&mut rng)),
                    (Shape::Cube, c(&mut rng)),
                    (Shape::Block, c(&mut rng)),
                    (Shape::Block, c(&mut rng)),
                ]
            }
            TaskKind::DrawerPlace => {
                let shape = if rng.gen_bool(0.5) { Shape::Cube } else { Shape::Ball };
                vec![(shape, ALL_COLORS[rng.gen_range(0..4)])]
            }
            TaskKind::PlannerDrawer => {
                let toy_shape = if rng.gen_bool(0.5) { Shape::Cube } else { Shape::Ball };
                vec![
                    (Shape::Block, ALL_COLORS[rng.gen_range(0..4)]),
                    (toy_shape, ALL_COLORS[rng.gen_range(0..4)]),
                ]
            }
            TaskKind::PlannerTwoBlocks => {
                let c1 = rng.gen_range(0..4);
                let c2 = (c1 + 1 + rng.gen_range(0..3)) % 4;
                vec![(Shape::Block, ALL_COLORS[c1]), (Shape::Block, ALL_COLORS[c2])]
            }
        };

        let positions = spawn_positions(&mut rng, specs.len(), &receptacles)
            .ok_or(SimError::SpawnFailed {
                task: self.name().to_string(),
                seed: rng_seed,
            })?;
        let objects: Vec<SceneObject> = specs
            .into_iter()
            .zip(positions)
            .map(|((shape, color), pos)| SceneObject { shape, color, pos })
            .collect();

        let gripper_pos = spawn_point(&mut rng, &receptacles, &objects);
        Ok(Scene {
            objects,
            receptacles,
            gripper: Gripper {
                pos: gripper_pos,
                holding: None,
            },
            rng_seed,
        })
    }

    /// Instruction text for the current sub-task. Direct tasks repeat one
    /// instruction; planner tasks issue one per sub-task.
    pub fn instruction(&self, scene: &Scene, subtask: usize) -> String {
        let obj = |i: usize| {
            let o = &scene.objects[i];
            format!("{} {}", o.color.word(), o.shape.word())
        };
        match self {
            TaskKind::PickPlaceBox => format!("put the {} in the box", obj(0)),
            TaskKind::PickPlaceBasket => format!("put the {} in the basket", obj(0)),
            TaskKind::PushBlockBox => {
                format!("push the {} block to the box", scene.objects[0].color.word())
            }
            TaskKind::StackBlocks => "stack the blocks".to_string(),
            TaskKind::SortToys => "sort the toys".to_string(),
            TaskKind::DrawerPlace => "place the toy in the drawer".to_string(),
            TaskKind::PlannerDrawer => match subtask {
                0 => format!("move the {} block to the basket", scene.objects[0].color.word()),
                1 => "open the drawer".to_string(),
                2 => "put the toy in the drawer".to_string(),
                _ => "close the drawer".to_string(),
            },
            TaskKind::PlannerTwoBlocks => {
                let i = subtask.min(1);
                format!("move the {} block to the basket", scene.objects[i].color.word())
            }
        }
    }
}

/// Area where objects may spawn: away from walls, receptacle interiors, and
/// the drawer handle rail.
fn spawn_ok(p: Vec2, receptacles: &[Receptacle]) -> bool {
    if !(0.06..=0.94).contains(&p.x) || !(0.08..=0.60).contains(&p.y) {
        return false;
    }
    for rec in receptacles {
        if rec.region.inflate(0.07).contains(p) {
            return false;
        }
        if let Some(hp) = rec.handle_pos() {
            // keep clear of the whole handle travel range
            let far = Vec2::new(hp.x + super::scene::HANDLE_TRAVEL, hp.y);
            if p.dist(hp) < 0.12 || p.dist(far) < 0.12 {
                return false;
            }
        }
    }
    true
}

fn spawn_positions(
    rng: &mut ChaCha8Rng,
    count: usize,
    receptacles: &[Receptacle],
) -> Option<Vec<Vec2>> {
    let mut out: Vec<Vec2> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..400 {
            let p = Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if spawn_ok(p, receptacles) && out.iter().all(|q| q.dist(p) >= SPAWN_MIN_DIST) {
                out.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(out)
}

fn spawn_point(rng: &mut ChaCha8Rng, receptacles: &[Receptacle], objects: &[SceneObject]) -> Vec2 {
    for _ in 0..400 {
        let p = Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        if spawn_ok(p, receptacles) && objects.iter().all(|o| o.pos.dist(p) >= 0.1) {
            return p;
        }
    }
    Vec2::new(0.5, 0.45)
}

/// Stable hash over the registry (names, skills, sub-task counts); carried in
/// dataset headers so stale files are rejected.
pub fn task_registry_hash() -> String {
    let mut hasher = Sha256::new();
    for t in ALL_TASKS {
        hasher.update(format!("{}:{}:{}\n", t.name(), t.skill(), t.n_subtasks()).as_bytes());
    }
    hex(&hasher.finalize())
}

/// Cell words for reasoning and spatial answers: 3x3 grid, one-indexed.
pub fn cell_words(pos: Vec2) -> (&'static str, &'static str) {
    let digits = ["one", "two", "three"];
    let (row, col) = cell_of(pos);
    (digits[row], digits[col])
}
