//! Scene state, kinematic physics, and the 32x32 rasterizer.

use serde::{Deserialize, Serialize};

/// Gripper travel per unit action.
pub const STEP_SIZE: f64 = 0.1;
/// Grasp reach of the gripper.
pub const GRASP_RADIUS: f64 = 0.08;
/// Contact radius at which an empty gripper shoves a block.
pub const PUSH_RADIUS: f64 = 0.05;
/// Handle travel between drawer closed and open.
pub const HANDLE_TRAVEL: f64 = 0.15;
/// Minimum center distance between spawned objects.
pub const SPAWN_MIN_DIST: f64 = 0.15;
/// Two stacked objects count as stacked within this distance.
pub const STACK_TOL: f64 = 0.05;

pub const IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Vec2 {
        Vec2 { x, y }
    }

    pub fn dist(&self, other: Vec2) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn clamp01(&self) -> Vec2 {
        Vec2::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Cube,
    Ball,
    Block,
}

impl Shape {
    pub fn word(&self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Ball => "ball",
            Shape::Block => "block",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

pub const ALL_COLORS: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

impl Color {
    pub fn word(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn rgb(&self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.15, 0.15],
            Color::Green => [0.15, 1.0, 0.15],
            Color::Blue => [0.2, 0.4, 1.0],
            Color::Yellow => [1.0, 1.0, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub pos: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReceptacleKind {
    Box,
    Basket,
    Drawer,
}

impl ReceptacleKind {
    pub fn word(&self) -> &'static str {
        match self {
            ReceptacleKind::Box => "box",
            ReceptacleKind::Basket => "basket",
            ReceptacleKind::Drawer => "drawer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect {
            min: Vec2::new(x0, y0),
            max: Vec2::new(x1, y1),
        }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }

    /// Rectangle grown by `m` on every side.
    pub fn inflate(&self, m: f64) -> Rect {
        Rect {
            min: Vec2::new(self.min.x - m, self.min.y - m),
            max: Vec2::new(self.max.x + m, self.max.y + m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawerState {
    /// Handle position along its travel, 0 = closed, 1 = open.
    pub handle_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Receptacle {
    pub kind: ReceptacleKind,
    pub region: Rect,
    pub drawer: Option<DrawerState>,
}

impl Receptacle {
    pub fn fixed(kind: ReceptacleKind) -> Receptacle {
        let (region, drawer) = match kind {
            ReceptacleKind::Box => (Rect::new(0.06, 0.70, 0.34, 0.94), None),
            ReceptacleKind::Basket => (Rect::new(0.66, 0.70, 0.94, 0.94), None),
            ReceptacleKind::Drawer => (
                Rect::new(0.45, 0.06, 0.70, 0.28),
                Some(DrawerState { handle_t: 0.0 }),
            ),
        };
        Receptacle {
            kind,
            region,
            drawer,
        }
    }

    pub fn is_open(&self) -> bool {
        match self.drawer {
            Some(d) => d.handle_t > 0.5,
            None => true, // boxes and baskets are always open
        }
    }

    /// World position of the drawer handle at its current travel.
    pub fn handle_pos(&self) -> Option<Vec2> {
        self.drawer.map(|d| {
            Vec2::new(
                self.region.max.x + 0.03 + d.handle_t * HANDLE_TRAVEL,
                self.region.center().y,
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Held {
    Object(usize),
    Handle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub pos: Vec2,
    pub holding: Option<Held>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub receptacles: Vec<Receptacle>,
    pub gripper: Gripper,
    pub rng_seed: u64,
}

/// One environment action: planar motion plus a grip channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub dx: f64,
    pub dy: f64,
    pub grip: f64,
}

impl Action {
    pub const NOOP: Action = Action {
        dx: 0.0,
        dy: 0.0,
        grip: 0.0,
    };

    pub fn new(dx: f64, dy: f64, grip: f64) -> Action {
        Action { dx, dy, grip }
    }

    fn sanitized(&self) -> Action {
        let fix = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Action {
            dx: fix(self.dx),
            dy: fix(self.dy),
            grip: fix(self.grip),
        }
    }
}

/// Advance the world by one action. Pure function of (scene, action):
/// the gripper moves by `STEP_SIZE * (dx, dy)` clipped to the unit square, a
/// held object tracks the gripper, a held drawer handle follows its rail,
/// an empty moving gripper shoves blocks it lands on, and `grip > 0.5`
/// toggles grasp/release of the nearest grabbable within reach.
pub fn step_env(scene: &Scene, action: Action) -> Scene {
    let action = action.sanitized();
    let mut next = scene.clone();

    let delta = Vec2::new(action.dx * STEP_SIZE, action.dy * STEP_SIZE);
    let new_pos = Vec2::new(next.gripper.pos.x + delta.x, next.gripper.pos.y + delta.y).clamp01();
    next.gripper.pos = new_pos;

    match next.gripper.holding {
        Some(Held::Object(i)) => {
            next.objects[i].pos = new_pos;
        }
        Some(Held::Handle(r)) => {
            let rec = &mut next.receptacles[r];
            if let Some(drawer) = rec.drawer.as_mut() {
                let x0 = rec.region.max.x + 0.03;
                drawer.handle_t = ((new_pos.x - x0) / HANDLE_TRAVEL).clamp(0.0, 1.0);
            }
        }
        None => {
            // kinematic push: blocks in contact get displaced along the
            // motion direction, staying one contact radius ahead
            let norm = (delta.x * delta.x + delta.y * delta.y).sqrt();
            if norm > 1e-12 {
                let dir = Vec2::new(delta.x / norm, delta.y / norm);
                for obj in next.objects.iter_mut() {
                    if obj.shape == Shape::Block && new_pos.dist(obj.pos) < PUSH_RADIUS {
                        obj.pos = Vec2::new(
                            new_pos.x + dir.x * PUSH_RADIUS,
                            new_pos.y + dir.y * PUSH_RADIUS,
                        )
                        .clamp01();
                    }
                }
            }
        }
    }

    if action.grip > 0.5 {
        match next.gripper.holding {
            Some(_) => next.gripper.holding = None,
            None => next.gripper.holding = nearest_grabbable(&next, new_pos),
        }
    }

    next
}

fn nearest_grabbable(scene: &Scene, pos: Vec2) -> Option<Held> {
    let mut best: Option<(f64, Held)> = None;
    for (i, obj) in scene.objects.iter().enumerate() {
        let d = pos.dist(obj.pos);
        if d <= GRASP_RADIUS && best.map(|(bd, _)| d < bd).unwrap_or(true) {
            best = Some((d, Held::Object(i)));
        }
    }
    for (r, rec) in scene.receptacles.iter().enumerate() {
        if let Some(hp) = rec.handle_pos() {
            let d = pos.dist(hp);
            if d <= GRASP_RADIUS && best.map(|(bd, _)| d < bd).unwrap_or(true) {
                best = Some((d, Held::Handle(r)));
            }
        }
    }
    best.map(|(_, h)| h)
}

/// 3x3 grid cell of a position: (row, col), each in 0..3.
pub fn cell_of(pos: Vec2) -> (usize, usize) {
    let row = ((pos.y * 3.0).floor() as usize).min(2);
    let col = ((pos.x * 3.0).floor() as usize).min(2);
    (row, col)
}

// ---------------------------------------------------------------------------
// Rasterizer
// ---------------------------------------------------------------------------

fn to_px(v: f64) -> i64 {
    (v * (IMAGE_SIDE - 1) as f64).round() as i64
}

fn put(img: &mut [f64], x: i64, y: i64, rgb: [f64; 3]) {
    if (0..IMAGE_SIDE as i64).contains(&x) && (0..IMAGE_SIDE as i64).contains(&y) {
        let base = (y as usize * IMAGE_SIDE + x as usize) * 3;
        img[base] = rgb[0];
        img[base + 1] = rgb[1];
        img[base + 2] = rgb[2];
    }
}

/// Pixels covered by an object's glyph: cubes are 3x3 squares, balls are
/// diamonds, blocks are wide 2x4 rectangles.
pub fn object_pixels(obj: &SceneObject) -> Vec<(i64, i64)> {
    let cx = to_px(obj.pos.x);
    let cy = to_px(obj.pos.y);
    let mut px = Vec::new();
    match obj.shape {
        Shape::Cube => {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    px.push((cx + dx, cy + dy));
                }
            }
        }
        Shape::Ball => {
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    if dx.abs() + dy.abs() <= 2 {
                        px.push((cx + dx, cy + dy));
                    }
                }
            }
        }
        Shape::Block => {
            for dy in 0..=1 {
                for dx in -2i64..=1 {
                    px.push((cx + dx, cy + dy));
                }
            }
        }
    }
    px
}

/// Deterministic rasterization of a scene into a 32x32 RGB image with values
/// in [0, 1]. Draw order: receptacles, objects (list order), gripper last.
pub fn render(scene: &Scene) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE * 3];

    for rec in &scene.receptacles {
        let (x0, y0) = (to_px(rec.region.min.x), to_px(rec.region.min.y));
        let (x1, y1) = (to_px(rec.region.max.x), to_px(rec.region.max.y));
        let border = match rec.kind {
            ReceptacleKind::Box => [0.75, 0.75, 0.75],
            ReceptacleKind::Basket => [0.6, 0.4, 0.15],
            ReceptacleKind::Drawer => [0.45, 0.45, 0.6],
        };
        // interior fill of a drawer shows its open/closed state
        if rec.kind == ReceptacleKind::Drawer {
            let fill = if rec.is_open() { 0.3 } else { 0.08 };
            for y in y0 + 1..y1 {
                for x in x0 + 1..x1 {
                    put(&mut img, x, y, [fill, fill, fill]);
                }
            }
        }
        for x in x0..=x1 {
            put(&mut img, x, y0, border);
            put(&mut img, x, y1, border);
        }
        for y in y0..=y1 {
            put(&mut img, x0, y, border);
            put(&mut img, x1, y, border);
        }
        if let Some(hp) = rec.handle_pos() {
            let (hx, hy) = (to_px(hp.x), to_px(hp.y));
            for dy in 0..=1 {
                for dx in 0..=1 {
                    put(&mut img, hx + dx, hy + dy, [0.95, 0.95, 0.95]);
                }
            }
        }
    }

    for obj in &scene.objects {
        let rgb = obj.color.rgb();
        for (x, y) in object_pixels(obj) {
            put(&mut img, x, y, rgb);
        }
    }

    let gx = to_px(scene.gripper.pos.x);
    let gy = to_px(scene.gripper.pos.y);
    let gcol = [1.0, 0.1, 1.0];
    for d in -2i64..=2 {
        put(&mut img, gx + d, gy, gcol);
        put(&mut img, gx, gy + d, gcol);
    }

    img
}

/// Quantize a rendered image to bytes (the in-memory dataset format).
pub fn quantize(img: &[f64]) -> Vec<u8> {
    img.iter().map(|v| (v * 255.0).round() as u8).collect()
}

/// Bytes back to floats in [0, 1].
pub fn dequantize(img: &[u8]) -> Vec<f64> {
    img.iter().map(|&b| b as f64 / 255.0).collect()
}

/// Split a row-major `side x side x 3` image into row-major
/// `[n_patches, patch_size^2 * 3]` values for the patch embedding.
pub fn image_to_patches(img: &[f64], side: usize, patch: usize) -> Vec<f64> {
    let per_side = side / patch;
    let mut out = Vec::with_capacity(per_side * per_side * patch * patch * 3);
    for py in 0..per_side {
        for px in 0..per_side {
            for y in 0..patch {
                for x in 0..patch {
                    let gy = py * patch + y;
                    let gx = px * patch + x;
                    let base = (gy * side + gx) * 3;
                    out.extend_from_slice(&img[base..base + 3]);
                }
            }
        }
    }
    out
}
