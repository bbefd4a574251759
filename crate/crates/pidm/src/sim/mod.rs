//! Deterministic 2D tabletop world: planar end-effector, graspable blocks,
//! target pads, a pressable button, and a sliding drawer, with two rendered
//! camera views and a scripted expert.

mod datagen;
mod expert;
mod render;
mod tasks;

pub use datagen::{gen_demos, gen_play};
pub use expert::expert_action;
pub use render::{render, View, IMG_SIZE};
pub use tasks::{tasks_vocabulary, TaskFamily, TaskSpec, ALL_FAMILIES};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Largest end-effector displacement per tick.
pub const MAX_STEP: f32 = 0.05;
/// A closing gripper grabs a block (or the drawer handle) within this radius.
pub const GRASP_RADIUS: f32 = 0.04;
/// "on top of" predicate radius.
pub const ON_RADIUS: f32 = 0.05;
/// Episode cap used by demos and evaluation.
pub const EPISODE_CAP: usize = 120;
/// Gripper commands at or above this value close the gripper.
pub const GRIPPER_THRESHOLD: f32 = 0.5;
/// Drawer slide direction (unit) and travel length.
pub const DRAWER_AXIS: Vec2 = Vec2 { x: -1.0, y: 0.0 };
pub const DRAWER_TRAVEL: f32 = 0.2;

pub const ARM_DIM: usize = 2;
pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = ARM_DIM + 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("task {family}: required object missing from the world: {what}")]
    ObjectMissing {
        family: &'static str,
        what: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f32,
    pub y: f32,
}

impl Vec2 {
    pub fn new(x: f32, y: f32) -> Self {
        Vec2 { x, y }
    }

    pub fn dist(self, other: Vec2) -> f32 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn clamp01(self) -> Vec2 {
        Vec2 {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjKind {
    Block,
    Pad,
    Button,
    Drawer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub id: usize,
    pub kind: ObjKind,
    /// Blocks/pads/buttons: center. Drawer: current handle position.
    pub pos: Vec2,
    pub color: u8,
    /// Button only; latched once pressed.
    pub lit: bool,
    /// Drawer only; 0 closed, 1 fully open.
    pub fraction: f32,
}

impl Object {
    fn at(id: usize, kind: ObjKind, pos: Vec2, color: u8) -> Self {
        Object {
            id,
            kind,
            pos,
            color,
            lit: false,
            fraction: 0.0,
        }
    }

    /// Closed-position handle anchor of a drawer.
    pub fn drawer_base(&self) -> Vec2 {
        Vec2 {
            x: self.pos.x - DRAWER_AXIS.x * DRAWER_TRAVEL * self.fraction,
            y: self.pos.y - DRAWER_AXIS.y * DRAWER_TRAVEL * self.fraction,
        }
    }
}

/// Planar arm command in [-1, 1] per axis plus a gripper command in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub arm: [f32; ARM_DIM],
    pub gripper: f32,
}

impl Action {
    pub const NOOP_OPEN: Action = Action {
        arm: [0.0, 0.0],
        gripper: 0.0,
    };

    pub fn clamped(self) -> Action {
        Action {
            arm: [self.arm[0].clamp(-1.0, 1.0), self.arm[1].clamp(-1.0, 1.0)],
            gripper: self.gripper.clamp(0.0, 1.0),
        }
    }

    pub fn to_vec(self) -> Vec<f32> {
        vec![self.arm[0], self.arm[1], self.gripper]
    }

    pub fn from_slice(v: &[f32]) -> Action {
        Action {
            arm: [v[0], v[1]],
            gripper: v[2],
        }
        .clamped()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub ee: Vec2,
    pub gripper_closed: bool,
    pub held: Option<usize>,
    pub objects: Vec<Object>,
    pub step_count: u32,
}

impl SimState {
    pub fn object(&self, id: usize) -> &Object {
        &self.objects[id]
    }

    /// n-th object of a kind, in id order.
    pub fn nth(&self, kind: ObjKind, n: usize) -> Option<&Object> {
        self.objects.iter().filter(|o| o.kind == kind).nth(n)
    }

    /// Robot state vector: (x, y, one-hot gripper), length [`STATE_DIM`].
    pub fn state_vec(&self) -> Vec<f32> {
        let (open, closed) = if self.gripper_closed {
            (0.0, 1.0)
        } else {
            (1.0, 0.0)
        };
        vec![self.ee.x, self.ee.y, open, closed]
    }
}

/// One dynamics tick. Total: any finite action from a valid state yields a
/// valid state.
pub fn step(state: &SimState, action: &Action) -> SimState {
    let action = action.clamped();
    let mut s = state.clone();
    let delta = Vec2 {
        x: MAX_STEP * action.arm[0],
        y: MAX_STEP * action.arm[1],
    };

    // Move. A held drawer constrains the hand to the slide axis.
    let held_drawer = s
        .held
        .filter(|&id| s.objects[id].kind == ObjKind::Drawer);
    if let Some(id) = held_drawer {
        let along = delta.x * DRAWER_AXIS.x + delta.y * DRAWER_AXIS.y;
        let base = s.objects[id].drawer_base();
        let frac = (s.objects[id].fraction + along / DRAWER_TRAVEL).clamp(0.0, 1.0);
        let handle = Vec2 {
            x: base.x + DRAWER_AXIS.x * DRAWER_TRAVEL * frac,
            y: base.y + DRAWER_AXIS.y * DRAWER_TRAVEL * frac,
        };
        s.objects[id].fraction = frac;
        s.objects[id].pos = handle;
        s.ee = handle;
    } else {
        s.ee = Vec2 {
            x: s.ee.x + delta.x,
            y: s.ee.y + delta.y,
        }
        .clamp01();
        if let Some(id) = s.held {
            s.objects[id].pos = s.ee;
        }
    }

    // Gripper transition.
    let want_closed = action.gripper >= GRIPPER_THRESHOLD;
    let was_closed = s.gripper_closed;
    s.gripper_closed = want_closed;
    if !was_closed && want_closed {
        // Grasp: nearest block in radius wins; the drawer handle is a
        // fallback so a block sitting next to it stays grabbable.
        let mut best: Option<(usize, f32)> = None;
        for o in &s.objects {
            if o.kind != ObjKind::Block {
                continue;
            }
            let d = o.pos.dist(s.ee);
            if d <= GRASP_RADIUS && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((o.id, d));
            }
        }
        if best.is_none() {
            for o in &s.objects {
                if o.kind == ObjKind::Drawer && o.pos.dist(s.ee) <= GRASP_RADIUS {
                    best = Some((o.id, 0.0));
                    break;
                }
            }
        }
        if let Some((id, _)) = best {
            s.held = Some(id);
            if s.objects[id].kind == ObjKind::Block {
                s.objects[id].pos = s.ee;
            } else {
                s.ee = s.objects[id].pos;
            }
        }
    } else if was_closed && !want_closed {
        s.held = None;
    }

    // A closed gripper near the button presses it; the light latches.
    if s.gripper_closed {
        for o in s.objects.iter_mut() {
            if o.kind == ObjKind::Button && o.pos.dist(s.ee) <= GRASP_RADIUS {
                o.lit = true;
            }
        }
    }

    s.step_count += 1;
    s
}

fn sample_in(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> f32 {
    rng.gen_range(lo..hi)
}

fn place(rng: &mut ChaCha8Rng, region: [f32; 4]) -> Vec2 {
    Vec2 {
        x: sample_in(rng, region[0], region[1]),
        y: sample_in(rng, region[2], region[3]),
    }
}

/// Colors: block 0 red, block 1 blue, pad 0 green, pad 1 (zone) yellow.
const COLOR_RED: u8 = 0;
const COLOR_GREEN: u8 = 1;
const COLOR_BLUE: u8 = 2;
const COLOR_YELLOW: u8 = 3;

/// Seeded initial state for a task family: objects drawn inside
/// family-specific regions; identical (task, seed) gives an identical state.
pub fn reset(task: &TaskSpec, seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (task.family as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let mut objects = Vec::new();
    let mut add = |kind: ObjKind, pos: Vec2, color: u8| {
        let id = objects.len();
        objects.push(Object::at(id, kind, pos, color));
        id
    };
    const LEFT: [f32; 4] = [0.15, 0.45, 0.15, 0.85];
    const RIGHT: [f32; 4] = [0.55, 0.85, 0.15, 0.85];
    match task.family {
        TaskFamily::PickPlace => {
            add(ObjKind::Block, place(&mut rng, LEFT), COLOR_RED);
            add(ObjKind::Pad, place(&mut rng, RIGHT), COLOR_GREEN);
        }
        TaskFamily::Stack => {
            add(ObjKind::Block, place(&mut rng, RIGHT), COLOR_RED);
            add(ObjKind::Block, place(&mut rng, LEFT), COLOR_BLUE);
        }
        TaskFamily::PressButton => {
            add(ObjKind::Button, place(&mut rng, [0.3, 0.7, 0.3, 0.7]), COLOR_RED);
        }
        TaskFamily::OpenDrawer | TaskFamily::CloseDrawer => {
            let base = Vec2::new(0.85, sample_in(&mut rng, 0.3, 0.7));
            let id = add(ObjKind::Drawer, base, 0);
            let frac = if task.family == TaskFamily::OpenDrawer {
                sample_in(&mut rng, 0.0, 0.08)
            } else {
                sample_in(&mut rng, 0.92, 1.0)
            };
            objects[id].fraction = frac;
            objects[id].pos = Vec2 {
                x: base.x + DRAWER_AXIS.x * DRAWER_TRAVEL * frac,
                y: base.y + DRAWER_AXIS.y * DRAWER_TRAVEL * frac,
            };
        }
        TaskFamily::PushToZone => {
            add(ObjKind::Block, place(&mut rng, LEFT), COLOR_BLUE);
            add(ObjKind::Pad, place(&mut rng, RIGHT), COLOR_YELLOW);
        }
    }
    SimState {
        ee: place(&mut rng, [0.4, 0.6, 0.4, 0.6]),
        gripper_closed: false,
        held: None,
        objects,
        step_count: 0,
    }
}

/// World containing every object; used for five-task evaluation chains where
/// state persists across tasks.
pub fn reset_full_world(seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F00D);
    let mut objects = Vec::new();
    let mut add = |kind: ObjKind, pos: Vec2, color: u8| {
        let id = objects.len();
        objects.push(Object::at(id, kind, pos, color));
        id
    };
    add(ObjKind::Block, place(&mut rng, [0.1, 0.3, 0.1, 0.45]), COLOR_RED);
    add(ObjKind::Block, place(&mut rng, [0.1, 0.3, 0.55, 0.9]), COLOR_BLUE);
    add(ObjKind::Pad, place(&mut rng, [0.4, 0.6, 0.1, 0.35]), COLOR_GREEN);
    add(ObjKind::Pad, place(&mut rng, [0.4, 0.6, 0.65, 0.9]), COLOR_YELLOW);
    add(ObjKind::Button, place(&mut rng, [0.45, 0.6, 0.42, 0.58]), COLOR_RED);
    let base = Vec2::new(0.85, sample_in(&mut rng, 0.35, 0.65));
    let id = add(ObjKind::Drawer, base, 0);
    let frac = sample_in(&mut rng, 0.0, 0.08);
    objects[id].fraction = frac;
    objects[id].pos = Vec2 {
        x: base.x + DRAWER_AXIS.x * DRAWER_TRAVEL * frac,
        y: base.y + DRAWER_AXIS.y * DRAWER_TRAVEL * frac,
    };
    SimState {
        ee: place(&mut rng, [0.35, 0.55, 0.4, 0.6]),
        gripper_closed: false,
        held: None,
        objects,
        step_count: 0,
    }
}

#[cfg(test)]
mod tests;
