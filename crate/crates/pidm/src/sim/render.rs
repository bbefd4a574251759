//! Deterministic rasterizer for the two camera views.
//!
//! A pixel takes an object's color iff the pixel center lies inside the
//! object's shape; later painter entries overwrite earlier ones. The base
//! view maps the whole unit square to 32x32; the hand view maps a 0.25-side
//! window centered on the end effector (clamped fully inside the table).

use super::{ObjKind, SimState, Vec2, DRAWER_TRAVEL};

pub const IMG_SIZE: usize = 32;
const BACKGROUND: [u8; 3] = [40, 40, 40];

const BLOCK_HALF: f32 = 0.03;
const PAD_HALF: f32 = 0.06;
const BUTTON_RADIUS: f32 = 0.035;
const HANDLE_HALF: f32 = 0.02;
const CROSS_ARM: f32 = 0.035;
const CROSS_W: f32 = 0.009;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Base,
    Hand,
}

fn palette(color: u8) -> [u8; 3] {
    match color {
        0 => [200, 60, 60],    // red
        1 => [70, 190, 80],    // green
        2 => [70, 90, 220],    // blue
        3 => [220, 200, 70],   // yellow
        4 => [190, 70, 190],   // magenta
        5 => [70, 190, 190],   // cyan
        6 => [220, 220, 220],  // white
        _ => [230, 140, 50],   // orange
    }
}

fn in_square(p: Vec2, center: Vec2, half: f32) -> bool {
    (p.x - center.x).abs() <= half && (p.y - center.y).abs() <= half
}

fn in_circle(p: Vec2, center: Vec2, r: f32) -> bool {
    p.dist(center) <= r
}

fn in_cross(p: Vec2, center: Vec2) -> bool {
    let dx = (p.x - center.x).abs();
    let dy = (p.y - center.y).abs();
    (dx <= CROSS_W && dy <= CROSS_ARM) || (dy <= CROSS_W && dx <= CROSS_ARM)
}

/// Color at a world point, walking the painter order:
/// drawer, pads, button, blocks by id, held block, crosshair.
fn shade(state: &SimState, p: Vec2) -> [u8; 3] {
    let mut color = BACKGROUND;
    for o in &state.objects {
        if o.kind != ObjKind::Drawer {
            continue;
        }
        // Body: a gray box trailing the handle back to the closed anchor,
        // so the visible extent tracks the opening fraction.
        let base = o.drawer_base();
        let cx = (base.x + o.pos.x) * 0.5;
        let half_x = (base.x - o.pos.x).abs() * 0.5 + 0.02;
        if (p.x - cx).abs() <= half_x && (p.y - base.y).abs() <= 0.035 {
            color = [110, 110, 110];
        }
        if in_square(p, o.pos, HANDLE_HALF) {
            color = [200, 200, 200];
        }
        // Rail mark at full travel.
        let open_end = Vec2 {
            x: base.x + super::DRAWER_AXIS.x * DRAWER_TRAVEL,
            y: base.y + super::DRAWER_AXIS.y * DRAWER_TRAVEL,
        };
        if in_square(p, open_end, 0.008) {
            color = [80, 80, 80];
        }
    }
    for o in &state.objects {
        if o.kind == ObjKind::Pad && in_square(p, o.pos, PAD_HALF) {
            color = palette(o.color);
        }
    }
    for o in &state.objects {
        if o.kind == ObjKind::Button && in_circle(p, o.pos, BUTTON_RADIUS) {
            color = if o.lit { [250, 220, 80] } else { [120, 50, 50] };
        }
    }
    for o in &state.objects {
        if o.kind == ObjKind::Block && state.held != Some(o.id) && in_square(p, o.pos, BLOCK_HALF)
        {
            color = palette(o.color);
        }
    }
    if let Some(id) = state.held {
        let o = &state.objects[id];
        if o.kind == ObjKind::Block && in_square(p, o.pos, BLOCK_HALF) {
            color = palette(o.color);
        }
    }
    if in_cross(p, state.ee) {
        color = if state.gripper_closed {
            [255, 60, 60]
        } else {
            [255, 255, 255]
        };
    }
    color
}

/// Rasterize one view to IMG_SIZE x IMG_SIZE x 3 bytes, row-major.
pub fn render(state: &SimState, view: View) -> Vec<u8> {
    let (origin, scale) = match view {
        View::Base => (Vec2::new(0.0, 0.0), 1.0),
        View::Hand => {
            let half = 0.125;
            let c = Vec2 {
                x: state.ee.x.clamp(half, 1.0 - half),
                y: state.ee.y.clamp(half, 1.0 - half),
            };
            (Vec2::new(c.x - half, c.y - half), 0.25)
        }
    };
    let mut out = vec![0u8; IMG_SIZE * IMG_SIZE * 3];
    let px = scale / IMG_SIZE as f32;
    for r in 0..IMG_SIZE {
        let y = origin.y + (r as f32 + 0.5) * px;
        for c in 0..IMG_SIZE {
            let x = origin.x + (c as f32 + 0.5) * px;
            let rgb = shade(state, Vec2::new(x, y));
            let base = (r * IMG_SIZE + c) * 3;
            out[base..base + 3].copy_from_slice(&rgb);
        }
    }
    out
}
