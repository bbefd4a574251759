//! Stateless scripted expert: the current phase is re-derived from the state
//! every call, so the policy is robust to perturbed starts.

use super::{
    Action, ObjKind, SimError, SimState, TaskFamily, TaskSpec, Vec2, DRAWER_AXIS, MAX_STEP,
};

/// Distance at which a waypoint counts as reached.
const ARRIVE: f32 = 0.01;

fn toward(ee: Vec2, wp: Vec2) -> [f32; 2] {
    [
        ((wp.x - ee.x) / MAX_STEP).clamp(-1.0, 1.0),
        ((wp.y - ee.y) / MAX_STEP).clamp(-1.0, 1.0),
    ]
}

fn hold(state: &SimState) -> f32 {
    if state.gripper_closed {
        1.0
    } else {
        0.0
    }
}

/// Expert action for the current phase: approach -> grasp -> transport ->
/// release (or press / slide for the button and drawer families).
pub fn expert_action(state: &SimState, task: &TaskSpec) -> Result<Action, SimError> {
    if task.success(state) {
        return Ok(Action {
            arm: [0.0, 0.0],
            gripper: hold(state),
        });
    }
    let missing = |what: &'static str| SimError::ObjectMissing {
        family: task.family.name(),
        what,
    };
    match task.family {
        TaskFamily::PickPlace | TaskFamily::PushToZone | TaskFamily::Stack => {
            let (block_color, target) = match task.family {
                TaskFamily::PickPlace => (0u8, ObjKind::Pad),
                TaskFamily::PushToZone => (2u8, ObjKind::Pad),
                _ => (2u8, ObjKind::Block),
            };
            let pad_color = match task.family {
                TaskFamily::PickPlace => 1,
                TaskFamily::PushToZone => 3,
                _ => 0, // stack target: the red base block
            };
            let block = state
                .objects
                .iter()
                .find(|o| o.kind == ObjKind::Block && o.color == block_color)
                .ok_or_else(|| missing("block"))?;
            let goal = state
                .objects
                .iter()
                .find(|o| o.kind == target && o.color == pad_color)
                .ok_or_else(|| missing("target"))?;
            match state.held {
                Some(id) if id == block.id => {
                    if state.ee.dist(goal.pos) <= ARRIVE {
                        Ok(Action {
                            arm: [0.0, 0.0],
                            gripper: 0.0,
                        })
                    } else {
                        Ok(Action {
                            arm: toward(state.ee, goal.pos),
                            gripper: 1.0,
                        })
                    }
                }
                Some(_) => Ok(Action {
                    // Holding the wrong thing: drop it first.
                    arm: [0.0, 0.0],
                    gripper: 0.0,
                }),
                None => {
                    if state.ee.dist(block.pos) <= ARRIVE {
                        Ok(Action {
                            arm: [0.0, 0.0],
                            gripper: 1.0,
                        })
                    } else {
                        Ok(Action {
                            arm: toward(state.ee, block.pos),
                            gripper: 0.0,
                        })
                    }
                }
            }
        }
        TaskFamily::PressButton => {
            let button = state
                .objects
                .iter()
                .find(|o| o.kind == ObjKind::Button)
                .ok_or_else(|| missing("button"))?;
            if state.held.is_some() {
                return Ok(Action {
                    arm: [0.0, 0.0],
                    gripper: 0.0,
                });
            }
            if state.ee.dist(button.pos) <= ARRIVE {
                Ok(Action {
                    arm: [0.0, 0.0],
                    gripper: 1.0,
                })
            } else {
                Ok(Action {
                    arm: toward(state.ee, button.pos),
                    gripper: 0.0,
                })
            }
        }
        TaskFamily::OpenDrawer | TaskFamily::CloseDrawer => {
            let drawer = state
                .objects
                .iter()
                .find(|o| o.kind == ObjKind::Drawer)
                .ok_or_else(|| missing("drawer"))?;
            let pull = task.family == TaskFamily::OpenDrawer;
            match state.held {
                Some(id) if id == drawer.id => {
                    let dir = if pull { 1.0 } else { -1.0 };
                    Ok(Action {
                        arm: [DRAWER_AXIS.x * dir, DRAWER_AXIS.y * dir],
                        gripper: 1.0,
                    })
                }
                Some(_) => Ok(Action {
                    arm: [0.0, 0.0],
                    gripper: 0.0,
                }),
                None => {
                    if state.ee.dist(drawer.pos) <= ARRIVE {
                        Ok(Action {
                            arm: [0.0, 0.0],
                            gripper: 1.0,
                        })
                    } else {
                        Ok(Action {
                            arm: toward(state.ee, drawer.pos),
                            gripper: 0.0,
                        })
                    }
                }
            }
        }
    }
}
