//! Task families, instructions, stage predicates, and scoring.
//!
//! A task earns +1 per newly satisfied stage; success requires the final
//! stage, which implies every earlier one.

use serde::{Deserialize, Serialize};

use super::{ObjKind, SimState, ON_RADIUS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    PickPlace,
    Stack,
    PressButton,
    OpenDrawer,
    CloseDrawer,
    PushToZone,
}

pub const ALL_FAMILIES: [TaskFamily; 6] = [
    TaskFamily::PickPlace,
    TaskFamily::Stack,
    TaskFamily::PressButton,
    TaskFamily::OpenDrawer,
    TaskFamily::CloseDrawer,
    TaskFamily::PushToZone,
];

impl TaskFamily {
    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::PickPlace => "pick-place",
            TaskFamily::Stack => "stack",
            TaskFamily::PressButton => "press-button",
            TaskFamily::OpenDrawer => "open-drawer",
            TaskFamily::CloseDrawer => "close-drawer",
            TaskFamily::PushToZone => "push-to-zone",
        }
    }

    pub fn instruction(self) -> &'static str {
        match self {
            TaskFamily::PickPlace => "pick the red block and place it on the green pad",
            TaskFamily::Stack => "stack the blue block on the red block",
            TaskFamily::PressButton => "press the button",
            TaskFamily::OpenDrawer => "open the drawer",
            TaskFamily::CloseDrawer => "close the drawer",
            TaskFamily::PushToZone => "push the blue block to the yellow zone",
        }
    }
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_FAMILIES
            .iter()
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown task family {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub instruction: String,
}

impl TaskSpec {
    pub fn new(family: TaskFamily) -> Self {
        TaskSpec {
            family,
            instruction: family.instruction().to_string(),
        }
    }

    pub fn num_stages(&self) -> usize {
        match self.family {
            TaskFamily::PressButton => 1,
            _ => 2,
        }
    }

    /// Full score = number of stages (one point each).
    pub fn full_score(&self) -> usize {
        self.num_stages()
    }

    /// Stage predicate `idx` evaluated on a state. Stages are ordered; the
    /// last one is the success predicate, and it implies the earlier ones.
    pub fn stage_satisfied(&self, idx: usize, s: &SimState) -> bool {
        match self.family {
            TaskFamily::PickPlace | TaskFamily::PushToZone => {
                let (block_color, pad_color) = if self.family == TaskFamily::PickPlace {
                    (0, 1) // red block onto the green pad
                } else {
                    (2, 3) // blue block into the yellow zone
                };
                let block = find(s, ObjKind::Block, |o| o.color == block_color);
                let pad = find(s, ObjKind::Pad, |o| o.color == pad_color);
                let (Some(b), Some(p)) = (block, pad) else {
                    return false;
                };
                let placed = b.pos.dist(p.pos) <= ON_RADIUS && s.held != Some(b.id);
                match idx {
                    0 => s.held == Some(b.id) || placed,
                    _ => placed,
                }
            }
            TaskFamily::Stack => {
                let base = find(s, ObjKind::Block, |o| o.color == 0);
                let top = find(s, ObjKind::Block, |o| o.color == 2);
                let (Some(base), Some(top)) = (base, top) else {
                    return false;
                };
                let stacked = top.pos.dist(base.pos) <= ON_RADIUS && s.held != Some(top.id);
                match idx {
                    0 => s.held == Some(top.id) || stacked,
                    _ => stacked,
                }
            }
            TaskFamily::PressButton => find(s, ObjKind::Button, |_| true)
                .map(|b| b.lit)
                .unwrap_or(false),
            TaskFamily::OpenDrawer => {
                let Some(d) = find(s, ObjKind::Drawer, |_| true) else {
                    return false;
                };
                match idx {
                    0 => s.held == Some(d.id) || d.fraction >= 0.9,
                    _ => d.fraction >= 0.9,
                }
            }
            TaskFamily::CloseDrawer => {
                let Some(d) = find(s, ObjKind::Drawer, |_| true) else {
                    return false;
                };
                match idx {
                    0 => s.held == Some(d.id) || d.fraction <= 0.1,
                    _ => d.fraction <= 0.1,
                }
            }
        }
    }

    pub fn success(&self, s: &SimState) -> bool {
        self.stage_satisfied(self.num_stages() - 1, s)
    }
}

fn find<'a>(
    s: &'a SimState,
    kind: ObjKind,
    pred: impl Fn(&super::Object) -> bool,
) -> Option<&'a super::Object> {
    s.objects.iter().find(|o| o.kind == kind && pred(o))
}

/// Sorted unique words over all task instructions.
pub fn tasks_vocabulary() -> Vec<String> {
    let mut words: Vec<String> = ALL_FAMILIES
        .iter()
        .flat_map(|f| f.instruction().split_whitespace())
        .map(str::to_string)
        .collect();
    words.sort();
    words.dedup();
    words
}
