//! Demonstration and play-data generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{StageEvent, Trajectory};

use super::{
    expert_action, render, reset, step, tasks::ALL_FAMILIES, Action, SimState, TaskSpec, View,
    ACTION_DIM, EPISODE_CAP, IMG_SIZE, MAX_STEP, STATE_DIM,
};

/// Extra no-op steps recorded after success so the completed scene appears
/// as a foresight target.
const DEMO_TAIL: usize = 5;

fn record_step(traj: &mut Trajectory, state: &SimState, action: &Action) {
    traj.images.extend_from_slice(&render(state, View::Base));
    traj.images.extend_from_slice(&render(state, View::Hand));
    traj.states.extend_from_slice(&state.state_vec());
    traj.actions.extend_from_slice(&action.to_vec());
    traj.len += 1;
}

fn empty_traj(task: &str, instruction: Option<String>, seed: u64) -> Trajectory {
    Trajectory {
        task: task.to_string(),
        instruction,
        len: 0,
        views: 2,
        height: IMG_SIZE,
        width: IMG_SIZE,
        state_dim: STATE_DIM,
        action_dim: ACTION_DIM,
        images: Vec::new(),
        states: Vec::new(),
        actions: Vec::new(),
        seed,
        stages: Vec::new(),
    }
}

fn mix(seed: u64, i: u64) -> u64 {
    // splitmix64 step keeps per-episode seeds well separated.
    let mut z = seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Scripted-expert demonstrations with instructions and stage annotations.
pub fn gen_demos(task: &TaskSpec, count: usize, seed: u64) -> Vec<Trajectory> {
    assert!(count >= 1);
    (0..count)
        .map(|i| {
            let ep_seed = mix(seed, i as u64);
            let mut state = reset(task, ep_seed);
            let mut traj = empty_traj(
                task.family.name(),
                Some(task.instruction.clone()),
                ep_seed,
            );
            let mut satisfied = vec![false; task.num_stages()];
            let mut tail = 0usize;
            while traj.len < EPISODE_CAP {
                let action = if task.success(&state) {
                    tail += 1;
                    Action {
                        arm: [0.0, 0.0],
                        gripper: if state.gripper_closed { 1.0 } else { 0.0 },
                    }
                } else {
                    expert_action(&state, task).expect("expert on a fresh reset")
                };
                record_step(&mut traj, &state, &action);
                state = step(&state, &action);
                for (si, done) in satisfied.iter_mut().enumerate() {
                    if !*done && task.stage_satisfied(si, &state) {
                        *done = true;
                        traj.stages.push(StageEvent {
                            stage: si,
                            step: traj.len - 1,
                        });
                    }
                }
                if tail >= DEMO_TAIL {
                    break;
                }
            }
            traj
        })
        .collect()
}

/// Language-free exploration: random waypoints, random grasp attempts, and
/// random drawer jiggles inside a seeded random task world.
pub fn gen_play(count: usize, horizon: usize, seed: u64) -> Vec<Trajectory> {
    assert!(count >= 1);
    (0..count)
        .map(|i| {
            let ep_seed = mix(seed.wrapping_add(0x504C_4159), i as u64);
            gen_play_one(ep_seed, horizon)
        })
        .collect()
}

fn gen_play_one(ep_seed: u64, horizon: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
    let family = ALL_FAMILIES[rng.gen_range(0..ALL_FAMILIES.len())];
    let task = TaskSpec::new(family);
    let mut state = reset(&task, rng.gen());
    let mut traj = empty_traj("play", None, ep_seed);
    let mut waypoint = state.ee;
    let mut ttl = 0usize;
    let mut grip = 0.0f32;
    for _ in 0..horizon {
        if ttl == 0 {
            ttl = rng.gen_range(6..18);
            waypoint = if rng.gen_bool(0.5) && !state.objects.is_empty() {
                let o = &state.objects[rng.gen_range(0..state.objects.len())];
                super::Vec2 {
                    x: (o.pos.x + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0),
                    y: (o.pos.y + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0),
                }
            } else {
                super::Vec2 {
                    x: rng.gen_range(0.0..1.0),
                    y: rng.gen_range(0.0..1.0),
                }
            };
        }
        ttl -= 1;
        // Occasionally toggle the gripper; bias toward closing near objects.
        let near_object = state
            .objects
            .iter()
            .any(|o| o.pos.dist(state.ee) <= 0.05);
        if rng.gen_bool(0.08) || (near_object && !state.gripper_closed && rng.gen_bool(0.3)) {
            grip = if grip >= 0.5 { 0.0 } else { 1.0 };
        }
        let action = Action {
            arm: [
                ((waypoint.x - state.ee.x) / MAX_STEP).clamp(-1.0, 1.0),
                ((waypoint.y - state.ee.y) / MAX_STEP).clamp(-1.0, 1.0),
            ],
            gripper: grip,
        };
        record_step(&mut traj, &state, &action);
        state = step(&state, &action);
    }
    traj
}
