//! Scripted data-collection expert. It has privileged access to the
//! calibrated socket position, homes laterally until within 1 mm, then
//! descends. A 0.2 chance per step replaces the action with a uniform
//! random one to diversify the dataset and teach recovery.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::domain::DomainSpec;
use crate::sim::{Action, SimState, ACTION_LIMIT};

pub const NOISE_PROB: f32 = 0.2;
const HOMING_TOLERANCE: f32 = 1.0;

/// The deterministic component: lateral homing, then straight descent.
pub fn expert_mean_action(state: &SimState, spec: &DomainSpec) -> Action {
    let ex = state.pos[0] - spec.socket_center.0;
    let ey = state.pos[1] - spec.socket_center.1;
    if ex.abs() < HOMING_TOLERANCE && ey.abs() < HOMING_TOLERANCE {
        Action::new(0.0, 0.0, -ACTION_LIMIT)
    } else {
        Action::new(
            (-ex).clamp(-ACTION_LIMIT, ACTION_LIMIT),
            (-ey).clamp(-ACTION_LIMIT, ACTION_LIMIT),
            0.0,
        )
    }
}

pub fn scripted_expert(state: &SimState, spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Action {
    if rng.gen::<f32>() < NOISE_PROB {
        Action::new(
            rng.gen_range(-ACTION_LIMIT..ACTION_LIMIT),
            rng.gen_range(-ACTION_LIMIT..ACTION_LIMIT),
            rng.gen_range(-ACTION_LIMIT..ACTION_LIMIT),
        )
    } else {
        expert_mean_action(state, spec)
    }
}
