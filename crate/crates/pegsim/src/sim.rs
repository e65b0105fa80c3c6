//! Contact dynamics. Geometry is 3-DoF (x, y, z) with an axis-aligned
//! square acceptance region. The surface sits at z = 0; descending
//! through it is possible only while laterally inside the tolerance box,
//! and once inside the cavity the walls confine lateral motion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::domain::DomainSpec;
use crate::PegSimError;

pub const MAX_STEPS: u32 = 20;
pub const ACTION_LIMIT: f32 = 2.0;
pub const RESET_HEIGHT: f32 = 5.0;
/// Arm travel cap above the surface; upward motion clamps here.
pub const MAX_HEIGHT: f32 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Action {
    pub dx: f32,
    pub dy: f32,
    pub dz: f32,
}

impl Action {
    pub fn new(dx: f32, dy: f32, dz: f32) -> Self {
        Self { dx, dy, dz }
    }

    pub fn clipped(&self) -> Action {
        Action {
            dx: self.dx.clamp(-ACTION_LIMIT, ACTION_LIMIT),
            dy: self.dy.clamp(-ACTION_LIMIT, ACTION_LIMIT),
            dz: self.dz.clamp(-ACTION_LIMIT, ACTION_LIMIT),
        }
    }

    pub fn as_array(&self) -> [f32; 3] {
        [self.dx, self.dy, self.dz]
    }
}

/// Evaluation start distributions: scenario I is within +-10 mm of the
/// socket, scenario II a 10-20 mm box ring around it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scenario {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimState {
    /// Peg tip position (x, y, z) in mm; z < 0 is below the surface.
    pub pos: [f32; 3],
    pub contact: bool,
    pub steps: u32,
    pub success: bool,
    pub done: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutcome {
    /// Sparse ground-truth reward, 1.0 exactly on the success transition.
    pub reward: f32,
    pub done: bool,
}

fn aligned(pos: &[f32; 3], spec: &DomainSpec) -> bool {
    (pos[0] - spec.socket_center.0).abs() < spec.socket_tolerance
        && (pos[1] - spec.socket_center.1).abs() < spec.socket_tolerance
}

pub fn reset(spec: &DomainSpec, scenario: Scenario, rng: &mut ChaCha8Rng) -> SimState {
    let (cx, cy) = spec.socket_center;
    let (x, y) = match scenario {
        Scenario::One => (
            cx + rng.gen_range(-10.0..10.0),
            cy + rng.gen_range(-10.0..10.0),
        ),
        Scenario::Two => loop {
            let ox: f32 = rng.gen_range(-20.0..20.0);
            let oy: f32 = rng.gen_range(-20.0..20.0);
            if ox.abs().max(oy.abs()) >= 10.0 {
                break (cx + ox, cy + oy);
            }
        },
    };
    SimState {
        pos: [x, y, RESET_HEIGHT],
        contact: false,
        steps: 0,
        success: false,
        done: false,
    }
}

pub fn reset_seeded(spec: &DomainSpec, scenario: Scenario, seed: u64) -> SimState {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    reset(spec, scenario, &mut rng)
}

/// Advances one step. Lateral motion first (wall-confined while in the
/// cavity), then vertical with surface contact. Reward 1 fires exactly on
/// the transition that first reaches the required depth while aligned.
pub fn step(
    state: &mut SimState,
    spec: &DomainSpec,
    action: Action,
) -> Result<StepOutcome, PegSimError> {
    if state.done {
        return Err(PegSimError::EpisodeFinished);
    }
    let a = action.clipped();
    let (cx, cy) = spec.socket_center;
    let tol = spec.socket_tolerance;

    let mut x = state.pos[0] + a.dx;
    let mut y = state.pos[1] + a.dy;
    if state.pos[2] < 0.0 {
        // Cavity walls confine the peg while it is below the surface.
        let wall = tol - 1e-3;
        x = x.clamp(cx - wall, cx + wall);
        y = y.clamp(cy - wall, cy + wall);
    }
    state.pos[0] = x;
    state.pos[1] = y;

    let mut z = state.pos[2] + a.dz;
    z = z.min(MAX_HEIGHT);
    state.contact = false;
    if z < 0.0 {
        if aligned(&state.pos, spec) {
            z = z.max(-spec.insertion_depth);
        } else if state.pos[2] >= 0.0 {
            z = 0.0;
            state.contact = true;
        } else {
            // Already inside: wall clamp above kept us aligned.
            z = z.max(-spec.insertion_depth);
        }
    }
    state.pos[2] = z;
    state.steps += 1;

    let mut reward = 0.0;
    if !state.success
        && aligned(&state.pos, spec)
        && state.pos[2] <= -spec.insertion_depth + 1e-4
    {
        state.success = true;
        reward = 1.0;
        state.done = true;
    }
    if state.steps >= MAX_STEPS {
        state.done = true;
    }
    Ok(StepOutcome {
        reward,
        done: state.done,
    })
}
