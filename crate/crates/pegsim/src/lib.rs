//! Desk-scale stand-in for a two-robot connector insertion rig: a family
//! of simulated insertion domains with procedural visual variation, sparse
//! ground-truth success detection, and a scripted calibrated expert.
//!
//! Ground truth (socket positions, success flags) exists here for data
//! collection and final evaluation only; learning code consumes rendered
//! observations.

pub mod domain;
pub mod expert;
pub mod render;
pub mod sim;

pub use domain::{sample_domains, DomainSet, DomainSpec, Style};
pub use expert::{expert_mean_action, scripted_expert};
pub use render::{meaningful_region_mask, render, Observation, OBS_H, OBS_LEN, OBS_W};
pub use sim::{
    reset, reset_seeded, step, Action, Scenario, SimState, StepOutcome, ACTION_LIMIT, MAX_STEPS,
};

#[derive(Debug, thiserror::Error)]
pub enum PegSimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("bad domain manifest: {0}")]
    Manifest(String),
}

/// Derives the per-episode RNG stream used everywhere an episode needs
/// randomness, so results are independent of scheduling order.
pub fn episode_seed(global_seed: u64, domain_id: u32, episode_index: u64) -> u64 {
    tensorcore::mix_seed(global_seed, &[domain_id as u64, episode_index])
}
