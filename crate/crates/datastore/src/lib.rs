//! Trajectory persistence and replay machinery: the `TRJ1` binary episode
//! format, dataset directories with JSON manifests, replay buffers whose
//! (s, s') pairs never cross trajectories, the exact 25/75 online/offline
//! batch mixer, shift/brightness augmentation, and the 50/50 reward-label
//! rebalancer.

pub mod augment;
pub mod dataset;
pub mod rebalance;
pub mod replay;
pub mod trajectory;

pub use augment::{augment, augment_with, AugmentDraw};
pub use dataset::{
    collect_expert_dataset, read_dataset, read_manifest, reward_frames, write_dataset, Dataset,
    Manifest, ManifestEntry,
};
pub use rebalance::{RewardBatch, RewardBatcher};
pub use replay::{
    buffer_from_dataset, sample_mixed_batch, sample_mixed_batch_opts, ReplayBuffer,
    TransitionBatch,
};
pub use trajectory::{decode, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum DatastoreError {
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}
