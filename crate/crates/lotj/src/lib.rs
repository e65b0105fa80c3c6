//! Learning on the job, at desk scale: offline RL pretraining across many
//! simulated insertion domains, a split-representation reward classifier
//! that generalizes to held-out domains, and self-supervised online
//! finetuning that never reads the test domain's ground-truth reward.

pub mod baselines;
pub mod bundle;
pub mod config;
pub mod daibrep;
pub mod experiments;
pub mod finetune;
pub mod iql;
pub mod nets;
pub mod saliency;

pub use bundle::{offline_pretrain, AgentBundle};
pub use config::ExperimentConfig;
pub use daibrep::{DaibVariant, RewardModel};
pub use finetune::{finetune_loop, FinetuneConfig, FinetuneSession};
pub use iql::{IqlConfig, IqlTrainer};

#[derive(Debug, thiserror::Error)]
pub enum LotjError {
    #[error(transparent)]
    Tensor(#[from] tensorcore::TensorError),
    #[error(transparent)]
    Sim(#[from] pegsim::PegSimError),
    #[error(transparent)]
    Data(#[from] datastore::DatastoreError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("missing {what}: {hint}")]
    MissingArtifact { what: String, hint: String },
}
