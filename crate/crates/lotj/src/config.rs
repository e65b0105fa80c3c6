//! Experiment configuration: one JSON document that fully determines every
//! artifact byte given the same build. Run directories are keyed by a
//! content hash of the resolved config.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::daibrep::DaibVariant;
use crate::finetune::FinetuneConfig;
use crate::iql::IqlConfig;
use crate::LotjError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RewardConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub lambda: f32,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let d = crate::daibrep::RewardTrainConfig::default();
        Self {
            steps: d.steps,
            batch: d.batch,
            lr: d.lr,
            lambda: d.lambda,
        }
    }
}

impl RewardConfig {
    pub fn to_train_config(self) -> crate::daibrep::RewardTrainConfig {
        crate::daibrep::RewardTrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            lambda: self.lambda,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train_domains: usize,
    pub n_test_domains: usize,
    pub n_groups: usize,
    pub domain_seed: u64,
    pub trajectories_per_domain: u64,
    pub test_trajectories_per_domain: u64,
    pub iql: IqlConfig,
    pub reward: RewardConfig,
    pub finetune: FinetuneConfig,
    pub variant: DaibVariant,
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train_domains: 12,
            n_test_domains: 4,
            n_groups: 4,
            domain_seed: 7,
            trajectories_per_domain: 300,
            test_trajectories_per_domain: 100,
            iql: IqlConfig::default(),
            reward: RewardConfig::default(),
            finetune: FinetuneConfig::default(),
            variant: DaibVariant::Daib,
            eval_seed: 0xE7A1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(raw: &str) -> Result<Self, LotjError> {
        serde_json::from_str(raw).map_err(|e| LotjError::Config(format!("config: {e}")))
    }

    /// Full dump with every default made explicit.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex prefix of the SHA-256 of the resolved config; names run dirs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved_json().as_bytes());
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_and_hash_stably() {
        let c = ExperimentConfig::default();
        let json = c.resolved_json();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back.resolved_json(), json);
        assert_eq!(back.content_hash(), c.content_hash());
        assert_eq!(c.content_hash().len(), 16);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 5, "n_groups": 2}"#).unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.n_groups, 2);
        assert_eq!(c.n_train_domains, 12);
    }

    #[test]
    fn different_config_different_hash() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.seed = 1;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
