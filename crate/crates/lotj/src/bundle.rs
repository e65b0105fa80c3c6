//! The trained artifact set: policy, critics with their targets, and the
//! reward model, plus offline pretraining that produces it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use datastore::{buffer_from_dataset, sample_mixed_batch, Dataset, ReplayBuffer};

use crate::daibrep::RewardModel;
use crate::iql::{IqlConfig, IqlTrainer};
use crate::nets::ObsKind;
use crate::LotjError;

pub struct AgentBundle {
    pub trainer: IqlTrainer,
    pub reward: RewardModel,
    pub train_domains: Vec<u32>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    obs_kind: String,
    vector_dim: usize,
    iql: IqlConfig,
    train_domains: Vec<u32>,
    seed: u64,
}

impl AgentBundle {
    pub fn save(&self, dir: &Path) -> Result<(), LotjError> {
        std::fs::create_dir_all(dir).map_err(|e| LotjError::Io(e.to_string()))?;
        let t = &self.trainer;
        tensorcore::checkpoint::save_store(&dir.join("policy.nnw"), &t.policy_store)?;
        tensorcore::checkpoint::save_store(&dir.join("q.nnw"), &t.q_store)?;
        tensorcore::checkpoint::save_store(&dir.join("v.nnw"), &t.v_store)?;
        tensorcore::checkpoint::save_store(&dir.join("q_target.nnw"), &t.q_target_store)?;
        tensorcore::checkpoint::save_store(&dir.join("v_target.nnw"), &t.v_target_store)?;
        self.reward.save(&dir.join("reward_model.nnw"))?;
        let meta = BundleMeta {
            obs_kind: match t.obs_kind {
                ObsKind::Image => "image".into(),
                ObsKind::Vector(_) => "vector".into(),
            },
            vector_dim: match t.obs_kind {
                ObsKind::Image => 0,
                ObsKind::Vector(d) => d,
            },
            iql: t.config,
            train_domains: self.train_domains.clone(),
            seed: self.seed,
        };
        let raw = serde_json::to_string_pretty(&meta).map_err(|e| LotjError::Config(e.to_string()))?;
        std::fs::write(dir.join("config.json"), raw).map_err(|e| LotjError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, LotjError> {
        let raw = std::fs::read_to_string(dir.join("config.json")).map_err(|e| {
            LotjError::MissingArtifact {
                what: format!("agent bundle at {}", dir.display()),
                hint: format!("({e}); run train-offline first"),
            }
        })?;
        let meta: BundleMeta =
            serde_json::from_str(&raw).map_err(|e| LotjError::Config(e.to_string()))?;
        let obs_kind = match meta.obs_kind.as_str() {
            "image" => ObsKind::Image,
            _ => ObsKind::Vector(meta.vector_dim),
        };
        let mut trainer = IqlTrainer::new(obs_kind, meta.iql, meta.train_domains.clone(), meta.seed)?;
        tensorcore::checkpoint::load_store(&dir.join("policy.nnw"), &mut trainer.policy_store)?;
        tensorcore::checkpoint::load_store(&dir.join("q.nnw"), &mut trainer.q_store)?;
        tensorcore::checkpoint::load_store(&dir.join("v.nnw"), &mut trainer.v_store)?;
        tensorcore::checkpoint::load_store(&dir.join("q_target.nnw"), &mut trainer.q_target_store)?;
        tensorcore::checkpoint::load_store(&dir.join("v_target.nnw"), &mut trainer.v_target_store)?;
        let reward = RewardModel::load(&dir.join("reward_model.nnw"))?;
        Ok(Self {
            trainer,
            reward,
            train_domains: meta.train_domains,
            seed: meta.seed,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PretrainCurve {
    /// (step, q_loss, v_loss, policy_loss)
    pub points: Vec<(usize, f32, f32, f32)>,
}

/// Offline RL on the training-domain dataset. The held-out domain ids must
/// be absent from the data and from the reward model's label set.
pub fn offline_pretrain(
    dataset: &Dataset,
    heldout_ids: &[u32],
    config: IqlConfig,
    seed: u64,
    reward: RewardModel,
) -> Result<(AgentBundle, PretrainCurve), LotjError> {
    config.validate()?;
    for d in &dataset.manifest.domains {
        if heldout_ids.contains(&d.domain_id) {
            return Err(LotjError::Config(format!(
                "held-out domain {} present in the training dataset",
                d.domain_id
            )));
        }
    }
    for d in heldout_ids {
        if reward.domain_class(*d).is_some() {
            return Err(LotjError::Config(format!(
                "held-out domain {d} present in the reward model's label set"
            )));
        }
    }
    let mut train_domains: Vec<u32> = dataset
        .manifest
        .domains
        .iter()
        .map(|d| d.domain_id)
        .collect();
    train_domains.sort_unstable();

    let offline = buffer_from_dataset(dataset)?;
    let empty_online = ReplayBuffer::new(pegsim::OBS_LEN, 1);
    let mut trainer = IqlTrainer::new(ObsKind::Image, config, train_domains.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x0FF1]));
    let mut curve = PretrainCurve::default();
    for step in 0..config.steps {
        let batch = sample_mixed_batch(&offline, &empty_online, config.batch, &mut rng)?;
        trainer.adv_ramp = crate::daibrep::adversarial_ramp(step as f32 / config.steps as f32);
        let losses = trainer.update(&batch, &mut rng)?;
        if step % config.report_every == 0 || step + 1 == config.steps {
            curve
                .points
                .push((step, losses.q_loss, losses.v_loss, losses.policy_loss));
        }
    }
    Ok((
        AgentBundle {
            trainer,
            reward,
            train_domains,
            seed,
        },
        curve,
    ))
}
