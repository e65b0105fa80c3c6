//! Run-directory layout. Artifact directories are keyed by content hashes
//! of the config fields they depend on, so downstream commands locate
//! upstream outputs deterministically and a changed setting can never read
//! a stale artifact.

use std::path::{Path, PathBuf};

use lotj::ExperimentConfig;
use sha_hash::hash_fields;

pub struct Context {
    pub config: ExperimentConfig,
    pub out_root: PathBuf,
    pub force: bool,
}

mod sha_hash {
    pub fn hash_fields(parts: &[String]) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.as_bytes());
            h.update([0]);
        }
        let d = h.finalize();
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Context {
    /// Hash of everything that determines the dataset bytes.
    pub fn data_hash(&self) -> String {
        let c = &self.config;
        hash_fields(&[
            c.seed.to_string(),
            c.domain_seed.to_string(),
            c.n_train_domains.to_string(),
            c.n_test_domains.to_string(),
            c.n_groups.to_string(),
            c.trajectories_per_domain.to_string(),
            c.test_trajectories_per_domain.to_string(),
        ])
    }

    pub fn reward_hash(&self, variant: lotj::DaibVariant) -> String {
        let c = &self.config;
        hash_fields(&[
            self.data_hash(),
            serde_json::to_string(&c.reward).unwrap(),
            variant.name().to_string(),
            c.seed.to_string(),
        ])
    }

    pub fn offline_hash(&self, use_daib_policy: bool) -> String {
        let c = &self.config;
        hash_fields(&[
            self.data_hash(),
            self.reward_hash(c.variant),
            serde_json::to_string(&c.iql).unwrap(),
            use_daib_policy.to_string(),
        ])
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_root.join(format!("dataset-{}", self.data_hash()))
    }

    pub fn reward_dir(&self, variant: lotj::DaibVariant) -> PathBuf {
        self.out_root
            .join(format!("reward-{}-{}", variant.name(), self.reward_hash(variant)))
    }

    pub fn offline_dir(&self, use_daib_policy: bool) -> PathBuf {
        let tag = if use_daib_policy { "daib" } else { "nodaib" };
        self.out_root
            .join(format!("offline-{tag}-{}", self.offline_hash(use_daib_policy)))
    }

    pub fn run_dir(&self, command: &str, extra: &[String]) -> PathBuf {
        let mut parts = vec![self.config.content_hash(), command.to_string()];
        parts.extend_from_slice(extra);
        let h = hash_fields(&parts);
        self.out_root.join(format!("{command}-{h}"))
    }

    /// Creates a run directory, enforcing --force semantics, and drops the
    /// resolved config inside for exact replay.
    pub fn prepare_dir(&self, dir: &Path) -> anyhow::Result<()> {
        if dir.exists() && dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
            if !self.force {
                anyhow::bail!(
                    "output {} exists and is not empty (pass --force to overwrite)",
                    dir.display()
                );
            }
            std::fs::remove_dir_all(dir)?;
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.resolved.json"), self.config.resolved_json())?;
        Ok(())
    }

    pub fn load_train_dataset(&self) -> anyhow::Result<datastore::Dataset> {
        let dir = self.dataset_dir().join("train");
        datastore::read_dataset(&dir).map_err(|e| {
            anyhow::anyhow!(
                "training dataset at {} unavailable ({e}); run `lotj collect` first",
                dir.display()
            )
        })
    }

    pub fn load_test_dataset(&self) -> anyhow::Result<datastore::Dataset> {
        let dir = self.dataset_dir().join("test");
        datastore::read_dataset(&dir).map_err(|e| {
            anyhow::anyhow!(
                "held-out dataset at {} unavailable ({e}); run `lotj collect` first",
                dir.display()
            )
        })
    }

    pub fn load_reward_model(&self, variant: lotj::DaibVariant) -> anyhow::Result<lotj::RewardModel> {
        let path = self.reward_dir(variant).join("reward_model.nnw");
        lotj::RewardModel::load(&path).map_err(|e| {
            anyhow::anyhow!(
                "reward model at {} unavailable ({e}); run `lotj train-reward --variant {}` first",
                path.display(),
                variant.name()
            )
        })
    }

    pub fn load_bundle(&self, use_daib_policy: bool) -> anyhow::Result<lotj::AgentBundle> {
        let dir = self.offline_dir(use_daib_policy);
        lotj::AgentBundle::load(&dir).map_err(|e| {
            let flag = if use_daib_policy { "" } else { " --no-daib-policy" };
            anyhow::anyhow!(
                "agent bundle at {} unavailable ({e}); run `lotj train-offline{flag}` first",
                dir.display()
            )
        })
    }
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> anyhow::Result<()> {
    let mut body = String::with_capacity(rows.len() * 32 + header.len() + 1);
    body.push_str(header);
    body.push('\n');
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    std::fs::write(path, body)?;
    Ok(())
}
