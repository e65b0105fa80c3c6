//! Dataset directories: a `manifest.json` naming the domain specs and the
//! trajectory files, plus one `.traj` file per episode. Writes are
//! bit-reproducible given the same trajectories.

use std::fs;
use std::path::{Path, PathBuf};

use pegsim::{DomainSpec, Scenario};
use serde::{Deserialize, Serialize};

use crate::trajectory::{decode, Trajectory};
use crate::DatastoreError;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub domain_id: u32,
    pub episode_index: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub global_seed: u64,
    /// 1 or 2; which start distribution collection used.
    pub scenario: u32,
    pub domains: Vec<DomainSpec>,
    pub files: Vec<ManifestEntry>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn domain(&self, domain_id: u32) -> Option<&DomainSpec> {
        self.manifest.domains.iter().find(|d| d.domain_id == domain_id)
    }

    pub fn scenario(&self) -> Scenario {
        if self.manifest.scenario == 2 {
            Scenario::Two
        } else {
            Scenario::One
        }
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Reconstructs the privileged peg positions of a stored trajectory by
    /// replaying its actions through the deterministic dynamics. Returns
    /// T+1 positions aligned with the observations.
    pub fn replay_states(&self, index: usize) -> Result<Vec<[f32; 3]>, DatastoreError> {
        let traj = &self.trajectories[index];
        let entry = &self.manifest.files[index];
        let spec = self.domain(entry.domain_id).ok_or_else(|| {
            DatastoreError::Invalid(format!("manifest lacks domain {}", entry.domain_id))
        })?;
        let seed = pegsim::episode_seed(
            self.manifest.global_seed,
            entry.domain_id,
            entry.episode_index,
        );
        let mut state = pegsim::reset_seeded(spec, self.scenario(), seed);
        let mut out = vec![state.pos];
        for a in &traj.actions {
            pegsim::step(
                &mut state,
                spec,
                pegsim::Action::new(a[0], a[1], a[2]),
            )
            .map_err(|e| DatastoreError::Invalid(format!("replay diverged: {e}")))?;
            out.push(state.pos);
        }
        if (state.success as u8) != traj.success {
            return Err(DatastoreError::Invalid(
                "replayed success flag disagrees with stored trajectory".into(),
            ));
        }
        Ok(out)
    }
}

pub fn traj_file_name(domain_id: u32, episode_index: u64) -> String {
    format!("d{domain_id:03}_e{episode_index:05}.traj")
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), DatastoreError> {
    if dataset.manifest.files.len() != dataset.trajectories.len() {
        return Err(DatastoreError::Invalid(
            "manifest file list and trajectory count differ".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| DatastoreError::Io(format!("{}: {e}", dir.display())))?;
    for (entry, traj) in dataset.manifest.files.iter().zip(&dataset.trajectories) {
        traj.validate()?;
        let path = dir.join(&entry.path);
        fs::write(&path, traj.encode())
            .map_err(|e| DatastoreError::Io(format!("{}: {e}", path.display())))?;
    }
    let manifest = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| DatastoreError::Invalid(e.to_string()))?;
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, manifest)
        .map_err(|e| DatastoreError::Io(format!("{}: {e}", mpath.display())))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatastoreError> {
    let mpath = dir.join("manifest.json");
    let raw = fs::read_to_string(&mpath)
        .map_err(|e| DatastoreError::Io(format!("{}: {e}", mpath.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&raw).map_err(|e| DatastoreError::Corrupt(format!("manifest: {e}")))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DatastoreError> {
    let manifest = read_manifest(dir)?;
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for entry in &manifest.files {
        let path: PathBuf = dir.join(&entry.path);
        let bytes =
            fs::read(&path).map_err(|e| DatastoreError::Io(format!("{}: {e}", path.display())))?;
        let traj = decode(&bytes)
            .map_err(|e| DatastoreError::Corrupt(format!("{}: {e}", entry.path)))?;
        if traj.domain_id != entry.domain_id {
            return Err(DatastoreError::Corrupt(format!(
                "{}: domain id {} disagrees with manifest {}",
                entry.path, traj.domain_id, entry.domain_id
            )));
        }
        trajectories.push(traj);
    }
    Ok(Dataset {
        manifest,
        trajectories,
    })
}

/// Rolls out the scripted expert across the given domains and packages the
/// episodes as a dataset. Ground-truth rewards recorded here are the only
/// place the simulator's success signal enters the training data.
pub fn collect_expert_dataset(
    domains: &[DomainSpec],
    episodes_per_domain: u64,
    scenario: Scenario,
    global_seed: u64,
) -> Dataset {
    let mut files = Vec::new();
    let mut trajectories = Vec::new();
    for spec in domains {
        for ep in 0..episodes_per_domain {
            let seed = pegsim::episode_seed(global_seed, spec.domain_id, ep);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let mut state = pegsim::reset(spec, scenario, &mut rng);
            let mut observations = vec![pegsim::render(&state, spec).pixels];
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            while !state.done {
                let a = pegsim::scripted_expert(&state, spec, &mut rng).clipped();
                let out = pegsim::step(&mut state, spec, a).expect("stepping live episode");
                observations.push(pegsim::render(&state, spec).pixels);
                actions.push(a.as_array().to_vec());
                rewards.push(out.reward as u8);
            }
            let traj = Trajectory {
                domain_id: spec.domain_id,
                height: pegsim::OBS_H as u32,
                width: pegsim::OBS_W as u32,
                channels: 1,
                action_dim: 3,
                observations,
                actions,
                rewards,
                success: state.success as u8,
            };
            files.push(ManifestEntry {
                path: traj_file_name(spec.domain_id, ep),
                domain_id: spec.domain_id,
                episode_index: ep,
            });
            trajectories.push(traj);
        }
    }
    Dataset {
        manifest: Manifest {
            version: 1,
            global_seed,
            scenario: match scenario {
                Scenario::One => 1,
                Scenario::Two => 2,
            },
            domains: domains.to_vec(),
            files,
        },
        trajectories,
    }
}

/// Success-labelled frames: each stored next-observation with the reward of
/// the transition that produced it.
pub fn reward_frames(traj: &Trajectory) -> impl Iterator<Item = (&Vec<f32>, u8)> {
    traj.observations[1..]
        .iter()
        .zip(traj.rewards.iter().copied())
}
