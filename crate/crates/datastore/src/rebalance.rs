//! Label-balanced reward-classifier batches: every batch is exactly half
//! positive and half negative frames, with domains drawn uniformly among
//! those that have both classes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_with, AugmentDraw};
use crate::dataset::{reward_frames, Dataset};
use crate::DatastoreError;

/// Frame pools for one domain, indices into the flattened frame list.
struct DomainPool {
    domain_id: u32,
    positives: Vec<u32>,
    negatives: Vec<u32>,
}

pub struct RewardBatcher {
    frame_len: usize,
    frames: Vec<f32>,
    pools: Vec<DomainPool>,
    /// Domains dropped for lacking a class.
    pub excluded_domains: Vec<u32>,
}

pub struct RewardBatch {
    pub n: usize,
    pub obs: Vec<f32>,
    pub labels: Vec<f32>,
    pub domain_ids: Vec<u32>,
}

impl RewardBatcher {
    pub fn new(dataset: &Dataset) -> Result<Self, DatastoreError> {
        let frame_len = dataset
            .trajectories
            .first()
            .map(|t| t.frame_len())
            .ok_or_else(|| DatastoreError::Invalid("empty dataset".into()))?;
        let mut frames = Vec::new();
        let mut by_domain: std::collections::BTreeMap<u32, (Vec<u32>, Vec<u32>)> =
            std::collections::BTreeMap::new();
        for traj in &dataset.trajectories {
            for (obs, r) in reward_frames(traj) {
                let idx = (frames.len() / frame_len) as u32;
                frames.extend_from_slice(obs);
                let entry = by_domain.entry(traj.domain_id).or_default();
                if r == 1 {
                    entry.0.push(idx);
                } else {
                    entry.1.push(idx);
                }
            }
        }
        let mut pools = Vec::new();
        let mut excluded_domains = Vec::new();
        for (domain_id, (positives, negatives)) in by_domain {
            if positives.is_empty() || negatives.is_empty() {
                excluded_domains.push(domain_id);
            } else {
                pools.push(DomainPool {
                    domain_id,
                    positives,
                    negatives,
                });
            }
        }
        if pools.is_empty() {
            return Err(DatastoreError::Invalid(
                "no domain has both positive and negative frames".into(),
            ));
        }
        Ok(Self {
            frame_len,
            frames,
            pools,
            excluded_domains,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn domain_count(&self) -> usize {
        self.pools.len()
    }

    /// Exactly `batch/2` positives then `batch/2` negatives, domains uniform.
    pub fn next_batch(
        &self,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RewardBatch, DatastoreError> {
        self.next_batch_with_augment(batch, rng, false)
    }

    /// Same stream with optional shift/brightness augmentation per sampled
    /// frame (training-time regularization; evaluation sets stay clean).
    pub fn next_batch_with_augment(
        &self,
        batch: usize,
        rng: &mut ChaCha8Rng,
        augment: bool,
    ) -> Result<RewardBatch, DatastoreError> {
        if batch == 0 || batch % 2 != 0 {
            return Err(DatastoreError::Invalid(format!(
                "reward batch {batch} must be even"
            )));
        }
        let mut out = RewardBatch {
            n: batch,
            obs: Vec::with_capacity(batch * self.frame_len),
            labels: Vec::with_capacity(batch),
            domain_ids: Vec::with_capacity(batch),
        };
        for i in 0..batch {
            let positive = i < batch / 2;
            let pool = &self.pools[rng.gen_range(0..self.pools.len())];
            let list = if positive { &pool.positives } else { &pool.negatives };
            let idx = list[rng.gen_range(0..list.len())] as usize;
            let frame = &self.frames[idx * self.frame_len..(idx + 1) * self.frame_len];
            if augment {
                out.obs
                    .extend_from_slice(&augment_with(frame, AugmentDraw::sample(rng)));
            } else {
                out.obs.extend_from_slice(frame);
            }
            out.labels.push(if positive { 1.0 } else { 0.0 });
            out.domain_ids.push(pool.domain_id);
        }
        Ok(out)
    }

    /// Deterministic 50/50 evaluation set: per domain, every positive frame
    /// (up to `cap`) paired with an equal count of seeded-subsampled
    /// negatives.
    pub fn balanced_eval_set(&self, cap: usize, seed: u64) -> RewardBatch {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut obs = Vec::new();
        let mut labels = Vec::new();
        let mut domain_ids = Vec::new();
        for pool in &self.pools {
            let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(
                seed,
                &[pool.domain_id as u64, 0xE7A1],
            ));
            let k = pool.positives.len().min(pool.negatives.len()).min(cap);
            let mut pos = pool.positives.clone();
            let mut neg = pool.negatives.clone();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            for &idx in pos.iter().take(k) {
                obs.extend_from_slice(
                    &self.frames[idx as usize * self.frame_len..(idx as usize + 1) * self.frame_len],
                );
                labels.push(1.0);
                domain_ids.push(pool.domain_id);
            }
            for &idx in neg.iter().take(k) {
                obs.extend_from_slice(
                    &self.frames[idx as usize * self.frame_len..(idx as usize + 1) * self.frame_len],
                );
                labels.push(0.0);
                domain_ids.push(pool.domain_id);
            }
        }
        RewardBatch {
            n: labels.len(),
            obs,
            labels,
            domain_ids,
        }
    }
}
