//! Replay buffers and batch assembly. Transitions index into a flat frame
//! pool, so (s, s') pairs are adjacent frames of one trajectory by
//! construction and never cross an episode boundary.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment_pair, AugmentDraw};
use crate::dataset::Dataset;
use crate::DatastoreError;

#[derive(Clone, Copy, Debug)]
struct TransitionRef {
    s: u32,
    sp: u32,
    action: [f32; 3],
    reward: f32,
    done: bool,
    domain_id: u32,
}

/// Flat transition storage with trajectory-granular eviction.
pub struct ReplayBuffer {
    frame_len: usize,
    frames: Vec<f32>,
    transitions: Vec<TransitionRef>,
    /// (first frame, frame count, first transition, transition count)
    episodes: Vec<(u32, u32, u32, u32)>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(frame_len: usize, capacity: usize) -> Self {
        Self {
            frame_len,
            frames: Vec::new(),
            transitions: Vec::new(),
            episodes: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn frame(&self, idx: u32) -> &[f32] {
        let i = idx as usize * self.frame_len;
        &self.frames[i..i + self.frame_len]
    }

    /// Appends one episode: T+1 frames, T (action, reward, done) records.
    pub fn push_episode(
        &mut self,
        domain_id: u32,
        frames: &[Vec<f32>],
        actions: &[[f32; 3]],
        rewards: &[f32],
        dones: &[bool],
    ) -> Result<(), DatastoreError> {
        let t = actions.len();
        if t == 0 || frames.len() != t + 1 || rewards.len() != t || dones.len() != t {
            return Err(DatastoreError::Invalid(
                "episode arrays are inconsistent".into(),
            ));
        }
        if frames.iter().any(|f| f.len() != self.frame_len) {
            return Err(DatastoreError::Invalid("frame length mismatch".into()));
        }
        let first_frame = (self.frames.len() / self.frame_len) as u32;
        for f in frames {
            self.frames.extend_from_slice(f);
        }
        let first_tr = self.transitions.len() as u32;
        for i in 0..t {
            self.transitions.push(TransitionRef {
                s: first_frame + i as u32,
                sp: first_frame + i as u32 + 1,
                action: actions[i],
                reward: rewards[i],
                done: dones[i],
                domain_id,
            });
        }
        self.episodes
            .push((first_frame, t as u32 + 1, first_tr, t as u32));
        self.evict_to_capacity();
        Ok(())
    }

    fn evict_to_capacity(&mut self) {
        while self.transitions.len() > self.capacity && self.episodes.len() > 1 {
            let (f0, fc, t0, tc) = self.episodes.remove(0);
            debug_assert_eq!(f0, 0);
            debug_assert_eq!(t0, 0);
            self.frames.drain(0..fc as usize * self.frame_len);
            self.transitions.drain(0..tc as usize);
            for tr in &mut self.transitions {
                tr.s -= fc;
                tr.sp -= fc;
            }
            for ep in &mut self.episodes {
                ep.0 -= fc;
                ep.2 -= tc;
            }
        }
    }

    fn get(&self, i: usize) -> &TransitionRef {
        &self.transitions[i]
    }
}

/// A dataset's transitions loaded into a buffer. The stored rewards pass
/// through unchanged; `done` marks each episode's final transition.
pub fn buffer_from_dataset(dataset: &Dataset) -> Result<ReplayBuffer, DatastoreError> {
    let frame_len = dataset
        .trajectories
        .first()
        .map(|t| t.frame_len())
        .unwrap_or(0);
    if frame_len == 0 {
        return Err(DatastoreError::Invalid("empty dataset".into()));
    }
    let total: usize = dataset.trajectories.iter().map(|t| t.len()).sum();
    let mut buf = ReplayBuffer::new(frame_len, total.max(1));
    for traj in &dataset.trajectories {
        let t = traj.len();
        let actions: Vec<[f32; 3]> = traj
            .actions
            .iter()
            .map(|a| [a[0], a[1], a[2]])
            .collect();
        let rewards: Vec<f32> = traj.rewards.iter().map(|&r| r as f32).collect();
        let mut dones = vec![false; t];
        dones[t - 1] = true;
        buf.push_episode(traj.domain_id, &traj.observations, &actions, &rewards, &dones)?;
    }
    Ok(buf)
}

/// One training batch of transitions, already augmented where required.
pub struct TransitionBatch {
    pub n: usize,
    pub obs: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<f32>,
    pub domain_ids: Vec<u32>,
    pub augmented: Vec<bool>,
}

impl TransitionBatch {
    fn with_capacity(n: usize, frame_len: usize) -> Self {
        Self {
            n: 0,
            obs: Vec::with_capacity(n * frame_len),
            next_obs: Vec::with_capacity(n * frame_len),
            actions: Vec::with_capacity(n * 3),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            domain_ids: Vec::with_capacity(n),
            augmented: Vec::with_capacity(n),
        }
    }

    fn push(
        &mut self,
        buf: &ReplayBuffer,
        tr: &TransitionRef,
        aug: Option<AugmentDraw>,
    ) {
        match aug {
            Some(draw) => {
                let (s, sp) = augment_pair(buf.frame(tr.s), buf.frame(tr.sp), draw);
                self.obs.extend_from_slice(&s);
                self.next_obs.extend_from_slice(&sp);
                self.augmented.push(true);
            }
            None => {
                self.obs.extend_from_slice(buf.frame(tr.s));
                self.next_obs.extend_from_slice(buf.frame(tr.sp));
                self.augmented.push(false);
            }
        }
        self.actions.extend_from_slice(&tr.action);
        self.rewards.push(tr.reward);
        self.dones.push(if tr.done { 1.0 } else { 0.0 });
        self.domain_ids.push(tr.domain_id);
        self.n += 1;
    }
}

/// Mixed online/offline batch: exactly one quarter online (unaugmented) and
/// three quarters offline (augmented) per batch, not just in expectation.
/// An empty online buffer falls back to fully offline batches, which is the
/// offline pretraining mode.
pub fn sample_mixed_batch(
    offline: &ReplayBuffer,
    online: &ReplayBuffer,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TransitionBatch, DatastoreError> {
    sample_mixed_batch_opts(offline, online, batch, rng, true)
}

/// Same composition with augmentation switchable off, for vector
/// observations that have no image structure.
pub fn sample_mixed_batch_opts(
    offline: &ReplayBuffer,
    online: &ReplayBuffer,
    batch: usize,
    rng: &mut ChaCha8Rng,
    augment_offline: bool,
) -> Result<TransitionBatch, DatastoreError> {
    if batch == 0 || batch % 4 != 0 {
        return Err(DatastoreError::Invalid(format!(
            "batch {batch} not divisible by 4"
        )));
    }
    if offline.is_empty() {
        return Err(DatastoreError::Invalid("offline buffer is empty".into()));
    }
    let n_online = if online.is_empty() { 0 } else { batch / 4 };
    let n_offline = batch - n_online;
    let mut out = TransitionBatch::with_capacity(batch, offline.frame_len);
    for _ in 0..n_online {
        let tr = *online.get(rng.gen_range(0..online.len()));
        out.push(online, &tr, None);
    }
    for _ in 0..n_offline {
        let tr = *offline.get(rng.gen_range(0..offline.len()));
        let draw = augment_offline.then(|| AugmentDraw::sample(rng));
        out.push(offline, &tr, draw);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_buffer(episodes: usize, frame_len: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(frame_len, 10_000);
        for e in 0..episodes {
            let t = 3;
            let frames: Vec<Vec<f32>> = (0..=t)
                .map(|i| vec![(e * 100 + i) as f32; frame_len])
                .collect();
            let actions = vec![[0.0, 0.0, -2.0]; t];
            let rewards = vec![0.0, 0.0, 1.0];
            let dones = vec![false, false, true];
            buf.push_episode(e as u32, &frames, &actions, &rewards, &dones)
                .unwrap();
        }
        buf
    }

    #[test]
    fn transitions_stay_within_episode() {
        let buf = tiny_buffer(5, 4);
        for tr in &buf.transitions {
            // Frames of one episode are tagged with the same hundreds digit.
            let s = buf.frame(tr.s)[0] as usize / 100;
            let sp = buf.frame(tr.sp)[0] as usize / 100;
            assert_eq!(s, sp);
            assert_eq!(buf.frame(tr.sp)[0] - buf.frame(tr.s)[0], 1.0);
        }
    }

    #[test]
    fn eviction_preserves_adjacency() {
        let mut buf = ReplayBuffer::new(2, 7);
        for e in 0..10 {
            let frames: Vec<Vec<f32>> = (0..=3).map(|i| vec![(e * 100 + i) as f32; 2]).collect();
            buf.push_episode(
                e as u32,
                &frames,
                &[[0.0; 3]; 3],
                &[0.0, 0.0, 1.0],
                &[false, false, true],
            )
            .unwrap();
        }
        assert!(buf.len() <= 7 + 3);
        for tr in &buf.transitions {
            assert_eq!(buf.frame(tr.sp)[0] - buf.frame(tr.s)[0], 1.0);
        }
    }

    #[test]
    fn mixed_batch_composition_is_exact() {
        let fl = pegsim::OBS_LEN;
        let offline = tiny_buffer(10, fl);
        let online = tiny_buffer(4, fl);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_mixed_batch(&offline, &online, 256, &mut rng).unwrap();
        assert_eq!(b.n, 256);
        let online_count = b.augmented.iter().filter(|a| !**a).count();
        assert_eq!(online_count, 64);
        assert_eq!(b.augmented.iter().filter(|a| **a).count(), 192);
    }

    #[test]
    fn empty_online_falls_back_to_offline() {
        let fl = pegsim::OBS_LEN;
        let offline = tiny_buffer(10, fl);
        let online = ReplayBuffer::new(fl, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_mixed_batch(&offline, &online, 64, &mut rng).unwrap();
        assert_eq!(b.n, 64);
        assert!(b.augmented.iter().all(|a| *a));
    }

    #[test]
    fn indivisible_batch_rejected() {
        let fl = pegsim::OBS_LEN;
        let offline = tiny_buffer(2, fl);
        let online = ReplayBuffer::new(fl, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mixed_batch(&offline, &online, 30, &mut rng).is_err());
    }
}
