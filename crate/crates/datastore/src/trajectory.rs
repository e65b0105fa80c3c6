//! Trajectory binary format.
//!
//! Layout, all little-endian: magic `TRJ1`, u32 version, u32 domain_id,
//! u32 T, u32 h, u32 w, u32 c, u32 action_dim, then `(T+1)*h*w*c` f32
//! observations, `T*action_dim` f32 actions, T reward bytes, one success
//! byte. The encoding is self-delimiting; trailing bytes are rejected.

use crate::DatastoreError;

pub const MAGIC: &[u8; 4] = b"TRJ1";
pub const VERSION: u32 = 1;

const MAX_T: u32 = 20;
const MAX_DIM: u32 = 256;
const MAX_ACTION_DIM: u32 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub domain_id: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub action_dim: u32,
    /// T+1 frames of h*w*c floats each.
    pub observations: Vec<Vec<f32>>,
    /// T actions of `action_dim` floats each.
    pub actions: Vec<Vec<f32>>,
    /// T sparse rewards; at most one 1 and it is terminal.
    pub rewards: Vec<u8>,
    pub success: u8,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        (self.height * self.width * self.channels) as usize
    }

    pub fn validate(&self) -> Result<(), DatastoreError> {
        let t = self.actions.len();
        if t == 0 || t > MAX_T as usize {
            return Err(DatastoreError::Invalid(format!(
                "trajectory length {t} outside 1..={MAX_T}"
            )));
        }
        if self.observations.len() != t + 1 {
            return Err(DatastoreError::Invalid(format!(
                "{} observations for {t} steps",
                self.observations.len()
            )));
        }
        if self.rewards.len() != t {
            return Err(DatastoreError::Invalid("reward count mismatch".into()));
        }
        let fl = self.frame_len();
        if fl == 0 || self.observations.iter().any(|o| o.len() != fl) {
            return Err(DatastoreError::Invalid("frame length mismatch".into()));
        }
        if self
            .actions
            .iter()
            .any(|a| a.len() != self.action_dim as usize)
        {
            return Err(DatastoreError::Invalid("action length mismatch".into()));
        }
        if self.rewards.iter().any(|&r| r > 1) {
            return Err(DatastoreError::Invalid("rewards must be 0 or 1".into()));
        }
        let ones: Vec<usize> = (0..t).filter(|&i| self.rewards[i] == 1).collect();
        match ones.as_slice() {
            [] => {
                if self.success != 0 {
                    return Err(DatastoreError::Invalid(
                        "success flag set without a reward".into(),
                    ));
                }
            }
            [i] => {
                if *i != t - 1 || self.success != 1 {
                    return Err(DatastoreError::Invalid(
                        "positive reward must be terminal and match success".into(),
                    ));
                }
            }
            _ => {
                return Err(DatastoreError::Invalid(
                    "more than one positive reward".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let t = self.actions.len() as u32;
        let mut out = Vec::with_capacity(64 + self.observations.len() * self.frame_len() * 4);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.domain_id,
            t,
            self.height,
            self.width,
            self.channels,
            self.action_dim,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for frame in &self.observations {
            for &f in frame {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        for a in &self.actions {
            for &f in a {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.rewards);
        out.push(self.success);
        out
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatastoreError> {
        if self.buf.len() - self.pos < n {
            return Err(DatastoreError::Corrupt(format!(
                "truncated while reading {what}: need {n}, have {}",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatastoreError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, DatastoreError> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Trajectory, DatastoreError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(DatastoreError::Corrupt(format!("bad magic {magic:02x?}")));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(DatastoreError::Corrupt(format!(
            "unsupported version {version}"
        )));
    }
    let domain_id = c.u32("domain id")?;
    let t = c.u32("step count")?;
    let h = c.u32("height")?;
    let w = c.u32("width")?;
    let ch = c.u32("channels")?;
    let action_dim = c.u32("action dim")?;
    if t == 0 || t > MAX_T {
        return Err(DatastoreError::Corrupt(format!(
            "step count {t} outside 1..={MAX_T}"
        )));
    }
    if h == 0 || w == 0 || ch == 0 || h > MAX_DIM || w > MAX_DIM || ch > MAX_DIM {
        return Err(DatastoreError::Corrupt(format!(
            "image dims {h}x{w}x{ch} out of range"
        )));
    }
    if action_dim == 0 || action_dim > MAX_ACTION_DIM {
        return Err(DatastoreError::Corrupt(format!(
            "action dim {action_dim} out of range"
        )));
    }
    let frame_len = (h * w * ch) as usize;
    // All sizes now bounded: (21 * 256^3 + 20*16) floats worst case, and the
    // actual byte length is checked before each allocation by take().
    let mut observations = Vec::with_capacity(t as usize + 1);
    for _ in 0..=t {
        observations.push(c.f32s(frame_len, "observation frame")?);
    }
    let mut actions = Vec::with_capacity(t as usize);
    for _ in 0..t {
        actions.push(c.f32s(action_dim as usize, "action")?);
    }
    let rewards = c.take(t as usize, "rewards")?.to_vec();
    let success = c.take(1, "success byte")?[0];
    if c.pos != bytes.len() {
        return Err(DatastoreError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let traj = Trajectory {
        domain_id,
        height: h,
        width: w,
        channels: ch,
        action_dim,
        observations,
        actions,
        rewards,
        success,
    };
    traj.validate().map_err(|e| match e {
        DatastoreError::Invalid(m) => DatastoreError::Corrupt(m),
        other => other,
    })?;
    Ok(traj)
}
