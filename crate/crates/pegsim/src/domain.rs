//! Domain family generation. A domain is one connector/socket variant;
//! domains cluster into groups that share insertion depth and tolerance
//! while styles, socket positions and peg widths vary per domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::PegSimError;

/// Visual styling of one domain. `texture_seed` keys the procedural
/// background; intensities are the grayscale levels of peg and socket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub background_pattern: u32,
    pub peg_intensity: f32,
    pub socket_intensity: f32,
    pub texture_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain_id: u32,
    pub group_id: u32,
    /// (x, y) in workspace millimetres.
    pub socket_center: (f32, f32),
    /// Half-width of the acceptance region, mm.
    pub socket_tolerance: f32,
    /// Depth below the surface required for success, mm.
    pub insertion_depth: f32,
    pub peg_width: f32,
    pub style: Style,
    /// Which rig collected this domain; pure nuisance variation.
    pub robot_id: u32,
}

pub const TOLERANCE_RANGE: (f32, f32) = (0.5, 1.5);
pub const DEPTH_RANGE: (f32, f32) = (2.0, 6.0);
pub const SOCKET_RANGE: f32 = 10.0;
pub const PEG_WIDTH_RANGE: (f32, f32) = (3.0, 5.0);
pub const N_PATTERNS: u32 = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainSet {
    pub train: Vec<DomainSpec>,
    pub test: Vec<DomainSpec>,
}

impl DomainSet {
    pub fn all(&self) -> impl Iterator<Item = &DomainSpec> {
        self.train.iter().chain(self.test.iter())
    }

    pub fn by_id(&self, domain_id: u32) -> Option<&DomainSpec> {
        self.all().find(|d| d.domain_id == domain_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("domain set serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PegSimError> {
        let set: DomainSet =
            serde_json::from_str(s).map_err(|e| PegSimError::Manifest(e.to_string()))?;
        for d in set.all() {
            validate_spec(d)?;
        }
        Ok(set)
    }
}

pub fn validate_spec(d: &DomainSpec) -> Result<(), PegSimError> {
    let ok = d.socket_tolerance >= TOLERANCE_RANGE.0
        && d.socket_tolerance <= TOLERANCE_RANGE.1
        && d.insertion_depth >= DEPTH_RANGE.0
        && d.insertion_depth <= DEPTH_RANGE.1
        && d.peg_width >= PEG_WIDTH_RANGE.0
        && d.peg_width <= PEG_WIDTH_RANGE.1
        && d.socket_center.0.abs() <= SOCKET_RANGE
        && d.socket_center.1.abs() <= SOCKET_RANGE
        && d.style.peg_intensity.is_finite()
        && d.style.socket_intensity.is_finite();
    if ok {
        Ok(())
    } else {
        Err(PegSimError::Manifest(format!(
            "domain {} violates spec ranges",
            d.domain_id
        )))
    }
}

struct GroupParams {
    tolerance: f32,
    depth: f32,
}

fn sample_style(rng: &mut ChaCha8Rng) -> Style {
    Style {
        background_pattern: rng.gen_range(0..N_PATTERNS),
        peg_intensity: rng.gen_range(0.55..0.95),
        socket_intensity: rng.gen_range(0.55..0.95),
        texture_seed: rng.gen(),
    }
}

fn sample_spec(
    domain_id: u32,
    group_id: u32,
    params: &GroupParams,
    rng: &mut ChaCha8Rng,
) -> DomainSpec {
    DomainSpec {
        domain_id,
        group_id,
        socket_center: (
            rng.gen_range(-SOCKET_RANGE..SOCKET_RANGE),
            rng.gen_range(-SOCKET_RANGE..SOCKET_RANGE),
        ),
        socket_tolerance: params.tolerance,
        insertion_depth: params.depth,
        peg_width: rng.gen_range(PEG_WIDTH_RANGE.0..PEG_WIDTH_RANGE.1),
        style: sample_style(rng),
        robot_id: rng.gen_range(0..2),
    }
}

/// Draws a deterministic domain family: `n_train` training domains split
/// evenly over `n_groups` groups, plus `n_test` held-out domains that reuse
/// existing groups but get fresh styles and socket positions.
pub fn sample_domains(
    n_train: usize,
    n_test: usize,
    n_groups: usize,
    seed: u64,
) -> Result<DomainSet, PegSimError> {
    if n_groups == 0 || n_train == 0 {
        return Err(PegSimError::InvalidConfig(
            "need at least one group and one training domain".into(),
        ));
    }
    if n_groups > n_train {
        return Err(PegSimError::InvalidConfig(format!(
            "{n_groups} groups exceed {n_train} training domains"
        )));
    }
    if n_train % n_groups != 0 {
        return Err(PegSimError::InvalidConfig(format!(
            "{n_groups} groups do not divide {n_train} training domains"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0xD0_17]));
    // Depths sampled from the deeper half of the valid range so partial
    // insertions (the frames only group-level information can label) are a
    // substantial share of every trajectory.
    let groups: Vec<GroupParams> = (0..n_groups)
        .map(|_| GroupParams {
            tolerance: rng.gen_range(TOLERANCE_RANGE.0..TOLERANCE_RANGE.1),
            depth: rng.gen_range(4.0..DEPTH_RANGE.1),
        })
        .collect();

    let train = (0..n_train)
        .map(|i| {
            let group_id = (i % n_groups) as u32;
            sample_spec(i as u32, group_id, &groups[group_id as usize], &mut rng)
        })
        .collect();
    let test = (0..n_test)
        .map(|i| {
            let group_id = (i % n_groups) as u32;
            sample_spec(
                (n_train + i) as u32,
                group_id,
                &groups[group_id as usize],
                &mut rng,
            )
        })
        .collect();
    Ok(DomainSet { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_family_shape() {
        let set = sample_domains(12, 4, 4, 7).unwrap();
        assert_eq!(set.train.len(), 12);
        assert_eq!(set.test.len(), 4);
        for g in 0..4u32 {
            assert_eq!(set.train.iter().filter(|d| d.group_id == g).count(), 3);
        }
        // Group-shared geometry, per-domain style.
        for d in set.all() {
            let peer = set
                .train
                .iter()
                .find(|p| p.group_id == d.group_id && p.domain_id != d.domain_id)
                .unwrap();
            assert_eq!(d.insertion_depth, peer.insertion_depth);
            assert_eq!(d.socket_tolerance, peer.socket_tolerance);
            assert_ne!(d.style.texture_seed, peer.style.texture_seed);
        }
        // Held-out domains do not clone a training domain.
        for t in &set.test {
            for tr in &set.train {
                assert!(t.socket_center != tr.socket_center || t.style != tr.style);
            }
        }
    }

    #[test]
    fn no_test_domains_is_fine() {
        let set = sample_domains(4, 0, 4, 3).unwrap();
        assert_eq!(set.train.len(), 4);
        assert!(set.test.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_domains(8, 2, 4, 99).unwrap();
        let b = sample_domains(8, 2, 4, 99).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn bad_group_counts_rejected() {
        assert!(sample_domains(4, 0, 5, 1).is_err());
        assert!(sample_domains(9, 0, 4, 1).is_err());
        assert!(sample_domains(0, 0, 1, 1).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let set = sample_domains(4, 2, 2, 11).unwrap();
        let json = set.to_json();
        // Exact wire field names.
        for key in [
            "domain_id",
            "group_id",
            "socket_center",
            "socket_tolerance",
            "insertion_depth",
            "peg_width",
            "style",
            "robot_id",
            "background_pattern",
            "texture_seed",
        ] {
            assert!(json.contains(key), "manifest missing field {key}");
        }
        let back = DomainSet::from_json(&json).unwrap();
        assert_eq!(back.train, set.train);
        assert_eq!(back.test, set.test);
    }
}
