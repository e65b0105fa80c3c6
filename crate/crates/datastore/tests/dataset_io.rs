use datastore::{collect_expert_dataset, read_dataset, write_dataset, RewardBatcher};
use pegsim::{sample_domains, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_dataset() -> datastore::Dataset {
    let set = sample_domains(4, 0, 2, 13).unwrap();
    collect_expert_dataset(&set.train, 25, Scenario::One, 99)
}

#[test]
fn write_read_roundtrip_is_bitwise() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.trajectories.len(), ds.trajectories.len());
    for (a, b) in ds.trajectories.iter().zip(&back.trajectories) {
        assert_eq!(a, b);
        assert_eq!(a.encode(), b.encode());
    }
    assert_eq!(back.manifest.global_seed, ds.manifest.global_seed);
    assert_eq!(back.manifest.domains.len(), 4);
}

#[test]
fn rewriting_is_byte_identical() {
    let ds = small_dataset();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_dataset(&ds, d1.path()).unwrap();
    write_dataset(&ds, d2.path()).unwrap();
    for entry in &ds.manifest.files {
        let a = std::fs::read(d1.path().join(&entry.path)).unwrap();
        let b = std::fs::read(d2.path().join(&entry.path)).unwrap();
        assert_eq!(a, b);
    }
    let a = std::fs::read(d1.path().join("manifest.json")).unwrap();
    let b = std::fs::read(d2.path().join("manifest.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truncated_file_is_a_corrupt_error() {
    let ds = small_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let victim = dir.path().join(&ds.manifest.files[0].path);
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, datastore::DatastoreError::Corrupt(_)), "{err}");
}

#[test]
fn empty_dataset_roundtrips() {
    let set = sample_domains(2, 0, 2, 1).unwrap();
    let ds = collect_expert_dataset(&set.train, 0, Scenario::One, 1);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert!(back.trajectories.is_empty());
    assert_eq!(back.manifest.domains.len(), 2);
}

#[test]
fn positive_frames_are_exactly_simulator_successes() {
    let ds = small_dataset();
    // Label fidelity plus replayability of the privileged states.
    for (i, traj) in ds.trajectories.iter().enumerate() {
        let states = ds.replay_states(i).unwrap();
        assert_eq!(states.len(), traj.observations.len());
        let spec = ds.domain(traj.domain_id).unwrap();
        for (t, &r) in traj.rewards.iter().enumerate() {
            let pos = states[t + 1];
            let inserted = (pos[0] - spec.socket_center.0).abs() < spec.socket_tolerance
                && (pos[1] - spec.socket_center.1).abs() < spec.socket_tolerance
                && pos[2] <= -spec.insertion_depth + 1e-4;
            if r == 1 {
                assert!(inserted, "reward frame not actually inserted");
            }
        }
        if traj.success == 1 {
            assert_eq!(*traj.rewards.last().unwrap(), 1);
        }
    }
}

#[test]
fn reward_batches_are_balanced_and_domain_uniform() {
    let ds = small_dataset();
    let batcher = RewardBatcher::new(&ds).unwrap();
    assert!(batcher.excluded_domains.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let b = batcher.next_batch(64, &mut rng).unwrap();
    assert_eq!(b.labels.iter().filter(|&&l| l == 1.0).count(), 32);
    assert_eq!(b.labels.iter().filter(|&&l| l == 0.0).count(), 32);

    // Long-run per-domain frequencies uniform within 2 percentage points.
    let mut counts = std::collections::HashMap::new();
    let draws = 100_000 / 64 * 64;
    for _ in 0..draws / 64 {
        let b = batcher.next_batch(64, &mut rng).unwrap();
        for d in b.domain_ids {
            *counts.entry(d).or_insert(0usize) += 1;
        }
    }
    let total: usize = counts.values().sum();
    let expect = 1.0 / batcher.domain_count() as f64;
    for (d, c) in counts {
        let f = c as f64 / total as f64;
        assert!(
            (f - expect).abs() < 0.02,
            "domain {d} frequency {f} vs uniform {expect}"
        );
    }
}

#[test]
fn single_domain_dataset_still_balances() {
    let set = sample_domains(1, 0, 1, 2).unwrap();
    let ds = collect_expert_dataset(&set.train, 30, Scenario::One, 5);
    let batcher = RewardBatcher::new(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = batcher.next_batch(64, &mut rng).unwrap();
    assert!(b.domain_ids.iter().all(|&d| d == set.train[0].domain_id));
    assert_eq!(b.labels.iter().filter(|&&l| l == 1.0).count(), 32);
}
