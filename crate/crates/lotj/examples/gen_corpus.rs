// Writes seed inputs for the fuzz targets (run once; outputs are checked in).
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let root = std::path::Path::new("fuzz/corpus");
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Checkpoint seeds: a small two-tensor file and a truncation.
    let entries = vec![
        ("net.w".to_string(), tensorcore::Tensor::randn(&[3, 2], 1.0, &mut rng)),
        ("net.b".to_string(), tensorcore::Tensor::zeros(&[2])),
    ];
    let bytes = tensorcore::checkpoint::encode(&entries);
    std::fs::write(root.join("checkpoint_decode/small.nnw"), &bytes).unwrap();
    std::fs::write(root.join("checkpoint_decode/truncated.nnw"), &bytes[..bytes.len() / 2]).unwrap();

    // Trajectory seeds from a real rollout.
    let set = pegsim::sample_domains(2, 0, 2, 3).unwrap();
    let ds = datastore::collect_expert_dataset(&set.train, 2, pegsim::Scenario::One, 5);
    let tb = ds.trajectories[0].encode();
    std::fs::write(root.join("trajectory_decode/episode.traj"), &tb).unwrap();
    std::fs::write(root.join("trajectory_decode/truncated.traj"), &tb[..tb.len() / 3]).unwrap();
    std::fs::write(root.join("trajectory_roundtrip/episode.traj"), &tb).unwrap();

    // Manifest and config JSON seeds.
    std::fs::write(root.join("manifest_decode/domains.json"), set.to_json()).unwrap();
    std::fs::write(
        root.join("config_decode/default.json"),
        lotj::ExperimentConfig::default().resolved_json(),
    )
    .unwrap();
    std::fs::write(root.join("config_decode/partial.json"), r#"{"seed": 3, "n_groups": 2}"#).unwrap();
    println!("corpus written");
}
