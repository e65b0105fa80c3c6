// diagnose domain 13 prediction behavior
use datastore::collect_expert_dataset;
use lotj::daibrep::{train_reward_model, DaibVariant, RewardTrainConfig};
use pegsim::{sample_domains, Scenario};

fn main() {
    let set = sample_domains(12, 4, 4, 7).unwrap();
    let train_ds = collect_expert_dataset(&set.train, 100, Scenario::One, 99);
    let test_ds = collect_expert_dataset(&set.test, 60, Scenario::One, 101);
    let cfg = RewardTrainConfig { steps: 1500, batch: 64, lr: 3e-4, lambda: 0.01, grad_clip: 10.0, report_every: 1000 };
    let (model, _) = train_reward_model(&train_ds, DaibVariant::Erm, cfg, 1).unwrap();

    // group 1 = domains 1, 5, 9 (train) and 13 (test)
    for did in [1u32, 5, 9, 13] {
        let ds = if did == 13 { &test_ds } else { &train_ds };
        let mut pos_p = Vec::new();
        let mut neg_deep_p = Vec::new();
        let mut neg_air_p = Vec::new();
        for (i, t) in ds.trajectories.iter().enumerate().filter(|(_, t)| t.domain_id == did) {
            let states = ds.replay_states(i).unwrap();
            for (k, (_, r)) in datastore::reward_frames(t).enumerate() {
                let obs = &t.observations[k + 1];
                let p = model.predict_reward(obs, true).unwrap();
                if r == 1 { pos_p.push(p); }
                else if states[k + 1][2] < -0.2 { neg_deep_p.push(p); }
                else { neg_air_p.push(p); }
            }
        }
        let stats = |v: &Vec<f32>| {
            if v.is_empty() { return (0.0, 0.0, 0usize); }
            let mean = v.iter().sum::<f32>() / v.len() as f32;
            let above = v.iter().filter(|p| **p >= 0.5).count() as f32 / v.len() as f32;
            (mean, above, v.len())
        };
        println!("domain {did}: pos {:?} | neg_subsurface {:?} | neg_air {:?}", stats(&pos_p), stats(&neg_deep_p), stats(&neg_air_p));
    }
    let spec13 = set.test.iter().find(|d| d.domain_id == 13).unwrap();
    let spec1 = set.train.iter().find(|d| d.domain_id == 1).unwrap();
    println!("d1 style {:?} center {:?}", spec1.style, spec1.socket_center);
    println!("d13 style {:?} center {:?}", spec13.style, spec13.socket_center);
}
