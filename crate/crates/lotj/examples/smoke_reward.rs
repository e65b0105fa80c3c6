// Scratch harness for sizing the reward-classifier experiment (not shipped).
use datastore::collect_expert_dataset;
use lotj::daibrep::{eval_holdout_accuracy, train_reward_model, DaibVariant, RewardTrainConfig};
use pegsim::{sample_domains, Scenario};

fn main() {
    let t0 = std::time::Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let n_traj: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);

    let set = sample_domains(12, 4, 4, 7).unwrap();
    let train_ds = collect_expert_dataset(&set.train, n_traj, Scenario::One, 99);
    let test_ds = collect_expert_dataset(&set.test, 60, Scenario::One, 101);
    eprintln!(
        "[{:.1}s] dataset: {} train trajs, {} test trajs",
        t0.elapsed().as_secs_f32(),
        train_ds.trajectories.len(),
        test_ds.trajectories.len()
    );

    let cfg = RewardTrainConfig {
        steps,
        batch: 64,
        lr: 3e-4,
        lambda: 0.01,
        grad_clip: 10.0,
        report_every: 500,
    };
    for variant in [DaibVariant::Daib, DaibVariant::Erm, DaibVariant::Dann, DaibVariant::Vib] {
        let (model, curve) = train_reward_model(&train_ds, variant, cfg, 1).unwrap();
        let train_acc = eval_holdout_accuracy(&model, &test_ds, 5).unwrap();
        // in-distribution accuracy: eval on train dataset needs label-set trick;
        // use the batcher directly
        let batcher = datastore::RewardBatcher::new(&train_ds).unwrap();
        let eval_in = batcher.balanced_eval_set(50, 5);
        let acc_in = lotj::daibrep::accuracy_on(&model, &eval_in).unwrap();
        eprintln!(
            "[{:.1}s] {:8} heldout {:.3} in-dist {:.3} curve_last {:?}",
            t0.elapsed().as_secs_f32(),
            variant.name(),
            train_acc.mean,
            acc_in.mean,
            curve.points.last().unwrap()
        );
        for (d, a) in &train_acc.per_domain {
            eprint!("    d{d}: {a:.3}");
        }
        eprintln!();
    }
}
