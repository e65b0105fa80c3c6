// Scratch harness for the offline->online policy pipeline (not shipped).
use datastore::collect_expert_dataset;
use lotj::bundle::offline_pretrain;
use lotj::daibrep::{train_reward_model, DaibVariant, RewardTrainConfig};
use lotj::finetune::{evaluate_actor, finetune_loop, FinetuneConfig, FinetuneSession, PolicyActor};
use lotj::iql::IqlConfig;
use pegsim::{sample_domains, Scenario};

fn main() {
    let t0 = std::time::Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let pretrain_steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let n_traj: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(150);
    let trials: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(200);
    let use_daib_policy: bool = args.get(4).map(|s| s == "daib").unwrap_or(true);
    let policy_adv: f32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let stamp = |m: &str| eprintln!("[{:7.1}s] {m}", t0.elapsed().as_secs_f32());

    let set = sample_domains(12, 4, 4, 7).unwrap();
    let train_ds = collect_expert_dataset(&set.train, n_traj, Scenario::One, 99);
    stamp(&format!("dataset: {} trajs", train_ds.trajectories.len()));

    let rcfg = RewardTrainConfig {
        steps: 1500,
        ..Default::default()
    };
    let (reward, _) = train_reward_model(&train_ds, DaibVariant::Daib, rcfg, 1).unwrap();
    stamp("reward model trained");

    // Check reward model FP rate on scenario II states (policy-visited OOD).
    let spec = &set.test[0];
    let mut fp = 0;
    let mut n = 0;
    for ep in 0..40u64 {
        let seed = pegsim::episode_seed(555, spec.domain_id, ep);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let mut s = pegsim::reset(spec, Scenario::Two, &mut rng);
        while !s.done {
            let a = pegsim::Action::new(
                rand::Rng::gen_range(&mut rng, -2.0..2.0),
                rand::Rng::gen_range(&mut rng, -2.0..2.0),
                rand::Rng::gen_range(&mut rng, -2.0..2.0),
            );
            let out = pegsim::step(&mut s, spec, a).unwrap();
            let obs = pegsim::render(&s, spec);
            let p = reward.predict_reward(&obs.pixels, true).unwrap();
            if p >= 0.5 && out.reward < 0.5 {
                fp += 1;
            }
            n += 1;
        }
    }
    stamp(&format!("reward FP on random scenario-II rollouts: {fp}/{n}"));

    let heldout: Vec<u32> = set.test.iter().map(|d| d.domain_id).collect();
    let iql = IqlConfig {
        steps: pretrain_steps,
        use_daib_policy,
        adv_weight: policy_adv,
        report_every: 500,
        ..Default::default()
    };
    let (bundle, curve) = offline_pretrain(&train_ds, &heldout, iql, 1, reward).unwrap();
    for p in &curve.points {
        eprintln!("  step {:5}: q {:.4} v {:.4} pi {:.3}", p.0, p.1, p.2, p.3);
    }
    stamp("pretrained");

    // In-distribution policy quality, scenario I.
    let mut total_succ = 0;
    let mut total_eps = 0;
    for spec in set.train.iter().take(4) {
        let mut actor = PolicyActor {
            trainer: &bundle.trainer,
            label: "offline".into(),
        };
        let rep = evaluate_actor(&mut actor, None, spec, Scenario::One, 20, 777).unwrap();
        total_succ += rep.successes;
        total_eps += rep.episodes;
    }
    stamp(&format!(
        "offline policy, train domains, scenario I: {total_succ}/{total_eps}"
    ));

    // Held-out offline performance, both scenarios.
    for spec in &set.test {
        let mut actor = PolicyActor {
            trainer: &bundle.trainer,
            label: "offline".into(),
        };
        let r1 = evaluate_actor(&mut actor, None, spec, Scenario::One, 20, 777).unwrap();
        let r2 = evaluate_actor(&mut actor, None, spec, Scenario::Two, 20, 777).unwrap();
        stamp(&format!(
            "held-out d{}: scenario I {}/20, scenario II {}/20",
            spec.domain_id, r1.successes, r2.successes
        ));
    }

    // Finetune on the first held-out domain, scenario II.
    let fcfg = FinetuneConfig {
        trials,
        ..Default::default()
    };
    let session = FinetuneSession::new(
        bundle,
        &train_ds,
        set.test[0].clone(),
        Scenario::Two,
        fcfg,
        1,
    )
    .unwrap();
    let outcome = finetune_loop(session, trials, 777).unwrap();
    for row in &outcome.curve.rows {
        eprintln!(
            "  trial {:3}: eval {}/20, pred_ret {:.2}, agree {:.3}",
            row.0, row.1, row.2, row.3
        );
    }
    stamp(&format!(
        "final after {} trials: {}/20",
        trials, outcome.final_eval.successes
    ));
}
