//! Tabular oracle for the IQL learner: a 5-state deterministic chain with
//! a terminal reward, where value iteration gives exact answers and the
//! expectile fixpoint is analytically close to Q*.

use lotj::iql::{IqlConfig, IqlTrainer, OnlineDomainMode};
use lotj::nets::ObsKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::Tensor;

const N_STATES: usize = 5;
const GAMMA: f32 = 0.9;

fn one_hot(s: usize) -> Vec<f32> {
    let mut v = vec![0.0; N_STATES];
    v[s] = 1.0;
    v
}

const RIGHT: [f32; 3] = [1.0, 0.0, 0.0];
const LEFT: [f32; 3] = [-1.0, 0.0, 0.0];

/// Value iteration on the chain: moving right from 3 terminates with
/// reward 1; left from 0 stays put; everything else is deterministic.
fn value_iteration() -> Vec<[f32; 2]> {
    // q[s] = [Q*(s, left), Q*(s, right)] for s in 0..4 (4 is terminal).
    let mut q = vec![[0.0f32; 2]; N_STATES - 1];
    for _ in 0..200 {
        let v = |s: usize| -> f32 {
            if s >= N_STATES - 1 {
                0.0
            } else {
                q[s][0].max(q[s][1])
            }
        };
        let mut next = q.clone();
        for s in 0..N_STATES - 1 {
            next[s][0] = GAMMA * v(s.saturating_sub(1));
            next[s][1] = if s + 1 == N_STATES - 1 {
                1.0
            } else {
                GAMMA * v(s + 1)
            };
        }
        q = next;
    }
    q
}

fn collect_chain_buffer(episodes: usize, seed: u64) -> datastore::ReplayBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = datastore::ReplayBuffer::new(N_STATES, 1_000_000);
    for _ in 0..episodes {
        let mut s = rng.gen_range(0..N_STATES - 1);
        let mut frames = vec![one_hot(s)];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut dones = Vec::new();
        loop {
            let right = rng.gen_bool(0.5);
            let next = if right {
                s + 1
            } else {
                s.saturating_sub(1)
            };
            let terminal = next == N_STATES - 1;
            frames.push(one_hot(next));
            actions.push(if right { RIGHT } else { LEFT });
            rewards.push(if terminal { 1.0 } else { 0.0 });
            dones.push(terminal);
            s = next;
            if terminal {
                break;
            }
        }
        buf.push_episode(0, &frames, &actions, &rewards, &dones)
            .unwrap();
    }
    buf
}

fn train_chain(seed: u64) -> IqlTrainer {
    let config = IqlConfig {
        gamma: GAMMA,
        tau_exp: 0.95,
        beta: 1.0,
        w_max: 100.0,
        polyak: 0.01,
        batch: 32,
        steps: 4000,
        lr: 1e-3,
        lambda: 0.0,
        adv_weight: 0.0,
        policy_std: 0.1,
        use_daib_policy: false,
        literal_double_square: false,
        grad_clip: 10.0,
        online_domain_mode: OnlineDomainMode::Exclude,
        report_every: 1000,
    };
    let buf = collect_chain_buffer(400, tensorcore::mix_seed(seed, &[1]));
    let empty = datastore::ReplayBuffer::new(N_STATES, 1);
    let mut trainer = IqlTrainer::new(ObsKind::Vector(N_STATES), config, vec![], seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[2]));
    for _ in 0..config.steps {
        let batch =
            datastore::sample_mixed_batch_opts(&buf, &empty, config.batch, &mut rng, false)
                .unwrap();
        trainer.update(&batch, &mut rng).unwrap();
    }
    trainer
}

fn learned_q(trainer: &IqlTrainer, s: usize, right: bool) -> f32 {
    let obs = Tensor::new(vec![1, N_STATES], one_hot(s)).unwrap();
    let act = Tensor::new(
        vec![1, 3],
        (if right { RIGHT } else { LEFT })
            .iter()
            .map(|a| a / pegsim::ACTION_LIMIT)
            .collect(),
    )
    .unwrap();
    trainer.q.values(&trainer.q_store, &obs, &act).unwrap()[0]
}

#[test]
fn learned_q_matches_value_iteration_three_seeds() {
    let qstar = value_iteration();
    for seed in [11u64, 12, 13] {
        let trainer = train_chain(seed);
        for s in 0..N_STATES - 1 {
            for (i, right) in [(0usize, false), (1usize, true)] {
                let q = learned_q(&trainer, s, right);
                let target = qstar[s][i];
                assert!(
                    (q - target).abs() <= 0.05,
                    "seed {seed} state {s} right={right}: learned {q} vs Q* {target}"
                );
            }
        }
    }
}

#[test]
fn v_lies_within_q_range_on_dataset_states() {
    let trainer = train_chain(21);
    for s in 0..N_STATES - 1 {
        let obs = Tensor::new(vec![1, N_STATES], one_hot(s)).unwrap();
        let v = trainer.v.values(&trainer.v_store, &obs).unwrap()[0];
        let ql = learned_q(&trainer, s, false);
        let qr = learned_q(&trainer, s, true);
        let (lo, hi) = (ql.min(qr), ql.max(qr));
        assert!(
            v >= lo - 0.05 && v <= hi + 0.05,
            "state {s}: V {v} outside [{lo}, {hi}]"
        );
    }
}

#[test]
fn awr_prefers_the_higher_advantage_action() {
    // Two-state bandit: from state 0, right is strictly better. The policy
    // trained with advantage weighting must put its mean action on the
    // positive side, and adding a constant to all Q values must not change
    // the argmax.
    let trainer = train_chain(31);
    let obs = Tensor::new(vec![1, N_STATES], one_hot(3)).unwrap();
    let mean = trainer
        .policy
        .mean_actions(&trainer.policy_store, &obs)
        .unwrap()[0];
    assert!(
        mean[0] > 0.0,
        "policy mean dx {} should prefer the rewarding direction",
        mean[0]
    );
    // Argmax invariance to constant Q shifts: advantages subtract V, so
    // compare preferences computed from shifted Q values directly.
    let ql = learned_q(&trainer, 3, false);
    let qr = learned_q(&trainer, 3, true);
    assert!(qr > ql);
    let shift = 5.0;
    assert!((qr + shift) > (ql + shift));
}

#[test]
fn zero_reward_dataset_learns_zero_q() {
    // gamma = 0 and all rewards 0: Q should collapse to 0 on dataset states.
    let mut config = IqlConfig {
        gamma: 0.0,
        steps: 800,
        lr: 1e-3,
        use_daib_policy: false,
        adv_weight: 0.0,
        lambda: 0.0,
        batch: 32,
        ..Default::default()
    };
    config.tau_exp = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut buf = datastore::ReplayBuffer::new(N_STATES, 100_000);
    for _ in 0..50 {
        let frames: Vec<Vec<f32>> = (0..6).map(|_| one_hot(rng.gen_range(0..N_STATES))).collect();
        let actions = vec![RIGHT; 5];
        let rewards = vec![0.0; 5];
        let dones = vec![false, false, false, false, true];
        buf.push_episode(0, &frames, &actions, &rewards, &dones).unwrap();
    }
    let empty = datastore::ReplayBuffer::new(N_STATES, 1);
    let mut trainer = IqlTrainer::new(ObsKind::Vector(N_STATES), config, vec![], 3).unwrap();
    for _ in 0..config.steps {
        let batch =
            datastore::sample_mixed_batch_opts(&buf, &empty, config.batch, &mut rng, false)
                .unwrap();
        trainer.update(&batch, &mut rng).unwrap();
    }
    for s in 0..N_STATES {
        let q = learned_q(&trainer, s, true);
        assert!(q.abs() < 0.05, "state {s}: q {q} should be near zero");
    }
}
