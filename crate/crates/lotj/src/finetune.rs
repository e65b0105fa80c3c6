//! Self-supervised online phase. Rollouts on the held-out domain are
//! relabeled by the learned reward classifier before they reach the
//! replay buffer; the simulator's ground-truth reward is carried only in
//! reporting fields and never enters a loss. Conv layers of every network
//! are frozen for the whole phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::Tensor;

use datastore::{buffer_from_dataset, sample_mixed_batch, Dataset, ReplayBuffer};
use pegsim::{DomainSpec, Scenario, ACTION_LIMIT, MAX_STEPS, OBS_LEN};

use crate::bundle::AgentBundle;
use crate::nets::freeze_conv_layers;
use crate::LotjError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub trials: usize,
    pub updates_per_trial: usize,
    /// Gaussian exploration std in normalized action units.
    pub exploration_std: f32,
    pub eval_every: usize,
    pub eval_episodes: u32,
    pub online_capacity: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            updates_per_trial: 20,
            exploration_std: 0.3,
            eval_every: 10,
            eval_episodes: 20,
            online_capacity: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u32,
    pub fp: u32,
    pub tn: u32,
    pub fn_: u32,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn agreement(&self) -> f32 {
        let total = self.tp + self.fp + self.tn + self.fn_;
        if total == 0 {
            return 1.0;
        }
        (self.tp + self.tn) as f32 / total as f32
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub domain_id: u32,
    pub scenario: u32,
    pub episodes: u32,
    pub successes: u32,
    pub per_trial_steps: Vec<u32>,
    pub confusion: Confusion,
}

pub fn scenario_tag(s: Scenario) -> u32 {
    match s {
        Scenario::One => 1,
        Scenario::Two => 2,
    }
}

/// Anything that can drive an episode: learned policies and the scripted
/// baselines. `peg_pos` is proprioception (the robot knows its own tip);
/// the socket position stays hidden.
pub trait Actor {
    fn name(&self) -> String;
    fn begin_episode(&mut self, start: [f32; 3], episode_seed: u64);
    fn act(&mut self, obs: &pegsim::Observation, peg_pos: [f32; 3], step: u32) -> pegsim::Action;
}

/// Deterministic rollout of an actor on fixed evaluation seeds. Ground
/// truth is consulted only to fill the report. The same `eval_seed` gives
/// every method the same start states for paired comparison.
pub fn evaluate_actor(
    actor: &mut dyn Actor,
    reward_model: Option<&crate::daibrep::RewardModel>,
    spec: &DomainSpec,
    scenario: Scenario,
    episodes: u32,
    eval_seed: u64,
) -> Result<EvalReport, LotjError> {
    let mut report = EvalReport {
        method: actor.name(),
        domain_id: spec.domain_id,
        scenario: scenario_tag(scenario),
        episodes,
        successes: 0,
        per_trial_steps: Vec::with_capacity(episodes as usize),
        confusion: Confusion::default(),
    };
    for ep in 0..episodes {
        let seed = tensorcore::mix_seed(eval_seed, &[
            spec.domain_id as u64,
            scenario_tag(scenario) as u64,
            ep as u64,
        ]);
        let mut state = pegsim::reset_seeded(spec, scenario, seed);
        actor.begin_episode(state.pos, seed);
        let mut steps = 0;
        while !state.done {
            let obs = pegsim::render(&state, spec);
            let action = actor.act(&obs, state.pos, state.steps);
            let out = pegsim::step(&mut state, spec, action)?;
            steps += 1;
            if let Some(model) = reward_model {
                let obs_next = pegsim::render(&state, spec);
                let p = model.predict_reward(&obs_next.pixels, true)?;
                report.confusion.add(p >= 0.5, out.reward > 0.5);
            }
        }
        report.per_trial_steps.push(steps);
        report.successes += state.success as u32;
    }
    Ok(report)
}

/// The learned policy as an actor: deterministic mean action with the
/// bottleneck collapsed to its mean.
pub struct PolicyActor<'a> {
    pub trainer: &'a crate::iql::IqlTrainer,
    pub label: String,
}

impl Actor for PolicyActor<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn begin_episode(&mut self, _start: [f32; 3], _seed: u64) {}

    fn act(&mut self, obs: &pegsim::Observation, _peg: [f32; 3], _step: u32) -> pegsim::Action {
        let t = Tensor::new(vec![1, OBS_LEN], obs.pixels.clone()).expect("obs shape");
        let a = self
            .trainer
            .policy
            .mean_actions(&self.trainer.policy_store, &t)
            .expect("policy forward")[0];
        pegsim::Action::new(a[0], a[1], a[2])
    }
}

pub struct TrialStats {
    pub steps: u32,
    pub predicted_return: f32,
    /// Reporting only; poisoned in the leakage test.
    pub true_return: f32,
    pub confusion: Confusion,
}

pub struct FinetuneSession {
    pub bundle: AgentBundle,
    pub offline: ReplayBuffer,
    pub online: ReplayBuffer,
    pub spec: DomainSpec,
    pub scenario: Scenario,
    pub config: FinetuneConfig,
    pub trial_count: usize,
    pub seed: u64,
    update_rng: ChaCha8Rng,
    gt_poison: Option<f32>,
}

impl FinetuneSession {
    /// Freezes conv layers across all networks and prepares the buffers.
    pub fn new(
        mut bundle: AgentBundle,
        offline_dataset: &Dataset,
        spec: DomainSpec,
        scenario: Scenario,
        config: FinetuneConfig,
        seed: u64,
    ) -> Result<Self, LotjError> {
        if bundle.train_domains.contains(&spec.domain_id) {
            return Err(LotjError::Config(format!(
                "finetune domain {} was a training domain",
                spec.domain_id
            )));
        }
        // Freeze conv layers everywhere, targets included, at exactly the
        // values pretraining left them with; the Polyak blend skips frozen
        // parameters from here on.
        freeze_conv_layers(&mut bundle.trainer.policy_store);
        freeze_conv_layers(&mut bundle.trainer.q_store);
        freeze_conv_layers(&mut bundle.trainer.v_store);
        freeze_conv_layers(&mut bundle.trainer.q_target_store);
        freeze_conv_layers(&mut bundle.trainer.v_target_store);
        let offline = buffer_from_dataset(offline_dataset)?;
        let online = ReplayBuffer::new(OBS_LEN, config.online_capacity);
        let update_rng =
            ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[spec.domain_id as u64, 0xF1]));
        Ok(Self {
            bundle,
            offline,
            online,
            spec,
            scenario,
            config,
            trial_count: 0,
            seed,
            update_rng,
            gt_poison: None,
        })
    }

    /// Replaces the simulator's reward channel with a poison value. The
    /// leakage test runs the whole loop this way: if ground truth ever
    /// reached a loss, NaN would propagate into the parameters.
    pub fn poison_ground_truth_for_testing(&mut self, poison: f32) {
        self.gt_poison = Some(poison);
    }

    /// One exploration rollout. Every stored reward is the binarized
    /// classifier output on the next observation; the episode ends on
    /// predicted success, the step cap, or a physically blocked arm.
    pub fn collect_trial(&mut self) -> Result<TrialStats, LotjError> {
        let trial = self.trial_count as u64;
        self.trial_count += 1;
        let seed = tensorcore::mix_seed(self.seed, &[
            self.spec.domain_id as u64,
            trial,
            0x0111,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = pegsim::reset(&self.spec, self.scenario, &mut rng);

        let mut frames = vec![pegsim::render(&state, &self.spec).pixels];
        let mut actions: Vec<[f32; 3]> = Vec::new();
        let mut rewards: Vec<f32> = Vec::new();
        let mut dones: Vec<bool> = Vec::new();
        let mut stats = TrialStats {
            steps: 0,
            predicted_return: 0.0,
            true_return: 0.0,
            confusion: Confusion::default(),
        };
        loop {
            let obs = Tensor::new(vec![1, OBS_LEN], frames.last().unwrap().clone())?;
            let mean = self
                .bundle
                .trainer
                .policy
                .mean_actions(&self.bundle.trainer.policy_store, &obs)?[0];
            let noise_std = self.config.exploration_std * ACTION_LIMIT;
            let action = pegsim::Action::new(
                mean[0] + noise_std * sample_gauss(&mut rng),
                mean[1] + noise_std * sample_gauss(&mut rng),
                mean[2] + noise_std * sample_gauss(&mut rng),
            )
            .clipped();
            let out = pegsim::step(&mut state, &self.spec, action)?;
            // The only read of the simulator's reward; it feeds reporting
            // fields exclusively (and is poisoned in the leakage test).
            let true_reward = self.gt_poison.unwrap_or(out.reward);
            let next_frame = pegsim::render(&state, &self.spec).pixels;
            let p = self.bundle.reward.predict_reward(&next_frame, true)?;
            let predicted_success = p >= 0.5;
            let r_hat = predicted_success as u8 as f32;
            stats.steps += 1;
            stats.predicted_return += r_hat;
            stats.true_return += true_reward;
            stats.confusion.add(predicted_success, true_reward > 0.5);

            let stop = predicted_success || state.steps >= MAX_STEPS || state.done;
            frames.push(next_frame);
            actions.push(action.as_array());
            rewards.push(r_hat);
            // The stored done flag depends only on self-supervised signals.
            dones.push(predicted_success || state.steps >= MAX_STEPS);
            if stop {
                break;
            }
        }
        self.online.push_episode(
            self.spec.domain_id,
            &frames,
            &actions,
            &rewards,
            &dones,
        )?;
        Ok(stats)
    }

    /// Mixed-replay gradient updates after a trial.
    pub fn update_phase(&mut self) -> Result<(), LotjError> {
        for _ in 0..self.config.updates_per_trial {
            let batch = sample_mixed_batch(
                &self.offline,
                &self.online,
                self.bundle.trainer.config.batch,
                &mut self.update_rng,
            )?;
            self.bundle.trainer.update(&batch, &mut self.update_rng)?;
        }
        Ok(())
    }

    pub fn evaluate(&mut self, episodes: u32, eval_seed: u64) -> Result<EvalReport, LotjError> {
        let mut actor = PolicyActor {
            trainer: &self.bundle.trainer,
            label: "lotj".into(),
        };
        evaluate_actor(
            &mut actor,
            Some(&self.bundle.reward),
            &self.spec,
            self.scenario,
            episodes,
            eval_seed,
        )
    }
}

fn sample_gauss(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample::<f32, _>(rand_distr::StandardNormal)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LearningCurve {
    /// (trial, eval successes out of eval_episodes, mean predicted reward
    /// per trial, predicted-vs-true agreement)
    pub rows: Vec<(usize, u32, f32, f32)>,
}

pub struct FinetuneOutcome {
    pub session: FinetuneSession,
    pub curve: LearningCurve,
    pub final_eval: EvalReport,
}

/// The whole online phase: alternating rollout and update phases with a
/// periodic ground-truth evaluation that is recorded but never trained on.
pub fn finetune_loop(
    mut session: FinetuneSession,
    n_trials: usize,
    eval_seed: u64,
) -> Result<FinetuneOutcome, LotjError> {
    let mut curve = LearningCurve::default();
    let mut window_pred = 0.0f32;
    let mut window_conf = Confusion::default();
    let mut window_n = 0usize;
    for trial in 0..n_trials {
        let stats = session.collect_trial()?;
        window_pred += stats.predicted_return;
        window_conf.tp += stats.confusion.tp;
        window_conf.fp += stats.confusion.fp;
        window_conf.tn += stats.confusion.tn;
        window_conf.fn_ += stats.confusion.fn_;
        window_n += 1;
        session.update_phase()?;
        if (trial + 1) % session.config.eval_every == 0 || trial + 1 == n_trials {
            let report = session.evaluate(session.config.eval_episodes, eval_seed)?;
            curve.rows.push((
                trial + 1,
                report.successes,
                window_pred / window_n.max(1) as f32,
                window_conf.agreement(),
            ));
            window_pred = 0.0;
            window_conf = Confusion::default();
            window_n = 0;
        }
    }
    let final_eval = session.evaluate(session.config.eval_episodes, eval_seed)?;
    Ok(FinetuneOutcome {
        session,
        curve,
        final_eval,
    })
}

/// FNV-1a over the bit patterns of every conv parameter; the freeze
/// invariant compares this before and after the online phase.
pub fn conv_param_hash(bundle: &AgentBundle) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |store: &tensorcore::ParamStore| {
        for id in store.ids() {
            if store.name(id).contains(".conv") {
                for v in store.get(id).data() {
                    for b in v.to_le_bytes() {
                        h ^= b as u64;
                        h = h.wrapping_mul(0x1000_0000_01b3);
                    }
                }
            }
        }
    };
    eat(&bundle.trainer.policy_store);
    eat(&bundle.trainer.q_store);
    eat(&bundle.trainer.v_store);
    eat(&bundle.trainer.q_target_store);
    eat(&bundle.trainer.v_target_store);
    h
}
