//! Comparison strategies: scripted searches, a learned socket localizer
//! with hand-designed control, their composition, and state-based IQL.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::nn::Binding;
use tensorcore::{Adam, AdamConfig, Graph, Linear, ParamStore, Tensor};

use datastore::{replay::sample_mixed_batch_opts, Dataset};
use pegsim::{Action, Observation, ACTION_LIMIT, OBS_LEN};

use crate::finetune::Actor;
use crate::iql::{IqlConfig, IqlTrainer};
use crate::nets::{ConvBackbone, ObsKind, FEATURE_DIM};
use crate::LotjError;

const PRESS: f32 = -2.0;
/// Reaching this close to a waypoint advances to the next one.
const WAYPOINT_EPS: f32 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    StraightDown,
    RandomSearch,
    SpiralSearch,
}

impl SearchKind {
    pub fn name(&self) -> &'static str {
        match self {
            SearchKind::StraightDown => "straight_down",
            SearchKind::RandomSearch => "random_search",
            SearchKind::SpiralSearch => "spiral_search",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchParams {
    pub probe_points: usize,
    pub probe_radius: f32,
    /// Spiral pitch: radial growth per revolution, mm.
    pub spiral_pitch: f32,
    /// Angular advance per step, degrees.
    pub spiral_step_deg: f32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            probe_points: 5,
            probe_radius: 3.0,
            spiral_pitch: 1.0,
            // 30 deg/step cannot reach a 2 mm offset inside the 20-step
            // budget (the spiral only attains r = 1.67 mm by step 20); 45
            // keeps full coverage with margin.
            spiral_step_deg: 45.0,
        }
    }
}

/// Stateful-within-episode scripted search. Pure function of (step index,
/// episode RNG, initial position), so episodes are replayable.
pub struct SearchActor {
    pub kind: SearchKind,
    pub params: SearchParams,
    origin: [f32; 2],
    waypoints: Vec<[f32; 2]>,
    next_waypoint: usize,
    spiral_k: u32,
}

impl SearchActor {
    pub fn new(kind: SearchKind, params: SearchParams) -> Self {
        Self {
            kind,
            params,
            origin: [0.0, 0.0],
            waypoints: Vec::new(),
            next_waypoint: 0,
            spiral_k: 0,
        }
    }
}

impl Actor for SearchActor {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn begin_episode(&mut self, start: [f32; 3], episode_seed: u64) {
        self.origin = [start[0], start[1]];
        self.next_waypoint = 0;
        self.spiral_k = 0;
        self.waypoints.clear();
        if self.kind == SearchKind::RandomSearch {
            let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(episode_seed, &[0x5EA2]));
            let r = self.params.probe_radius;
            self.waypoints = (0..self.params.probe_points)
                .map(|_| {
                    [
                        self.origin[0] + rng.gen_range(-r..r),
                        self.origin[1] + rng.gen_range(-r..r),
                    ]
                })
                .collect();
        }
    }

    fn act(&mut self, _obs: &Observation, peg: [f32; 3], _step: u32) -> Action {
        match self.kind {
            SearchKind::StraightDown => Action::new(0.0, 0.0, PRESS),
            SearchKind::RandomSearch => {
                while self.next_waypoint < self.waypoints.len() {
                    let wp = self.waypoints[self.next_waypoint];
                    let d = ((peg[0] - wp[0]).powi(2) + (peg[1] - wp[1]).powi(2)).sqrt();
                    if d > WAYPOINT_EPS {
                        return Action::new(
                            (wp[0] - peg[0]).clamp(-ACTION_LIMIT, ACTION_LIMIT),
                            (wp[1] - peg[1]).clamp(-ACTION_LIMIT, ACTION_LIMIT),
                            PRESS,
                        );
                    }
                    self.next_waypoint += 1;
                }
                Action::new(0.0, 0.0, PRESS)
            }
            SearchKind::SpiralSearch => {
                // Archimedean spiral r = pitch * theta / 2pi around the
                // start, advanced one angular increment per step.
                self.spiral_k += 1;
                let theta = self.spiral_k as f32 * self.params.spiral_step_deg.to_radians();
                let r = self.params.spiral_pitch * theta / std::f32::consts::TAU;
                let wp = [
                    self.origin[0] + r * theta.cos(),
                    self.origin[1] + r * theta.sin(),
                ];
                Action::new(
                    (wp[0] - peg[0]).clamp(-ACTION_LIMIT, ACTION_LIMIT),
                    (wp[1] - peg[1]).clamp(-ACTION_LIMIT, ACTION_LIMIT),
                    PRESS,
                )
            }
        }
    }
}

// ---------------------------------------------------------------------
// Learned socket localizer
// ---------------------------------------------------------------------

const SOCKET_SCALE: f32 = 10.0;

pub struct Localizer {
    pub store: ParamStore,
    backbone: ConvBackbone,
    head: Linear,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 64,
            lr: 3e-4,
        }
    }
}

impl Localizer {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x10C]));
        let mut store = ParamStore::new();
        let backbone = ConvBackbone::new(&mut store, "loc.enc", &mut rng);
        let head = Linear::new(&mut store, "loc.head", FEATURE_DIM, 2, &mut rng);
        Self {
            store,
            backbone,
            head,
        }
    }

    /// Socket position estimates in mm for a batch of flat observations.
    pub fn predict(&self, obs: &[f32]) -> Result<Vec<[f32; 2]>, LotjError> {
        let n = obs.len() / OBS_LEN;
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let x = g.leaf(Tensor::new(vec![n, OBS_LEN], obs.to_vec())?);
        let out = self.backbone.forward(&mut g, &self.store, &mut bind, x)?;
        let feat = g.relu(out.features);
        let pred = self.head.forward(&mut g, &self.store, &mut bind, feat)?;
        Ok(g.value(pred)
            .data()
            .chunks_exact(2)
            .map(|c| [c[0] * SOCKET_SCALE, c[1] * SOCKET_SCALE])
            .collect())
    }
}

fn localizer_frames(dataset: &Dataset) -> Result<(Vec<f32>, Vec<[f32; 2]>), LotjError> {
    let mut obs = Vec::new();
    let mut targets = Vec::new();
    for traj in &dataset.trajectories {
        let spec = dataset.domain(traj.domain_id).ok_or_else(|| {
            LotjError::Config(format!("manifest lacks domain {}", traj.domain_id))
        })?;
        for frame in &traj.observations {
            obs.extend_from_slice(frame);
            targets.push([spec.socket_center.0, spec.socket_center.1]);
        }
    }
    Ok((obs, targets))
}

/// Mean Euclidean error in mm of the localizer on every frame of a dataset.
pub fn localizer_mae(loc: &Localizer, dataset: &Dataset) -> Result<f32, LotjError> {
    let (obs, targets) = localizer_frames(dataset)?;
    let mut total = 0.0f64;
    let chunk = 256;
    let mut i = 0;
    while i < targets.len() {
        let hi = (i + chunk).min(targets.len());
        let preds = loc.predict(&obs[i * OBS_LEN..hi * OBS_LEN])?;
        for (p, t) in preds.iter().zip(&targets[i..hi]) {
            total += (((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)) as f64).sqrt();
        }
        i = hi;
    }
    Ok((total / targets.len() as f64) as f32)
}

/// L2 regression of the socket position from single frames, using the
/// privileged positions available at collection time.
pub fn train_localizer(
    dataset: &Dataset,
    config: LocalizerConfig,
    seed: u64,
) -> Result<(Localizer, f32), LotjError> {
    let (obs, targets) = localizer_frames(dataset)?;
    let n_frames = targets.len();
    if n_frames == 0 {
        return Err(LotjError::Config("no frames to train the localizer".into()));
    }
    let mut loc = Localizer::new(seed);
    let mut adam = Adam::new(
        &loc.store,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x10C, 2]));
    for _ in 0..config.steps {
        let mut xb = Vec::with_capacity(config.batch * OBS_LEN);
        let mut tb = Vec::with_capacity(config.batch * 2);
        for _ in 0..config.batch {
            let i = rng.gen_range(0..n_frames);
            xb.extend_from_slice(&obs[i * OBS_LEN..(i + 1) * OBS_LEN]);
            tb.push(targets[i][0] / SOCKET_SCALE);
            tb.push(targets[i][1] / SOCKET_SCALE);
        }
        let mut g = Graph::new();
        let mut bind = Binding::new(&loc.store);
        let x = g.leaf(Tensor::new(vec![config.batch, OBS_LEN], xb)?);
        let out = loc.backbone.forward(&mut g, &loc.store, &mut bind, x)?;
        let feat = g.relu(out.features);
        let pred = loc.head.forward(&mut g, &loc.store, &mut bind, feat)?;
        let t = g.leaf(Tensor::new(vec![config.batch, 2], tb)?);
        let d = g.sub(pred, t)?;
        let sq = g.mul(d, d)?;
        let loss = g.mean(sq);
        g.backward(loss)?;
        let grads = bind.grads(&g);
        adam.step(&mut loc.store, &grads);
    }
    let mae = localizer_mae(&loc, dataset)?;
    Ok((loc, mae))
}

/// Move to the localizer's estimate, then descend or hand off to a search
/// strategy started from the reached position.
pub struct LocalizeActor<'a> {
    pub localizer: &'a Localizer,
    pub then: Option<SearchActor>,
    handed_off: bool,
    episode_seed: u64,
}

impl<'a> LocalizeActor<'a> {
    pub fn new(localizer: &'a Localizer, then: Option<SearchActor>) -> Self {
        Self {
            localizer,
            then,
            handed_off: false,
            episode_seed: 0,
        }
    }
}

impl Actor for LocalizeActor<'_> {
    fn name(&self) -> String {
        match &self.then {
            Some(s) => format!("localize+{}", s.name()),
            None => "localize".into(),
        }
    }

    fn begin_episode(&mut self, _start: [f32; 3], episode_seed: u64) {
        self.handed_off = false;
        self.episode_seed = episode_seed;
    }

    fn act(&mut self, obs: &Observation, peg: [f32; 3], step: u32) -> Action {
        if self.handed_off {
            return self.then.as_mut().expect("handed off").act(obs, peg, step);
        }
        let est = self.localizer.predict(&obs.pixels).expect("localizer forward")[0];
        let ex = est[0] - peg[0];
        let ey = est[1] - peg[1];
        if ex.abs() < 1.0 && ey.abs() < 1.0 {
            match &mut self.then {
                Some(search) => {
                    search.begin_episode(peg, self.episode_seed);
                    self.handed_off = true;
                    return search.act(obs, peg, step);
                }
                None => return Action::new(0.0, 0.0, PRESS),
            }
        }
        Action::new(
            ex.clamp(-ACTION_LIMIT, ACTION_LIMIT),
            ey.clamp(-ACTION_LIMIT, ACTION_LIMIT),
            0.0,
        )
    }
}

// ---------------------------------------------------------------------
// State-based IQL
// ---------------------------------------------------------------------

/// Privileged-state observation: socket-relative position scaled to
/// roughly unit range.
pub const STATE_DIM: usize = 3;
const STATE_SCALE: f32 = 20.0;

pub fn state_obs(peg: [f32; 3], socket: [f32; 2]) -> Vec<f32> {
    vec![
        (peg[0] - socket[0]) / STATE_SCALE,
        (peg[1] - socket[1]) / STATE_SCALE,
        peg[2] / STATE_SCALE,
    ]
}

/// IQL on privileged state vectors recovered by replaying the stored
/// trajectories through the deterministic dynamics.
pub fn train_state_iql(
    dataset: &Dataset,
    mut config: IqlConfig,
    seed: u64,
) -> Result<IqlTrainer, LotjError> {
    config.use_daib_policy = false;
    let mut buf = datastore::ReplayBuffer::new(STATE_DIM, dataset.n_transitions().max(1));
    for i in 0..dataset.trajectories.len() {
        let traj = &dataset.trajectories[i];
        let spec = dataset.domain(traj.domain_id).ok_or_else(|| {
            LotjError::Config(format!("manifest lacks domain {}", traj.domain_id))
        })?;
        let states = dataset.replay_states(i)?;
        let socket = [spec.socket_center.0, spec.socket_center.1];
        let frames: Vec<Vec<f32>> = states.iter().map(|p| state_obs(*p, socket)).collect();
        let actions: Vec<[f32; 3]> = traj.actions.iter().map(|a| [a[0], a[1], a[2]]).collect();
        let rewards: Vec<f32> = traj.rewards.iter().map(|&r| r as f32).collect();
        let mut dones = vec![false; traj.len()];
        *dones.last_mut().unwrap() = true;
        buf.push_episode(traj.domain_id, &frames, &actions, &rewards, &dones)?;
    }
    let empty = datastore::ReplayBuffer::new(STATE_DIM, 1);
    let mut trainer = IqlTrainer::new(ObsKind::Vector(STATE_DIM), config, Vec::new(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x57A7E]));
    for _ in 0..config.steps {
        let batch = sample_mixed_batch_opts(&buf, &empty, config.batch, &mut rng, false)?;
        trainer.update(&batch, &mut rng)?;
    }
    Ok(trainer)
}

/// Runs the state-IQL policy from either ground-truth state (oracle mode)
/// or the localizer's estimate.
pub struct StateIqlActor<'a> {
    pub trainer: &'a IqlTrainer,
    pub localizer: Option<&'a Localizer>,
    /// Oracle mode reads the true socket position.
    pub true_socket: [f32; 2],
}

impl Actor for StateIqlActor<'_> {
    fn name(&self) -> String {
        if self.localizer.is_some() {
            "state_iql".into()
        } else {
            "state_iql_oracle".into()
        }
    }

    fn begin_episode(&mut self, _start: [f32; 3], _seed: u64) {}

    fn act(&mut self, obs: &Observation, peg: [f32; 3], _step: u32) -> Action {
        let socket = match self.localizer {
            Some(loc) => loc.predict(&obs.pixels).expect("localizer forward")[0],
            None => self.true_socket,
        };
        let s = state_obs(peg, socket);
        let t = Tensor::new(vec![1, STATE_DIM], s).expect("state obs");
        let a = self
            .trainer
            .policy
            .mean_actions(&self.trainer.policy_store, &t)
            .expect("policy forward")[0];
        Action::new(a[0], a[1], a[2])
    }
}
