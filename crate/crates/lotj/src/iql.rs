//! Implicit Q-learning with advantage-weighted policy extraction.
//!
//! Q regresses to `r + gamma * Vbar(s')` with terminal transitions
//! bootstrapping zero; V expectile-regresses toward `Qbar(s, a)`; the
//! policy is extracted by behaviour cloning weighted with
//! `clip(exp(A / beta), W_max)`, plus the split-representation regularizer
//! on its own backbone. Targets move only by Polyak averaging.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::nn::Binding;
use tensorcore::{Adam, AdamConfig, Graph, Linear, Mlp, NodeId, ParamStore, Tensor};

use datastore::TransitionBatch;
use pegsim::ACTION_LIMIT;

use crate::nets::{Encoder, ObsKind, FEATURE_DIM, ZI_DIM, ZS_DIM};
use crate::LotjError;

pub const ACTION_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlineDomainMode {
    /// Online samples skip the domain cross-entropy entirely.
    Exclude,
    /// Online samples use a dedicated extra class the offline phase never
    /// emits.
    ExtraClass,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IqlConfig {
    pub gamma: f32,
    pub tau_exp: f32,
    pub beta: f32,
    pub w_max: f32,
    pub polyak: f32,
    pub batch: usize,
    pub steps: usize,
    pub lr: f32,
    pub lambda: f32,
    pub adv_weight: f32,
    /// Fixed diagonal policy std in normalized action units.
    pub policy_std: f32,
    pub use_daib_policy: bool,
    /// Reproduces the doubly-squared expectile residual variant.
    pub literal_double_square: bool,
    pub grad_clip: f32,
    pub online_domain_mode: OnlineDomainMode,
    pub report_every: usize,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau_exp: 0.8,
            beta: 1.0,
            w_max: 100.0,
            polyak: 0.005,
            batch: 48,
            steps: 6000,
            lr: 3e-4,
            lambda: 0.01,
            adv_weight: 1.0,
            policy_std: 0.1,
            use_daib_policy: true,
            literal_double_square: false,
            grad_clip: 10.0,
            online_domain_mode: OnlineDomainMode::Exclude,
            report_every: 1000,
        }
    }
}

impl IqlConfig {
    pub fn validate(&self) -> Result<(), LotjError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(LotjError::Config(format!("gamma {} outside [0,1]", self.gamma)));
        }
        if !(self.tau_exp > 0.0 && self.tau_exp < 1.0) {
            return Err(LotjError::Config(format!(
                "tau_exp {} outside (0,1)",
                self.tau_exp
            )));
        }
        if self.beta <= 0.0 {
            return Err(LotjError::Config(format!("beta {} must be positive", self.beta)));
        }
        Ok(())
    }
}

/// Scalar expectile loss `|tau - 1(u < 0)| u^2`.
pub fn expectile_loss(u: f32, tau: f32) -> f32 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

pub struct QNet {
    enc: Encoder,
    head: Mlp,
}

impl QNet {
    pub fn new(store: &mut ParamStore, kind: ObsKind, rng: &mut ChaCha8Rng) -> Self {
        let enc = Encoder::new(store, "q.enc", kind, rng);
        let head = Mlp::new(store, "q.head", &[FEATURE_DIM + ACTION_DIM, 64, 1], rng);
        Self { enc, head }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        obs: NodeId,
        act_norm: NodeId,
    ) -> Result<NodeId, LotjError> {
        let out = self.enc.forward(g, store, bind, obs)?;
        let feat = g.relu(out.features);
        let joined = g.concat(feat, act_norm)?;
        let q = self.head.forward(g, store, bind, joined)?;
        Ok(g.select_column(q, 0)?)
    }

    /// Forward values without gradient bookkeeping (used for targets).
    pub fn values(
        &self,
        store: &ParamStore,
        obs: &Tensor,
        act_norm: &Tensor,
    ) -> Result<Vec<f32>, LotjError> {
        let mut g = Graph::new();
        let mut bind = Binding::new(store);
        let o = g.leaf(obs.clone());
        let a = g.leaf(act_norm.clone());
        let q = self.forward(&mut g, store, &mut bind, o, a)?;
        Ok(g.value(q).data().to_vec())
    }
}

pub struct VNet {
    enc: Encoder,
    head: Mlp,
}

impl VNet {
    pub fn new(store: &mut ParamStore, kind: ObsKind, rng: &mut ChaCha8Rng) -> Self {
        let enc = Encoder::new(store, "v.enc", kind, rng);
        let head = Mlp::new(store, "v.head", &[FEATURE_DIM, 64, 1], rng);
        Self { enc, head }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        obs: NodeId,
    ) -> Result<NodeId, LotjError> {
        let out = self.enc.forward(g, store, bind, obs)?;
        let feat = g.relu(out.features);
        let v = self.head.forward(g, store, bind, feat)?;
        Ok(g.select_column(v, 0)?)
    }

    pub fn values(&self, store: &ParamStore, obs: &Tensor) -> Result<Vec<f32>, LotjError> {
        let mut g = Graph::new();
        let mut bind = Binding::new(store);
        let o = g.leaf(obs.clone());
        let v = self.forward(&mut g, store, &mut bind, o)?;
        Ok(g.value(v).data().to_vec())
    }
}

/// Policy with an optional split-representation backbone. The mean action
/// is tanh-squashed into the normalized action box; the std is fixed.
pub struct PolicyNet {
    enc: Encoder,
    zi_head: Option<Linear>,
    mu_head: Option<Linear>,
    ls_head: Option<Linear>,
    trunk: Mlp,
    action_head: Linear,
    domain_head: Option<Mlp>,
    pub n_domain_classes: usize,
}

pub struct PolicyForward {
    /// `[n, 3]` tanh-squashed mean in normalized units.
    pub mean: NodeId,
    pub mu: Option<NodeId>,
    pub log_sigma: Option<NodeId>,
    pub domain_logits: Option<NodeId>,
    pub conv_maps: Vec<NodeId>,
}

impl PolicyNet {
    pub fn new(
        store: &mut ParamStore,
        kind: ObsKind,
        use_daib: bool,
        n_domain_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let enc = Encoder::new(store, "pi.enc", kind, rng);
        if use_daib {
            let zi_head = Linear::new(store, "pi.zi", FEATURE_DIM, ZI_DIM, rng);
            let mu_head = Linear::new(store, "pi.zs_mu", FEATURE_DIM, ZS_DIM, rng);
            let ls_head = Linear::new(store, "pi.zs_ls", FEATURE_DIM, ZS_DIM, rng);
            let trunk = Mlp::new(store, "pi.trunk", &[ZI_DIM + ZS_DIM, 64, 64], rng);
            let action_head = Linear::new(store, "pi.action", 64, ACTION_DIM, rng);
            let domain_head = Mlp::new(store, "pi.domclf", &[ZI_DIM, 64, n_domain_classes], rng);
            Self {
                enc,
                zi_head: Some(zi_head),
                mu_head: Some(mu_head),
                ls_head: Some(ls_head),
                trunk,
                action_head,
                domain_head: Some(domain_head),
                n_domain_classes,
            }
        } else {
            let trunk = Mlp::new(store, "pi.trunk", &[FEATURE_DIM, 64, 64], rng);
            let action_head = Linear::new(store, "pi.action", 64, ACTION_DIM, rng);
            Self {
                enc,
                zi_head: None,
                mu_head: None,
                ls_head: None,
                trunk,
                action_head,
                domain_head: None,
                n_domain_classes,
            }
        }
    }

    pub fn uses_daib(&self) -> bool {
        self.zi_head.is_some()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        bind: &mut Binding,
        obs: NodeId,
        noise: Option<&Tensor>,
    ) -> Result<PolicyForward, LotjError> {
        let out = self.enc.forward(g, store, bind, obs)?;
        let feat = g.relu(out.features);
        let (trunk_in, mu, log_sigma, zi) = match (&self.zi_head, &self.mu_head, &self.ls_head) {
            (Some(zih), Some(mh), Some(lh)) => {
                let zi_raw = zih.forward(g, store, bind, feat)?;
                let zi = g.tanh(zi_raw);
                let m = mh.forward(g, store, bind, feat)?;
                let ls_raw = lh.forward(g, store, bind, feat)?;
                let ls_t = g.scale(ls_raw, 0.5);
                let ls_t = g.tanh(ls_t);
                let ls = g.scale(ls_t, 2.0);
                let zs = match noise {
                    Some(eps) => {
                        let e = g.leaf(eps.clone());
                        g.gaussian_reparam(m, ls, e)?
                    }
                    None => m,
                };
                (g.concat(zi, zs)?, Some(m), Some(ls), Some(zi))
            }
            _ => (feat, None, None, None),
        };
        let h = self.trunk.forward(g, store, bind, trunk_in)?;
        let h = g.relu(h);
        let raw = self.action_head.forward(g, store, bind, h)?;
        let mean = g.tanh(raw);
        let domain_logits = match (&self.domain_head, zi) {
            (Some(head), Some(zi)) => {
                let rev = g.grad_reverse(zi);
                Some(head.forward(g, store, bind, rev)?)
            }
            _ => None,
        };
        Ok(PolicyForward {
            mean,
            mu,
            log_sigma,
            domain_logits,
            conv_maps: out.conv_maps,
        })
    }

    /// Deterministic mean actions in environment units (mm).
    pub fn mean_actions(&self, store: &ParamStore, obs: &Tensor) -> Result<Vec<[f32; 3]>, LotjError> {
        let mut g = Graph::new();
        let mut bind = Binding::new(store);
        let o = g.leaf(obs.clone());
        let fwd = self.forward(&mut g, store, &mut bind, o, None)?;
        let m = g.value(fwd.mean).data();
        Ok(m
            .chunks_exact(ACTION_DIM)
            .map(|c| [c[0] * ACTION_LIMIT, c[1] * ACTION_LIMIT, c[2] * ACTION_LIMIT])
            .collect())
    }
}

fn obs_tensor(kind: ObsKind, flat: &[f32], n: usize) -> Result<Tensor, LotjError> {
    Ok(Tensor::new(vec![n, kind.len()], flat.to_vec())?)
}

fn norm_actions(actions: &[f32]) -> Vec<f32> {
    actions.iter().map(|a| a / ACTION_LIMIT).collect()
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateLosses {
    pub q_loss: f32,
    pub v_loss: f32,
    pub policy_loss: f32,
}

/// The trainable pieces of one agent plus their optimizers.
pub struct IqlTrainer {
    pub obs_kind: ObsKind,
    pub config: IqlConfig,
    pub policy: PolicyNet,
    pub policy_store: ParamStore,
    pub q: QNet,
    pub q_store: ParamStore,
    pub q_target_store: ParamStore,
    pub v: VNet,
    pub v_store: ParamStore,
    pub v_target_store: ParamStore,
    /// domain_id -> class index for the policy's adversarial head.
    pub domain_classes: Vec<u32>,
    /// Warm-up multiplier on the adversarial weight; pretraining ramps it.
    pub adv_ramp: f32,
    adam_policy: Adam,
    adam_q: Adam,
    adam_v: Adam,
}

impl IqlTrainer {
    pub fn new(
        obs_kind: ObsKind,
        config: IqlConfig,
        domain_classes: Vec<u32>,
        seed: u64,
    ) -> Result<Self, LotjError> {
        config.validate()?;
        let n_classes = domain_classes.len()
            + matches!(config.online_domain_mode, OnlineDomainMode::ExtraClass) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x1917]));
        let mut policy_store = ParamStore::new();
        let policy = PolicyNet::new(
            &mut policy_store,
            obs_kind,
            config.use_daib_policy,
            n_classes.max(1),
            &mut rng,
        );
        let mut q_store = ParamStore::new();
        let q = QNet::new(&mut q_store, obs_kind, &mut rng);
        let mut v_store = ParamStore::new();
        let v = VNet::new(&mut v_store, obs_kind, &mut rng);
        let q_target_store = q_store.clone();
        let v_target_store = v_store.clone();
        let adam_cfg = AdamConfig {
            lr: config.lr,
            ..Default::default()
        };
        Ok(Self {
            obs_kind,
            config,
            adam_policy: Adam::new(&policy_store, adam_cfg),
            adam_q: Adam::new(&q_store, adam_cfg),
            adam_v: Adam::new(&v_store, adam_cfg),
            policy,
            policy_store,
            q,
            q_store,
            q_target_store,
            v,
            v_store,
            v_target_store,
            domain_classes,
            adv_ramp: 1.0,
        })
    }

    pub fn domain_class(&self, domain_id: u32) -> Option<usize> {
        self.domain_classes.iter().position(|&d| d == domain_id)
    }

    /// Stop-gradient targets for one batch: the TD target
    /// `y = r + gamma * (1 - done) * Vbar(s')` and `Qbar(s, a)`.
    pub fn compute_targets(&self, batch: &TransitionBatch) -> Result<(Vec<f32>, Vec<f32>), LotjError> {
        let n = batch.n;
        let next_obs = obs_tensor(self.obs_kind, &batch.next_obs, n)?;
        let vbar = self.v.values(&self.v_target_store, &next_obs)?;
        let y: Vec<f32> = (0..n)
            .map(|i| {
                batch.rewards[i] + self.config.gamma * (1.0 - batch.dones[i]) * vbar[i]
            })
            .collect();
        let obs = obs_tensor(self.obs_kind, &batch.obs, n)?;
        let act = Tensor::new(vec![n, ACTION_DIM], norm_actions(&batch.actions))?;
        let qbar = self.q.values(&self.q_target_store, &obs, &act)?;
        Ok((y, qbar))
    }

    /// One gradient step on Q and V. Returns the two loss values and the
    /// pre-update V(s) values (used for advantages).
    pub fn critic_step(
        &mut self,
        batch: &TransitionBatch,
        y: &[f32],
        qbar: &[f32],
    ) -> Result<(f32, f32, Vec<f32>), LotjError> {
        let n = batch.n;
        // Q regression toward y.
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.q_store);
        let obs = g.leaf(obs_tensor(self.obs_kind, &batch.obs, n)?);
        let act = g.leaf(Tensor::new(vec![n, ACTION_DIM], norm_actions(&batch.actions))?);
        let qn = self.q.forward(&mut g, &self.q_store, &mut bind, obs, act)?;
        let yn = g.leaf(Tensor::from_vec(y.to_vec()));
        let d = g.sub(qn, yn)?;
        let sq = g.mul(d, d)?;
        let lq = g.mean(sq);
        let lq_val = g.value(lq).item();
        g.backward(lq)?;
        let mut grads = bind.grads(&g);
        tensorcore::adam::clip_global_norm(&mut grads, self.config.grad_clip);
        self.adam_q.step(&mut self.q_store, &grads);

        // V expectile regression toward Qbar.
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.v_store);
        let obs = g.leaf(obs_tensor(self.obs_kind, &batch.obs, n)?);
        let vn = self.v.forward(&mut g, &self.v_store, &mut bind, obs)?;
        let v_vals = g.value(vn).data().to_vec();
        let qb = g.leaf(Tensor::from_vec(qbar.to_vec()));
        let u = g.sub(qb, vn)?;
        let mut e = g.expectile_sq(u, self.config.tau_exp)?;
        if self.config.literal_double_square {
            e = g.mul(e, e)?;
        }
        let lv = g.mean(e);
        let lv_val = g.value(lv).item();
        g.backward(lv)?;
        let mut grads = bind.grads(&g);
        tensorcore::adam::clip_global_norm(&mut grads, self.config.grad_clip);
        self.adam_v.step(&mut self.v_store, &grads);

        Ok((lq_val, lv_val, v_vals))
    }

    /// Advantage-weighted regression step plus the policy's own split
    /// representation terms. `advantages` must already be stop-gradient.
    pub fn policy_step(
        &mut self,
        batch: &TransitionBatch,
        advantages: &[f32],
        rng: &mut ChaCha8Rng,
    ) -> Result<f32, LotjError> {
        let n = batch.n;
        let weights: Vec<f32> = advantages
            .iter()
            .map(|a| (a / self.config.beta).exp().min(self.config.w_max))
            .collect();
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.policy_store);
        let obs = g.leaf(obs_tensor(self.obs_kind, &batch.obs, n)?);
        let noise = self
            .policy
            .uses_daib()
            .then(|| Tensor::randn(&[n, ZS_DIM], 1.0, rng));
        let fwd = self
            .policy
            .forward(&mut g, &self.policy_store, &mut bind, obs, noise.as_ref())?;

        let act = g.leaf(Tensor::new(vec![n, ACTION_DIM], norm_actions(&batch.actions))?);
        let diff = g.sub(act, fwd.mean)?;
        let sq = g.mul(diff, diff)?;
        let per_ex = g.row_sum(sq);
        let w = g.leaf(Tensor::from_vec(weights));
        let weighted = g.mul(per_ex, w)?;
        let nll = g.mean(weighted);
        let sigma2 = self.config.policy_std * self.config.policy_std;
        let mut total = g.scale(nll, 0.5 / sigma2);

        if let Some(domain_logits) = fwd.domain_logits {
            // Mask rows without a training-domain label (online samples in
            // exclude mode); softmax rows still need a valid placeholder.
            let mut labels = Vec::with_capacity(n);
            let mut mask = Vec::with_capacity(n);
            let extra = matches!(self.config.online_domain_mode, OnlineDomainMode::ExtraClass);
            for d in &batch.domain_ids {
                match self.domain_class(*d) {
                    Some(c) => {
                        labels.push(c);
                        mask.push(1.0);
                    }
                    None if extra => {
                        labels.push(self.domain_classes.len());
                        mask.push(1.0);
                    }
                    None => {
                        labels.push(0);
                        mask.push(0.0);
                    }
                }
            }
            let labeled = mask.iter().sum::<f32>();
            if labeled > 0.0 {
                let ce_rows = g.softmax_xent(domain_logits, &labels)?;
                let m = g.leaf(Tensor::from_vec(mask));
                let masked = g.mul(ce_rows, m)?;
                let ce_sum = g.sum(masked);
                let ce = g.scale(ce_sum, self.config.adv_weight * self.adv_ramp / labeled);
                total = g.add(total, ce)?;
            }
        }
        if let (Some(mu), Some(ls)) = (fwd.mu, fwd.log_sigma) {
            let kl_rows = g.kl_std_normal_rows(mu, ls)?;
            let kl = g.mean(kl_rows);
            let weighted = g.scale(kl, self.config.lambda);
            total = g.add(total, weighted)?;
        }

        let loss_val = g.value(total).item();
        g.backward(total)?;
        let mut grads = bind.grads(&g);
        tensorcore::adam::clip_global_norm(&mut grads, self.config.grad_clip);
        self.adam_policy.step(&mut self.policy_store, &grads);
        Ok(loss_val)
    }

    pub fn polyak_sync(&mut self) {
        polyak(&mut self.q_target_store, &self.q_store, self.config.polyak);
        polyak(&mut self.v_target_store, &self.v_store, self.config.polyak);
    }

    /// Full update on one batch: targets, critics, advantage-weighted
    /// policy step, then a Polyak sync.
    pub fn update(
        &mut self,
        batch: &TransitionBatch,
        rng: &mut ChaCha8Rng,
    ) -> Result<UpdateLosses, LotjError> {
        let (y, qbar) = self.compute_targets(batch)?;
        let (q_loss, v_loss, v_vals) = self.critic_step(batch, &y, &qbar)?;
        let advantages: Vec<f32> = qbar.iter().zip(&v_vals).map(|(q, v)| q - v).collect();
        let policy_loss = self.policy_step(batch, &advantages, rng)?;
        self.polyak_sync();
        Ok(UpdateLosses {
            q_loss,
            v_loss,
            policy_loss,
        })
    }

    /// Hard-copies the online critics into the targets.
    pub fn sync_targets_hard(&mut self) {
        self.q_target_store = self.q_store.clone();
        self.v_target_store = self.v_store.clone();
    }
}

/// Polyak blend of every unfrozen parameter. Frozen entries stay bitwise
/// fixed, matching the online-phase conv freeze.
pub fn polyak(target: &mut ParamStore, online: &ParamStore, rate: f32) {
    for id in online.ids() {
        if target.is_frozen(id) {
            continue;
        }
        let src = online.get(id).data().to_vec();
        let dst = target.get_mut(id).data_mut();
        for (t, s) in dst.iter_mut().zip(src) {
            *t += rate * (s - *t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectile_loss_scalar_cases() {
        assert_eq!(expectile_loss(2.0, 0.5), 2.0);
        assert!((expectile_loss(2.0, 0.7) - 2.8).abs() < 1e-6);
        assert!((expectile_loss(-2.0, 0.7) - 1.2).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let mut c = IqlConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c.gamma = 0.9;
        c.tau_exp = 1.0;
        assert!(c.validate().is_err());
        c.tau_exp = 0.8;
        c.beta = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn policy_actions_stay_inside_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = IqlConfig::default();
        let trainer =
            IqlTrainer::new(ObsKind::Vector(4), config, vec![0, 1], 9).unwrap();
        let obs = Tensor::randn(&[16, 4], 5.0, &mut rng);
        for a in trainer
            .policy
            .mean_actions(&trainer.policy_store, &obs)
            .unwrap()
        {
            for c in a {
                assert!(c.abs() <= ACTION_LIMIT);
            }
        }
    }
}
