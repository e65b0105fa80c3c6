//! Split-representation reward classifier. The encoding is z = (z_I, z_S):
//! a domain classifier pushes z_I toward domain invariance through a
//! gradient-reversal layer while z_S passes through a sampled Gaussian
//! bottleneck whose KL to a standard normal is penalized. The classifier
//! head reads both branches. The four ablation variants drop parts of this
//! structure.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorcore::nn::Binding;
use tensorcore::{Adam, AdamConfig, Graph, Linear, Mlp, NodeId, ParamStore, Tensor};

use datastore::{Dataset, RewardBatch, RewardBatcher};
use pegsim::OBS_LEN;

use crate::nets::{ConvBackbone, FEATURE_DIM, ZI_DIM, ZS_DIM};
use crate::LotjError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DaibVariant {
    Daib,
    Dann,
    /// Full split architecture with the KL term zero-weighted.
    Lambda0,
    Vib,
    Erm,
}

impl DaibVariant {
    pub fn has_bottleneck(&self) -> bool {
        matches!(self, DaibVariant::Daib | DaibVariant::Lambda0 | DaibVariant::Vib)
    }

    pub fn has_domain_classifier(&self) -> bool {
        matches!(self, DaibVariant::Daib | DaibVariant::Lambda0 | DaibVariant::Dann)
    }

    pub fn kl_weight(&self, lambda: f32) -> f32 {
        match self {
            DaibVariant::Daib | DaibVariant::Vib => lambda,
            DaibVariant::Lambda0 => 0.0,
            _ => 0.0,
        }
    }

    pub fn all() -> [DaibVariant; 5] {
        [
            DaibVariant::Daib,
            DaibVariant::Dann,
            DaibVariant::Lambda0,
            DaibVariant::Vib,
            DaibVariant::Erm,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            DaibVariant::Daib => "daib",
            DaibVariant::Dann => "dann",
            DaibVariant::Lambda0 => "lambda0",
            DaibVariant::Vib => "vib",
            DaibVariant::Erm => "erm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "daib" => Some(DaibVariant::Daib),
            "dann" => Some(DaibVariant::Dann),
            "lambda0" => Some(DaibVariant::Lambda0),
            "vib" => Some(DaibVariant::Vib),
            "erm" => Some(DaibVariant::Erm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RewardModelMeta {
    pub variant: DaibVariant,
    pub lambda: f32,
    pub adv_weight: f32,
    pub zi_dim: usize,
    pub zs_dim: usize,
    pub training_domains: Vec<u32>,
}

pub struct RewardModel {
    pub store: ParamStore,
    backbone: ConvBackbone,
    zi_head: Linear,
    mu_head: Option<Linear>,
    log_sigma_head: Option<Linear>,
    classifier: Mlp,
    domain_head: Option<Mlp>,
    pub meta: RewardModelMeta,
}

/// Forward nodes a caller may need beyond the loss: latent heads and
/// retained conv maps for saliency.
pub struct RewardForward {
    pub logits: NodeId,
    pub mu: Option<NodeId>,
    pub log_sigma: Option<NodeId>,
    pub zi: NodeId,
    pub domain_logits: Option<NodeId>,
    pub conv_maps: Vec<NodeId>,
}

pub struct LossComponents {
    pub total: f32,
    pub reward_bce: f32,
    pub domain_ce: f32,
    pub kl: f32,
}

impl RewardModel {
    pub fn new(variant: DaibVariant, training_domains: Vec<u32>, lambda: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x5EED, 1]));
        let mut store = ParamStore::new();
        let backbone = ConvBackbone::new(&mut store, "enc", &mut rng);
        let zi_head = Linear::new(&mut store, "enc.zi", FEATURE_DIM, ZI_DIM, &mut rng);
        let (mu_head, log_sigma_head) = if variant.has_bottleneck() {
            (
                Some(Linear::new(&mut store, "enc.zs_mu", FEATURE_DIM, ZS_DIM, &mut rng)),
                Some(Linear::new(&mut store, "enc.zs_ls", FEATURE_DIM, ZS_DIM, &mut rng)),
            )
        } else {
            (None, None)
        };
        let clf_in = ZI_DIM + if variant.has_bottleneck() { ZS_DIM } else { 0 };
        let classifier = Mlp::new(&mut store, "clf", &[clf_in, 64, 1], &mut rng);
        let domain_head = variant.has_domain_classifier().then(|| {
            Mlp::new(
                &mut store,
                "domclf",
                &[ZI_DIM, 64, training_domains.len()],
                &mut rng,
            )
        });
        Self {
            store,
            backbone,
            zi_head,
            mu_head,
            log_sigma_head,
            classifier,
            domain_head,
            meta: RewardModelMeta {
                variant,
                lambda,
                adv_weight: 1.0,
                zi_dim: ZI_DIM,
                zs_dim: ZS_DIM,
                training_domains,
            },
        }
    }

    pub fn domain_class(&self, domain_id: u32) -> Option<usize> {
        self.meta
            .training_domains
            .iter()
            .position(|&d| d == domain_id)
    }

    /// Forward pass. `noise` supplies the bottleneck sample; `None` selects
    /// the deterministic mean encoding.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        obs: NodeId,
        noise: Option<&Tensor>,
    ) -> Result<RewardForward, LotjError> {
        let out = self.backbone.forward(g, &self.store, bind, obs)?;
        let feat = g.relu(out.features);
        // Bounded invariant code: the adversarial game over an unbounded
        // z_I degenerates into amplitude growth instead of information
        // removal.
        let zi_raw = self.zi_head.forward(g, &self.store, bind, feat)?;
        let zi = g.tanh(zi_raw);
        let (mut mu, mut log_sigma, mut zs) = (None, None, None);
        if let (Some(mh), Some(lh)) = (&self.mu_head, &self.log_sigma_head) {
            let m = mh.forward(g, &self.store, bind, feat)?;
            let ls_raw = lh.forward(g, &self.store, bind, feat)?;
            // log sigma soft-bounded to (-2, 2).
            let ls_t = g.scale(ls_raw, 0.5);
            let ls_t = g.tanh(ls_t);
            let ls = g.scale(ls_t, 2.0);
            let z = match noise {
                Some(eps) => {
                    let e = g.leaf(eps.clone());
                    g.gaussian_reparam(m, ls, e)?
                }
                None => m,
            };
            mu = Some(m);
            log_sigma = Some(ls);
            zs = Some(z);
        }
        let clf_in = match zs {
            Some(z) => g.concat(zi, z)?,
            None => zi,
        };
        let logit_mat = self.classifier.forward(g, &self.store, bind, clf_in)?;
        let logits = g.select_column(logit_mat, 0)?;
        let domain_logits = match &self.domain_head {
            Some(head) => {
                let rev = g.grad_reverse(zi);
                Some(head.forward(g, &self.store, bind, rev)?)
            }
            None => None,
        };
        Ok(RewardForward {
            logits,
            mu,
            log_sigma,
            zi,
            domain_logits,
            conv_maps: out.conv_maps,
        })
    }

    /// Builds the combined objective on a rebalanced batch and returns the
    /// loss node plus component values. One bottleneck sample per example.
    /// `adv_weight` is the effective adversarial weight for this step
    /// (training ramps it; pass `meta.adv_weight` for the converged value).
    pub fn loss(
        &self,
        g: &mut Graph,
        bind: &mut Binding,
        batch: &RewardBatch,
        rng: &mut ChaCha8Rng,
        adv_weight: f32,
    ) -> Result<(NodeId, LossComponents), LotjError> {
        let n = batch.n;
        let obs = g.leaf(Tensor::new(vec![n, OBS_LEN], batch.obs.clone())?);
        let noise = self
            .meta
            .variant
            .has_bottleneck()
            .then(|| Tensor::randn(&[n, ZS_DIM], 1.0, rng));
        let fwd = self.forward(g, bind, obs, noise.as_ref())?;

        let labels = g.leaf(Tensor::from_vec(batch.labels.clone()));
        let bce_rows = g.sigmoid_bce(fwd.logits, labels)?;
        let bce = g.mean(bce_rows);
        let mut total = bce;
        let mut domain_ce_val = 0.0;
        let mut kl_val = 0.0;

        if let Some(domain_logits) = fwd.domain_logits {
            let classes: Vec<usize> = batch
                .domain_ids
                .iter()
                .map(|d| {
                    self.domain_class(*d).ok_or_else(|| {
                        LotjError::Config(format!("domain {d} not in classifier label set"))
                    })
                })
                .collect::<Result<_, _>>()?;
            let ce_rows = g.softmax_xent(domain_logits, &classes)?;
            let ce = g.mean(ce_rows);
            domain_ce_val = g.value(ce).item();
            let weighted = g.scale(ce, adv_weight);
            total = g.add(total, weighted)?;
        }

        if let (Some(mu), Some(ls)) = (fwd.mu, fwd.log_sigma) {
            let kl_rows = g.kl_std_normal_rows(mu, ls)?;
            let kl = g.mean(kl_rows);
            kl_val = g.value(kl).item();
            let weighted = g.scale(kl, self.meta.variant.kl_weight(self.meta.lambda));
            total = g.add(total, weighted)?;
        }

        let components = LossComponents {
            total: g.value(total).item(),
            reward_bce: g.value(bce).item(),
            domain_ce: domain_ce_val,
            kl: kl_val,
        };
        Ok((total, components))
    }

    /// Success probability for a batch of observations. Deterministic mode
    /// takes z_S = mu and is a pure function of the input.
    pub fn predict_batch(
        &self,
        obs: &[f32],
        deterministic: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<f32>, LotjError> {
        let n = obs.len() / OBS_LEN;
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let x = g.leaf(Tensor::new(vec![n, OBS_LEN], obs.to_vec())?);
        let noise = if deterministic {
            None
        } else {
            let rng = rng.ok_or_else(|| {
                LotjError::Config("stochastic prediction needs an RNG".into())
            })?;
            self.meta
                .variant
                .has_bottleneck()
                .then(|| Tensor::randn(&[n, ZS_DIM], 1.0, rng))
        };
        let fwd = self.forward(&mut g, &mut bind, x, noise.as_ref())?;
        let probs = g.sigmoid(fwd.logits);
        Ok(g.value(probs).data().to_vec())
    }

    pub fn predict_reward(&self, obs: &[f32], deterministic: bool) -> Result<f32, LotjError> {
        Ok(self.predict_batch(obs, deterministic, None)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<(), LotjError> {
        tensorcore::checkpoint::save_store(path, &self.store)?;
        let meta = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| LotjError::Config(e.to_string()))?;
        std::fs::write(path.with_extension("json"), meta)
            .map_err(|e| LotjError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LotjError> {
        let raw = std::fs::read_to_string(path.with_extension("json"))
            .map_err(|e| LotjError::Io(format!("reward model sidecar: {e}")))?;
        let meta: RewardModelMeta =
            serde_json::from_str(&raw).map_err(|e| LotjError::Config(e.to_string()))?;
        let mut model = RewardModel::new(
            meta.variant,
            meta.training_domains.clone(),
            meta.lambda,
            0,
        );
        model.meta = meta;
        tensorcore::checkpoint::load_store(path, &mut model.store)?;
        Ok(model)
    }
}

/// Plain binary cross-entropy on a probability, the reported per-example
/// reward loss.
pub fn reward_bce(prediction: f32, reward: f32) -> f32 {
    let p = prediction.clamp(1e-7, 1.0 - 1e-7);
    -reward * p.ln() - (1.0 - reward) * (1.0 - p).ln()
}

#[derive(Clone, Copy, Debug)]
pub struct RewardTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f32,
    pub lambda: f32,
    pub grad_clip: f32,
    pub report_every: usize,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2500,
            batch: 64,
            lr: 3e-4,
            lambda: 0.01,
            grad_clip: 10.0,
            report_every: 1000,
        }
    }
}

/// Warm-up schedule for the adversarial weight, ramping 0 -> 1 over
/// training. Keeps the two-player game from diverging before the encoder
/// has learned anything worth hiding.
pub fn adversarial_ramp(progress: f32) -> f32 {
    let p = progress.clamp(0.0, 1.0);
    2.0 / (1.0 + (-10.0 * p).exp()) - 1.0
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RewardTrainCurve {
    /// (step, total, bce, domain_ce, kl)
    pub points: Vec<(usize, f32, f32, f32, f32)>,
}

/// Trains one reward model variant on the rebalanced frame stream of the
/// given dataset. The classifier label set is the dataset's domain list.
pub fn train_reward_model(
    dataset: &Dataset,
    variant: DaibVariant,
    config: RewardTrainConfig,
    seed: u64,
) -> Result<(RewardModel, RewardTrainCurve), LotjError> {
    let batcher = RewardBatcher::new(dataset)?;
    let mut training_domains: Vec<u32> = dataset
        .manifest
        .domains
        .iter()
        .map(|d| d.domain_id)
        .filter(|d| !batcher.excluded_domains.contains(d))
        .collect();
    training_domains.sort_unstable();
    let mut model = RewardModel::new(variant, training_domains, config.lambda, seed);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: config.lr,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tensorcore::mix_seed(seed, &[0x7EA1, 2]));
    let mut curve = RewardTrainCurve::default();
    for step in 0..config.steps {
        let batch = batcher.next_batch_with_augment(config.batch, &mut rng, true)?;
        let adv = model.meta.adv_weight * adversarial_ramp(step as f32 / config.steps as f32);
        let mut g = Graph::new();
        let mut bind = Binding::new(&model.store);
        let (total, comps) = model.loss(&mut g, &mut bind, &batch, &mut rng, adv)?;
        g.backward(total)?;
        let mut grads = bind.grads(&g);
        tensorcore::adam::clip_global_norm(&mut grads, config.grad_clip);
        adam.step(&mut model.store, &grads);
        if step % config.report_every == 0 || step + 1 == config.steps {
            curve.points.push((
                step,
                comps.total,
                comps.reward_bce,
                comps.domain_ce,
                comps.kl,
            ));
        }
    }
    Ok((model, curve))
}

#[derive(Clone, Debug, Serialize)]
pub struct HoldoutAccuracy {
    pub per_domain: Vec<(u32, f32)>,
    pub mean: f32,
}

/// Balanced held-out accuracy at threshold 0.5, per domain and averaged.
pub fn eval_holdout_accuracy(
    model: &RewardModel,
    heldout: &Dataset,
    eval_seed: u64,
) -> Result<HoldoutAccuracy, LotjError> {
    for d in &heldout.manifest.domains {
        if model.domain_class(d.domain_id).is_some() {
            return Err(LotjError::Config(format!(
                "held-out domain {} was in the training label set",
                d.domain_id
            )));
        }
    }
    let batcher = RewardBatcher::new(heldout)?;
    let eval = batcher.balanced_eval_set(200, eval_seed);
    accuracy_on(model, &eval)
}

pub fn accuracy_on(model: &RewardModel, eval: &RewardBatch) -> Result<HoldoutAccuracy, LotjError> {
    let mut correct: HashMap<u32, (usize, usize)> = HashMap::new();
    // Batched forward in chunks to bound memory.
    let chunk = 256;
    let mut i = 0;
    while i < eval.n {
        let hi = (i + chunk).min(eval.n);
        let obs = &eval.obs[i * OBS_LEN..hi * OBS_LEN];
        let probs = model.predict_batch(obs, true, None)?;
        for (k, p) in probs.iter().enumerate() {
            let idx = i + k;
            let pred = if *p >= 0.5 { 1.0 } else { 0.0 };
            let e = correct.entry(eval.domain_ids[idx]).or_insert((0, 0));
            e.1 += 1;
            if (pred - eval.labels[idx]).abs() < 0.5 {
                e.0 += 1;
            }
        }
        i = hi;
    }
    let mut per_domain: Vec<(u32, f32)> = correct
        .into_iter()
        .map(|(d, (c, t))| (d, c as f32 / t as f32))
        .collect();
    per_domain.sort_by_key(|(d, _)| *d);
    let mean = per_domain.iter().map(|(_, a)| *a).sum::<f32>() / per_domain.len().max(1) as f32;
    Ok(HoldoutAccuracy { per_domain, mean })
}
