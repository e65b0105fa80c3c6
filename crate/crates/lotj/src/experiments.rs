//! Multi-run orchestration: the reward-variant ablation grid and seeded
//! finetuning experiments. Runs are independently seeded and parallelized
//! at run granularity, so results do not depend on scheduling.

use rayon::prelude::*;
use serde::Serialize;

use datastore::Dataset;
use pegsim::Scenario;

use crate::bundle::{offline_pretrain, AgentBundle};
use crate::daibrep::{
    eval_holdout_accuracy, train_reward_model, DaibVariant, RewardModel, RewardTrainConfig,
};
use crate::finetune::{finetune_loop, EvalReport, FinetuneConfig, FinetuneSession, LearningCurve};
use crate::iql::IqlConfig;
use crate::LotjError;

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: DaibVariant,
    pub seed: u64,
    pub per_domain: Vec<(u32, f32)>,
    pub mean_accuracy: f32,
}

/// Trains every variant x seed cell on identical data and reports balanced
/// held-out accuracy. Parallel over cells.
pub fn ablate_reward(
    train: &Dataset,
    heldout: &Dataset,
    variants: &[DaibVariant],
    seeds: &[u64],
    config: RewardTrainConfig,
    eval_seed: u64,
) -> Result<Vec<AblationRow>, LotjError> {
    let cells: Vec<(DaibVariant, u64)> = variants
        .iter()
        .flat_map(|v| seeds.iter().map(move |s| (*v, *s)))
        .collect();
    let mut rows: Vec<AblationRow> = cells
        .par_iter()
        .map(|(variant, seed)| -> Result<AblationRow, LotjError> {
            let (model, _) = train_reward_model(train, *variant, config, *seed)?;
            let acc = eval_holdout_accuracy(&model, heldout, eval_seed)?;
            Ok(AblationRow {
                variant: *variant,
                seed: *seed,
                per_domain: acc.per_domain,
                mean_accuracy: acc.mean,
            })
        })
        .collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| {
        (a.variant.name(), a.seed).cmp(&(b.variant.name(), b.seed))
    });
    Ok(rows)
}

pub fn mean_by_variant(rows: &[AblationRow]) -> Vec<(DaibVariant, f32)> {
    DaibVariant::all()
        .iter()
        .filter_map(|v| {
            let accs: Vec<f32> = rows
                .iter()
                .filter(|r| r.variant == *v)
                .map(|r| r.mean_accuracy)
                .collect();
            if accs.is_empty() {
                None
            } else {
                Some((*v, accs.iter().sum::<f32>() / accs.len() as f32))
            }
        })
        .collect()
}

/// Everything one finetuning run produces.
#[derive(Serialize)]
pub struct FinetuneRun {
    pub domain_id: u32,
    pub seed: u64,
    pub offline_successes: u32,
    pub final_successes: u32,
    pub episodes: u32,
    pub curve: LearningCurve,
    #[serde(skip)]
    pub final_report: EvalReport,
}

/// Pretrains (or reuses) a bundle and runs the online phase on one
/// held-out domain.
#[allow(clippy::too_many_arguments)]
pub fn run_finetune(
    offline_dataset: &Dataset,
    bundle: AgentBundle,
    spec: &pegsim::DomainSpec,
    scenario: Scenario,
    config: FinetuneConfig,
    seed: u64,
    eval_seed: u64,
) -> Result<FinetuneRun, LotjError> {
    let mut session = FinetuneSession::new(
        bundle,
        offline_dataset,
        spec.clone(),
        scenario,
        config,
        seed,
    )?;
    let offline_eval = session.evaluate(config.eval_episodes, eval_seed)?;
    let outcome = finetune_loop(session, config.trials, eval_seed)?;
    Ok(FinetuneRun {
        domain_id: spec.domain_id,
        seed,
        offline_successes: offline_eval.successes,
        final_successes: outcome.final_eval.successes,
        episodes: config.eval_episodes,
        curve: outcome.curve,
        final_report: outcome.final_eval,
    })
}

/// Offline pretraining with a freshly trained reward model, the everyday
/// path for building a bundle from scratch.
pub fn pretrain_bundle(
    train_dataset: &Dataset,
    heldout_ids: &[u32],
    iql: IqlConfig,
    reward_cfg: RewardTrainConfig,
    variant: DaibVariant,
    seed: u64,
) -> Result<AgentBundle, LotjError> {
    let (reward, _) = train_reward_model(train_dataset, variant, reward_cfg, seed)?;
    let (bundle, _) = offline_pretrain(train_dataset, heldout_ids, iql, seed, reward)?;
    Ok(bundle)
}

/// Swaps the reward model inside a bundle (for the reward-ablation arm).
pub fn with_reward_model(mut bundle: AgentBundle, reward: RewardModel) -> AgentBundle {
    bundle.reward = reward;
    bundle
}
