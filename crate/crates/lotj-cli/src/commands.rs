use std::path::PathBuf;

use lotj::baselines::{
    train_localizer, train_state_iql, LocalizeActor, LocalizerConfig, SearchActor, SearchKind,
    SearchParams, StateIqlActor,
};
use lotj::daibrep::{eval_holdout_accuracy, train_reward_model};
use lotj::experiments;
use lotj::finetune::{evaluate_actor, EvalReport, PolicyActor};
use lotj::saliency;
use lotj::DaibVariant;
use pegsim::Scenario;

use crate::artifacts::{write_csv, Context};

fn scenario_of(tag: u32) -> Scenario {
    if tag == 2 {
        Scenario::Two
    } else {
        Scenario::One
    }
}

fn domain_family(ctx: &Context) -> anyhow::Result<pegsim::DomainSet> {
    Ok(pegsim::sample_domains(
        ctx.config.n_train_domains,
        ctx.config.n_test_domains,
        ctx.config.n_groups,
        ctx.config.domain_seed,
    )?)
}

pub fn collect(ctx: &Context) -> anyhow::Result<()> {
    let dir = ctx.dataset_dir();
    ctx.prepare_dir(&dir)?;
    let set = domain_family(ctx)?;
    std::fs::write(dir.join("domains.json"), set.to_json())?;

    let train = datastore::collect_expert_dataset(
        &set.train,
        ctx.config.trajectories_per_domain,
        Scenario::One,
        ctx.config.seed,
    );
    datastore::write_dataset(&train, &dir.join("train"))?;
    let test = datastore::collect_expert_dataset(
        &set.test,
        ctx.config.test_trajectories_per_domain,
        Scenario::One,
        tensorcore::mix_seed(ctx.config.seed, &[0x7E57]),
    );
    datastore::write_dataset(&test, &dir.join("test"))?;

    for (name, ds) in [("train", &train), ("test", &test)] {
        let total = ds.trajectories.len();
        let succ = ds.trajectories.iter().filter(|t| t.success == 1).count();
        println!(
            "{name}: {total} trajectories, {} transitions, expert success rate {:.3}",
            ds.n_transitions(),
            succ as f32 / total.max(1) as f32
        );
    }
    println!("dataset written to {}", dir.display());
    Ok(())
}

pub fn train_reward(ctx: &Context, variant: Option<DaibVariant>) -> anyhow::Result<()> {
    let variant = variant.unwrap_or(ctx.config.variant);
    let dir = ctx.reward_dir(variant);
    ctx.prepare_dir(&dir)?;
    let train = ctx.load_train_dataset()?;
    let cfg = ctx.config.reward.to_train_config();
    let (model, curve) = train_reward_model(&train, variant, cfg, ctx.config.seed)?;
    model.save(&dir.join("reward_model.nnw"))?;
    let rows: Vec<String> = curve
        .points
        .iter()
        .map(|(s, t, b, d, k)| format!("{s},{t},{b},{d},{k}"))
        .collect();
    write_csv(&dir.join("train_curve.csv"), "step,total,bce,domain_ce,kl", &rows)?;

    if let Ok(test) = ctx.load_test_dataset() {
        let acc = eval_holdout_accuracy(&model, &test, ctx.config.eval_seed)?;
        let rows: Vec<String> = acc
            .per_domain
            .iter()
            .map(|(d, a)| format!("{d},{a}"))
            .collect();
        write_csv(&dir.join("holdout_accuracy.csv"), "domain,accuracy", &rows)?;
        println!(
            "{}: held-out accuracy {:.3} ({} domains)",
            variant.name(),
            acc.mean,
            acc.per_domain.len()
        );
    }
    println!("reward model written to {}", dir.display());
    Ok(())
}

pub fn train_offline(ctx: &Context, no_daib_policy: bool) -> anyhow::Result<()> {
    let use_daib = !no_daib_policy;
    let dir = ctx.offline_dir(use_daib);
    ctx.prepare_dir(&dir)?;
    let train = ctx.load_train_dataset()?;
    let reward = ctx.load_reward_model(ctx.config.variant)?;
    let set = domain_family(ctx)?;
    let heldout: Vec<u32> = set.test.iter().map(|d| d.domain_id).collect();
    let mut iql = ctx.config.iql;
    iql.use_daib_policy = use_daib;
    let (bundle, curve) =
        lotj::offline_pretrain(&train, &heldout, iql, ctx.config.seed, reward)?;
    bundle.save(&dir)?;
    let rows: Vec<String> = curve
        .points
        .iter()
        .map(|(s, q, v, p)| format!("{s},{q},{v},{p}"))
        .collect();
    write_csv(&dir.join("pretrain_curve.csv"), "step,q_loss,v_loss,policy_loss", &rows)?;
    println!("agent bundle written to {}", dir.display());
    Ok(())
}

pub fn finetune(
    ctx: &Context,
    trials: Option<usize>,
    scenario: Option<u32>,
    domain: Option<u32>,
    no_daib_reward: bool,
    no_daib_policy: bool,
) -> anyhow::Result<()> {
    let scenario_tag = scenario.unwrap_or(2);
    let trials = trials.unwrap_or(ctx.config.finetune.trials);
    let dir = ctx.run_dir(
        "finetune",
        &[
            trials.to_string(),
            scenario_tag.to_string(),
            format!("{domain:?}"),
            no_daib_reward.to_string(),
            no_daib_policy.to_string(),
        ],
    );
    ctx.prepare_dir(&dir)?;
    let train = ctx.load_train_dataset()?;
    let set = domain_family(ctx)?;
    let specs: Vec<_> = set
        .test
        .iter()
        .filter(|d| domain.map_or(true, |id| d.domain_id == id))
        .cloned()
        .collect();
    if specs.is_empty() {
        anyhow::bail!("domain {domain:?} is not a held-out domain");
    }
    let mut cfg = ctx.config.finetune;
    cfg.trials = trials;

    let mut summary_rows = Vec::new();
    for spec in &specs {
        let mut bundle = ctx.load_bundle(!no_daib_policy)?;
        if no_daib_reward {
            bundle = experiments::with_reward_model(bundle, ctx.load_reward_model(DaibVariant::Erm)?);
        }
        let run = experiments::run_finetune(
            &train,
            bundle,
            spec,
            scenario_of(scenario_tag),
            cfg,
            ctx.config.seed,
            ctx.config.eval_seed,
        )?;
        let rows: Vec<String> = run
            .curve
            .rows
            .iter()
            .map(|(t, s, p, a)| format!("{t},{s},{p},{a}"))
            .collect();
        write_csv(
            &dir.join(format!("curve_domain{}.csv", spec.domain_id)),
            "trial,eval_success,mean_pred_reward,true_reward_agreement",
            &rows,
        )?;
        println!(
            "domain {}: offline {}/{} -> online {}/{}",
            spec.domain_id, run.offline_successes, run.episodes, run.final_successes, run.episodes
        );
        summary_rows.push(format!(
            "{},{},{},{}",
            spec.domain_id, run.offline_successes, run.final_successes, run.episodes
        ));
    }
    write_csv(
        &dir.join("summary.csv"),
        "domain,offline_successes,final_successes,episodes",
        &summary_rows,
    )?;
    println!("finetune outputs in {}", dir.display());
    Ok(())
}

fn report_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.method, r.domain_id, r.scenario, r.successes, r.episodes
    )
}

pub fn evaluate(
    ctx: &Context,
    scenario: Option<u32>,
    bundle_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let scenario_tag = scenario.unwrap_or(1);
    let dir = ctx.run_dir(
        "evaluate",
        &[scenario_tag.to_string(), format!("{bundle_dir:?}")],
    );
    ctx.prepare_dir(&dir)?;
    let set = domain_family(ctx)?;
    let bundle = match &bundle_dir {
        Some(d) => lotj::AgentBundle::load(d)?,
        None => ctx.load_bundle(true)?,
    };
    let episodes = ctx.config.finetune.eval_episodes;
    let mut rows = Vec::new();
    for spec in &set.test {
        let mut actor = PolicyActor {
            trainer: &bundle.trainer,
            label: "lotj".into(),
        };
        let rep = evaluate_actor(
            &mut actor,
            Some(&bundle.reward),
            spec,
            scenario_of(scenario_tag),
            episodes,
            ctx.config.eval_seed,
        )?;
        println!(
            "{} on domain {}: {}/{} (reward agreement {:.3})",
            rep.method,
            spec.domain_id,
            rep.successes,
            rep.episodes,
            rep.confusion.agreement()
        );
        rows.push(report_row(&rep));
    }
    write_csv(
        &dir.join("evaluate.csv"),
        "method,domain,scenario,successes,episodes",
        &rows,
    )?;
    println!("evaluation written to {}", dir.display());
    Ok(())
}

pub fn baseline(ctx: &Context, scenario: Option<u32>) -> anyhow::Result<()> {
    let scenario_tag = scenario.unwrap_or(1);
    let dir = ctx.run_dir("baseline", &[scenario_tag.to_string()]);
    ctx.prepare_dir(&dir)?;
    let set = domain_family(ctx)?;
    let train = ctx.load_train_dataset()?;
    let test = ctx.load_test_dataset()?;
    let scenario = scenario_of(scenario_tag);
    let episodes = ctx.config.finetune.eval_episodes;

    let (localizer, train_mae) =
        train_localizer(&train, LocalizerConfig::default(), ctx.config.seed)?;
    let heldout_mae = lotj::baselines::localizer_mae(&localizer, &test)?;
    println!("localizer MAE: train {train_mae:.3} mm, held-out {heldout_mae:.3} mm");
    write_csv(
        &dir.join("localizer.csv"),
        "train_mae_mm,heldout_mae_mm",
        &[format!("{train_mae},{heldout_mae}")],
    )?;

    let state_trainer = train_state_iql(&train, ctx.config.iql, ctx.config.seed)?;

    let mut rows = Vec::new();
    for spec in &set.test {
        let mut actors: Vec<Box<dyn lotj::finetune::Actor>> = vec![
            Box::new(SearchActor::new(SearchKind::StraightDown, SearchParams::default())),
            Box::new(SearchActor::new(SearchKind::RandomSearch, SearchParams::default())),
            Box::new(SearchActor::new(SearchKind::SpiralSearch, SearchParams::default())),
            Box::new(LocalizeActor::new(&localizer, None)),
            Box::new(LocalizeActor::new(
                &localizer,
                Some(SearchActor::new(SearchKind::SpiralSearch, SearchParams::default())),
            )),
            Box::new(StateIqlActor {
                trainer: &state_trainer,
                localizer: Some(&localizer),
                true_socket: [spec.socket_center.0, spec.socket_center.1],
            }),
        ];
        for actor in actors.iter_mut() {
            let rep = evaluate_actor(
                actor.as_mut(),
                None,
                spec,
                scenario,
                episodes,
                ctx.config.eval_seed,
            )?;
            println!(
                "{} on domain {}: {}/{}",
                rep.method, spec.domain_id, rep.successes, rep.episodes
            );
            rows.push(report_row(&rep));
        }
    }
    write_csv(
        &dir.join("baselines.csv"),
        "method,domain,scenario,successes,episodes",
        &rows,
    )?;
    println!("baseline results in {}", dir.display());
    Ok(())
}

pub fn saliency(ctx: &Context) -> anyhow::Result<()> {
    let dir = ctx.run_dir("saliency", &[]);
    ctx.prepare_dir(&dir)?;
    let test = ctx.load_test_dataset()?;
    let daib = ctx.load_reward_model(DaibVariant::Daib)?;
    let erm = ctx.load_reward_model(DaibVariant::Erm)?;

    // Success frames of held-out domains with their geometry masks.
    let mut rows = Vec::new();
    let mut count = 0usize;
    let mut sums = (0.0f64, 0.0f64);
    for (i, traj) in test.trajectories.iter().enumerate() {
        if traj.success != 1 || count >= 50 {
            continue;
        }
        let spec = test.domain(traj.domain_id).unwrap();
        let states = test.replay_states(i)?;
        let final_state = pegsim::SimState {
            pos: *states.last().unwrap(),
            contact: false,
            steps: traj.len() as u32,
            success: true,
            done: true,
        };
        let frame = traj.observations.last().unwrap();
        let box_mask = pegsim::meaningful_region_mask(&final_state, spec);
        let m_daib = saliency::reward_grad_cam(&daib, frame, 1)?;
        let m_erm = saliency::reward_grad_cam(&erm, frame, 1)?;
        let mass_daib = saliency::in_box_mass(&m_daib.mask, &box_mask);
        let mass_erm = saliency::in_box_mass(&m_erm.mask, &box_mask);
        rows.push(format!("{},{},{},{}", traj.domain_id, count, mass_daib, mass_erm));
        sums.0 += mass_daib as f64;
        sums.1 += mass_erm as f64;
        if count < 8 {
            saliency::save_png(&m_daib, &dir.join(format!("daib_{count:02}.png")))?;
            saliency::save_png(&m_erm, &dir.join(format!("erm_{count:02}.png")))?;
        }
        count += 1;
    }
    write_csv(
        &dir.join("in_box_mass.csv"),
        "domain,frame,daib_mass,erm_mass",
        &rows,
    )?;
    println!(
        "in-box mass over {count} held-out success frames: daib {:.3}, erm {:.3}",
        sums.0 / count.max(1) as f64,
        sums.1 / count.max(1) as f64
    );
    println!("saliency outputs in {}", dir.display());
    Ok(())
}

pub fn ablate_reward(ctx: &Context, seeds: u64) -> anyhow::Result<()> {
    let dir = ctx.run_dir("ablate-reward", &[seeds.to_string()]);
    ctx.prepare_dir(&dir)?;
    let train = ctx.load_train_dataset()?;
    let test = ctx.load_test_dataset()?;
    let seed_list: Vec<u64> = (0..seeds).map(|k| ctx.config.seed + k).collect();
    let rows = experiments::ablate_reward(
        &train,
        &test,
        &DaibVariant::all(),
        &seed_list,
        ctx.config.reward.to_train_config(),
        ctx.config.eval_seed,
    )?;
    let mut csv = Vec::new();
    for r in &rows {
        for (d, a) in &r.per_domain {
            csv.push(format!("{},{},{d},{a}", r.variant.name(), r.seed));
        }
        csv.push(format!("{},{},mean,{}", r.variant.name(), r.seed, r.mean_accuracy));
    }
    write_csv(&dir.join("ablation.csv"), "variant,seed,domain,accuracy", &csv)?;
    for (variant, mean) in experiments::mean_by_variant(&rows) {
        println!("{:8} mean held-out accuracy {mean:.3}", variant.name());
    }
    println!("ablation grid in {}", dir.display());
    Ok(())
}
