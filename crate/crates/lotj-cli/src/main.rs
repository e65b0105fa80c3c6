//! Pipeline driver. Every command reads one JSON config, derives its run
//! directory from a content hash of the resolved config, and writes the
//! resolved config next to its outputs so any run can be replayed exactly.

mod artifacts;
mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "lotj", version, about = "offline-to-online insertion learning pipeline")]
struct Cli {
    /// JSON config; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (also settable via LOTJ_OUT; default ./runs).
    #[arg(long, global = true)]
    out: Option<std::path::PathBuf>,
    /// Overwrite existing non-empty outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and write the train/test datasets.
    Collect,
    /// Train the reward classifier for one representation variant.
    TrainReward {
        #[arg(long, value_parser = parse_variant)]
        variant: Option<lotj::DaibVariant>,
    },
    /// Offline RL pretraining (policy, Q, V) bundled with a reward model.
    TrainOffline {
        /// Drop the policy's split-representation terms.
        #[arg(long)]
        no_daib_policy: bool,
    },
    /// Self-supervised online finetuning on held-out domains.
    Finetune {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<u32>,
        /// Finetune only this held-out domain id.
        #[arg(long)]
        domain: Option<u32>,
        /// Use the plain-supervised reward model instead of the split one.
        #[arg(long)]
        no_daib_reward: bool,
        /// Use a bundle pretrained without the policy bottleneck.
        #[arg(long)]
        no_daib_policy: bool,
    },
    /// Paired evaluation of the learned policy and scripted baselines.
    Evaluate {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<u32>,
        /// Evaluate the finetuned bundle from this run directory instead of
        /// the offline one.
        #[arg(long)]
        bundle: Option<std::path::PathBuf>,
    },
    /// Scripted and learned baselines (search, localize, state-IQL).
    Baseline {
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<u32>,
    },
    /// Grad-CAM maps and in-box mass statistics for reward models.
    Saliency,
    /// The five-variant reward-generalization grid.
    AblateReward {
        /// Seeds per variant (starting at the config seed).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn parse_variant(s: &str) -> Result<lotj::DaibVariant, String> {
    lotj::DaibVariant::parse(s)
        .ok_or_else(|| format!("unknown variant {s} (daib|dann|lambda0|vib|erm)"))
}

fn parse_scenario(s: &str) -> Result<u32, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        _ => Err("scenario must be 1 or 2".into()),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
            lotj::ExperimentConfig::from_json(&raw)?
        }
        None => lotj::ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("LOTJ_OUT").map(Into::into))
        .unwrap_or_else(|| "runs".into());
    let ctx = artifacts::Context {
        config,
        out_root,
        force: cli.force,
    };
    match cli.command {
        Command::Collect => commands::collect(&ctx),
        Command::TrainReward { variant } => commands::train_reward(&ctx, variant),
        Command::TrainOffline { no_daib_policy } => commands::train_offline(&ctx, no_daib_policy),
        Command::Finetune {
            trials,
            scenario,
            domain,
            no_daib_reward,
            no_daib_policy,
        } => commands::finetune(&ctx, trials, scenario, domain, no_daib_reward, no_daib_policy),
        Command::Evaluate { scenario, bundle } => commands::evaluate(&ctx, scenario, bundle),
        Command::Baseline { scenario } => commands::baseline(&ctx, scenario),
        Command::Saliency => commands::saliency(&ctx),
        Command::AblateReward { seeds } => commands::ablate_reward(&ctx, seeds),
    }
}
