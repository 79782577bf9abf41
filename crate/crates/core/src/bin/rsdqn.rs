use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rsdqn::attacks::{AttackKind, AttackSpec};
use rsdqn::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rsdqn", version, about = "Robust student DQN: train, attack, certify, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed (or --seed) and write checkpoints and metrics.
    Train(RunArgs),
    /// Play seeded episodes with the deployed network under test attacks.
    Evaluate(EvalArgs),
    /// Compute the certified radius ε_max at every visited state.
    Certify(CertArgs),
    /// Pool result files into text and JSON tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Phase {
    Train,
    Test,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Use only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the training frame budget.
    #[arg(long)]
    frames: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Attack kind: none, fgsm, pgd or training_pgd.
    #[arg(long)]
    attack: Option<String>,
    /// Attack radius.
    #[arg(long)]
    eps: Option<f64>,
    /// Attack steps.
    #[arg(long)]
    k: Option<u32>,
    /// Whether the attack flags set the training attack or the test attacks.
    #[arg(long, value_enum)]
    phase: Option<Phase>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to load; defaults to <out>/seed-<n>/checkpoint.bin.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Episodes per attack.
    #[arg(long)]
    episodes: Option<u64>,
}

#[derive(Args)]
struct CertArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Certify every n-th visited state.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result files written by `evaluate` or `certify`.
    files: Vec<PathBuf>,
    /// Also write the pooled tables as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn override_attack(base: AttackSpec, args: &RunArgs) -> Result<AttackSpec> {
    let mut spec = base;
    if let Some(kind) = &args.attack {
        spec.kind = kind.parse::<AttackKind>()?;
    }
    if let Some(eps) = args.eps {
        spec.epsilon = eps;
    }
    if let Some(k) = args.k {
        spec.steps = k;
    }
    spec.validate()?;
    Ok(spec)
}

fn load(args: &RunArgs, default_phase: Phase) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(frames) = args.frames {
        cfg.train.frames = frames;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let touched = args.attack.is_some() || args.eps.is_some() || args.k.is_some();
    if touched {
        match args.phase.unwrap_or(default_phase) {
            Phase::Train => cfg.train_attack = override_attack(cfg.train_attack, args)?,
            Phase::Test if args.attack.is_some() => {
                cfg.eval_attacks = vec![override_attack(AttackSpec::pgd(rsdqn::attacks::DEFAULT_EPSILON, 1), args)?];
            }
            Phase::Test => {
                for a in cfg.eval_attacks.iter_mut().filter(|a| !a.is_none()) {
                    *a = override_attack(*a, args)?;
                }
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_for(cfg: &ExperimentConfig, given: &Option<PathBuf>) -> Result<(u64, PathBuf)> {
    let seed = cfg.seeds[0];
    if cfg.seeds.len() > 1 && given.is_none() {
        bail!("config lists several seeds; pick one with --seed");
    }
    let path = given.clone().unwrap_or_else(|| cfg.seed_dir(seed).join("checkpoint.bin"));
    Ok((seed, path))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = load(&args, Phase::Train)?;
            for &seed in &cfg.seeds {
                let out = harness::train(&cfg, seed).with_context(|| format!("training seed {seed}"))?;
                println!("seed {seed}: {}", out.checkpoint.display());
                println!("seed {seed}: {}", out.metrics.display());
            }
        }
        Command::Evaluate(args) => {
            let mut cfg = load(&args.run, Phase::Test)?;
            if let Some(n) = args.episodes {
                cfg.evaluation.episodes = n;
            }
            cfg.validate()?;
            let (seed, checkpoint) = checkpoint_for(&cfg, &args.checkpoint)?;
            let result = harness::evaluate_checkpoint(&cfg, &checkpoint, &cfg.eval_attacks)?;
            let (json, text) = harness::write_result(&cfg.seed_dir(seed), "eval", &result)?;
            print!("{}", std::fs::read_to_string(&text)?);
            println!("{}", json.display());
        }
        Command::Certify(args) => {
            let mut cfg = load(&args.eval.run, Phase::Test)?;
            if let Some(n) = args.eval.episodes {
                cfg.evaluation.certify_episodes = n;
            }
            if let Some(s) = args.stride {
                cfg.evaluation.certify_stride = s;
            }
            cfg.validate()?;
            let (seed, checkpoint) = checkpoint_for(&cfg, &args.eval.checkpoint)?;
            let result = harness::certify_checkpoint(&cfg, &checkpoint)?;
            let (json, text) = harness::write_result(&cfg.seed_dir(seed), "cert", &result)?;
            print!("{}", std::fs::read_to_string(&text)?);
            println!("{}", json.display());
        }
        Command::Report(args) => {
            let report = harness::report(&args.files)?;
            print!("{}", harness::render_text(&report));
            if let Some(path) = args.json {
                let mut s = serde_json::to_string_pretty(&report)?;
                s.push('\n');
                std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}
