use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ontogan::config::{RunConfig, CONFIG_ENV};
use ontogan::pipeline::{self, SynthSpec};
use ontogan::Error;

/// Ontology-conditioned feature generation for zero-shot classification and
/// KG completion.
///
/// Any `--dotted.key=value` argument not listed below overrides the matching
/// config key, e.g. `--gan.lr=0.001 --paths.out=runs/a`.
#[derive(Parser, Debug)]
#[command(name = "ontogan", version)]
struct Cli {
    /// Config file; defaults to $OZSL_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic fixture described by a TOML spec.
    Synth {
        spec: PathBuf,
        /// Fixture directory to write.
        #[arg(long)]
        out: PathBuf,
        /// Replaces the fixture spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed the ontological schema.
    TrainOnto,
    /// Train the feature generator on seen classes or relations.
    TrainGan,
    /// Pretrain TransE or DistMult vectors.
    PretrainKge,
    /// Train the relation feature extractor.
    TrainExtractor,
    /// Evaluate on unseen classes or relations.
    Eval,
    /// Run the full pipeline once per single-tag ablation.
    AblateSuite,
}

/// Separates `--a.b=v` config overrides from the arguments clap understands.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let own: &[&str] = if args.iter().any(|a| a == "synth") {
        &["config", "out", "seed"]
    } else {
        &["config"]
    };
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let key = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .map(|(k, _)| k.to_string());
        match key {
            Some(k) if i > 0 && !own.contains(&k.as_str()) => overrides.push(a),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn is_usage(err: &anyhow::Error) -> bool {
    matches!(err.downcast_ref::<Error>(), Some(Error::Config(_)))
}

fn run(cli: Cli, overrides: Vec<String>) -> anyhow::Result<()> {
    let report = match cli.command {
        Command::Synth { spec, out, seed } => {
            if !overrides.is_empty() {
                return Err(Error::Config(format!(
                    "synth takes no config overrides: {overrides:?}"
                ))
                .into());
            }
            let mut s = SynthSpec::load(&spec)?;
            if let Some(seed) = seed {
                s.set_seed(seed);
            }
            pipeline::synth(&s, &out)
                .with_context(|| format!("writing fixture to {}", out.display()))?
        }
        command => {
            let file = cli
                .config
                .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
            let cfg = RunConfig::load(file.as_deref(), &overrides)?;
            log::info!("resolved config:\n{}", cfg.to_toml());
            match command {
                Command::TrainOnto => pipeline::train_onto(&cfg)?,
                Command::TrainGan => pipeline::cmd_train_gan(&cfg)?,
                Command::PretrainKge => pipeline::cmd_pretrain_kge(&cfg)?,
                Command::TrainExtractor => pipeline::cmd_train_extractor(&cfg)?,
                Command::Eval => pipeline::cmd_eval(&cfg)?,
                Command::AblateSuite => pipeline::cmd_ablate_suite(&cfg)?,
                Command::Synth { .. } => unreachable!(),
            }
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
