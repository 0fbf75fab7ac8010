use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use drivecoach::instruction::{evaluate_classifier, load_corpus, to_directive, Classifier, RuleClassifier};
use drivecoach::trainer::{audit_replay, evaluate_policy, load_checkpoint, CoachMode, RunConfig, Task, Trainer};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "drivecoach",
    version,
    about = "Coach a simulated car with natural-language instructions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy.
    Train {
        /// TOML run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// none, scripted or live.
        #[arg(long)]
        coach: Option<CoachMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Run directory for logs and checkpoints.
        #[arg(long, default_value = "runs/latest")]
        run_dir: PathBuf,
        /// Serve the live coaching protocol on this port.
        #[arg(long)]
        serve: Option<u16>,
    },
    /// Evaluate a checkpoint with sampling switched off.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// lane_follow, full_lap or avoidance; defaults to the checkpoint's task.
        #[arg(long)]
        task: Option<Task>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Seed for evaluation start states; defaults to the run seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute rewards and metrics of a run from its replay log.
    Replay {
        #[arg(long)]
        run: PathBuf,
    },
    /// Classify a labeled corpus (JSONL) or a single utterance.
    Classify {
        #[arg(long, conflicts_with = "text")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            coach,
            seed,
            max_epochs,
            run_dir,
            serve,
        } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => RunConfig::default(),
            };
            if let Some(c) = coach {
                cfg.coach = c;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_epochs {
                cfg.max_epochs = m;
                cfg.coach_start_epoch = cfg.coach_start_epoch.min(m);
            }
            if serve.is_some() && cfg.coach != CoachMode::Live {
                cfg.coach = CoachMode::Live;
            }
            if cfg.coach == CoachMode::Live && serve.is_none() {
                bail!("--coach live needs --serve <port>");
            }
            let artifacts = match serve {
                Some(port) => {
                    let bind = std::env::var("DRIVECOACH_BIND").unwrap_or_else(|_| "127.0.0.1".into());
                    drivecoach::service::serve_training(cfg, &run_dir, &format!("{bind}:{port}"))?
                }
                None => Trainer::new(cfg, Some(&run_dir))?.run()?,
            };
            println!("{}", serde_json::to_string_pretty(&summary(&artifacts))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            task,
            episodes,
            seed,
        } => {
            let ckpt = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut cfg = ckpt.config.clone();
            if let Some(t) = task {
                cfg.task = t;
            }
            let report = evaluate_policy(&ckpt.learner.params, &cfg, episodes, seed.unwrap_or(cfg.seed))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { run } => {
            let report = audit_replay(&run)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Classify { corpus, text } => {
            if let Some(text) = text {
                let c = RuleClassifier.classify(&text);
                let d = to_directive(c.class, 1.0);
                println!(
                    "{}",
                    serde_json::json!({
                        "class": c.class.to_string(),
                        "confidence": c.confidence,
                        "directive": d.summary(),
                    })
                );
                return Ok(ExitCode::SUCCESS);
            }
            let rows = match corpus {
                Some(p) => load_corpus(&p).with_context(|| format!("loading {}", p.display()))?,
                None => bail!("give --corpus <file> or --text <utterance>"),
            };
            let report = evaluate_classifier(&rows, &RuleClassifier)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn summary(a: &drivecoach::trainer::RunArtifacts) -> serde_json::Value {
    let last = a.metrics.last();
    serde_json::json!({
        "run_dir": a.run_dir,
        "epochs": a.metrics.len(),
        "stop": a.stop,
        "final_success_rate": last.map(|m| m.success_rate),
        "final_avg_deviation": last.map(|m| m.avg_deviation),
        "beta": a.beta,
        "epochs_to_target": a.epochs_to_target,
        "last_eval": a.evals.last(),
    })
}
