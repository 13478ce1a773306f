//! `wrcfusion` command-line driver.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wrcfusion_core::config::RunConfig;
use wrcfusion_core::detection::format_detections;
use wrcfusion_core::pipeline::{self, Sample, TrainOutputs};
use wrcfusion_core::radar::LoadedScene;
use wrcfusion_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wrcfusion", version, about = "Radar-camera fusion detector on synthetic radar cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// `key=value`, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset split.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        /// Scene count; defaults to the split's configured count.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train from scratch and write a checkpoint plus a JSONL loss log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint and write the detection dump.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "eval")]
        split: Split,
        /// Where to write the detection dump; defaults to the output dir.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate counts.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: bool,
    },
    /// Dump pre- and post-block feature maps as graymaps.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Omit to inspect the freshly initialized model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, value_enum, default_value = "eval")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply_overrides(&common.overrides)?;
    if let Ok(seed) = std::env::var("WRCFUSION_SEED") {
        cfg.set("seed", &seed)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_dir(cfg: &RunConfig, split: Split) -> &std::path::Path {
    match split {
        Split::Train => &cfg.train_dir,
        Split::Eval => &cfg.eval_dir,
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth { common, split, count } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = count {
                match split {
                    Split::Train => cfg.train_count = n,
                    Split::Eval => cfg.eval_count = n,
                }
            }
            let manifest = pipeline::synthesize_split(&cfg, matches!(split, Split::Eval))?;
            writeln!(
                out,
                "wrote {} scenes (seed {}) to {}",
                manifest.count,
                manifest.seed,
                split_dir(&cfg, split).display()
            )?;
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let samples = pipeline::load_split(&cfg, &cfg.train_dir)?;
            let outputs = TrainOutputs::in_dir(&cfg.output_dir);
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("config.txt"), cfg.serialize())?;
            let mut io_err = None;
            pipeline::train(&cfg, &samples, Some(&outputs), |r| {
                if let Err(e) = writeln!(out, "{}", r.to_json()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(e.into());
            }
            writeln!(out, "checkpoint {}", outputs.checkpoint.display())?;
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            dump,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| TrainOutputs::in_dir(&cfg.output_dir).checkpoint);
            let model = pipeline::load_model(&cfg, &ckpt)?;
            let samples = pipeline::load_split(&cfg, split_dir(&cfg, split))?;
            let (metrics, dets) = pipeline::evaluate_split(&model, &cfg, &samples, cfg.subset)?;
            let names = cfg.class_names();
            let dump = dump.unwrap_or_else(|| cfg.output_dir.join(format!("detections_{}.txt", cfg.subset.name())));
            if let Some(dir) = dump.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&dump, format_detections(&dets, &names))?;
            write!(out, "{}", pipeline::format_metrics(&metrics, &names, &cfg.subset.name()))?;
            writeln!(out, "detections {} -> {}", dets.len(), dump.display())?;
        }
        Command::Bench { common, json } => {
            let cfg = load_config(&common)?;
            let report = pipeline::bench(&cfg)?;
            if json {
                let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
                writeln!(out, "{text}")?;
            } else {
                write!(out, "{}", pipeline::format_bench(&report))?;
            }
        }
        Command::Inspect {
            common,
            checkpoint,
            scene,
            split,
            out: dir,
        } => {
            let cfg = load_config(&common)?;
            let model = match checkpoint {
                Some(p) => pipeline::load_model(&cfg, &p)?,
                None => pipeline::build_model(&cfg)?,
            };
            let sample = Sample::new(LoadedScene::load(split_dir(&cfg, split), scene)?, &cfg.coder())?;
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("inspect"));
            for path in pipeline::inspect(&model, &sample, &dir)? {
                writeln!(out, "{}", path.display())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wrcfusion: {e}");
            ExitCode::FAILURE
        }
    }
}
