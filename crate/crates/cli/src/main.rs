//! `oralfuse`: prepare, augment, train and evaluate from one config file.
//!
//! Exit codes: 0 success, 1 validation error, 2 data error, 3 training or
//! numeric error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oralfuse::pipeline::{run_all, run_stage, Overrides, PipelineConfig, PipelineError, Stage};
use oralfuse::synthetic::{write_synthetic_dataset, SyntheticSpec};

#[derive(Parser)]
#[command(name = "oralfuse", version, about = "Multimodal oral-lesion classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    workdir: Option<PathBuf>,
    /// Small randomly initialised encoder and short schedule.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest and split; writes split.manifest and reports/dataset_stats.json.
    Prepare(Common),
    /// Expand and oversample the training subset; writes augmented.manifest.
    Augment(Common),
    /// Two-stage training; writes checkpoints/ and logs/training.jsonl.
    Train(Common),
    /// Test-set evaluation; writes reports/report.txt and reports/report.json.
    Evaluate(Common),
    /// All four stages in order.
    RunAll(Common),
    /// Write a small fabricated dataset in the expected layout.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 48)]
        size: u32,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let overrides = Overrides {
        seed: common.seed,
        workdir: common.workdir.clone(),
        desk_scale: common.desk_scale,
    };
    PipelineConfig::load(&common.config, &overrides)
}

fn run(command: Command) -> Result<(), PipelineError> {
    let (common, stage) = match command {
        Command::SynthData {
            out,
            per_class,
            size,
            seed,
        } => {
            let spec = SyntheticSpec {
                images_per_class: per_class,
                size,
                seed,
                ..SyntheticSpec::default()
            };
            write_synthetic_dataset(&out, &spec)?;
            println!("wrote synthetic dataset to {}", out.display());
            return Ok(());
        }
        Command::RunAll(c) => {
            let config = load(&c)?;
            let outcome = run_all(&config)?;
            print!(
                "{}",
                oralfuse::evaluation::render_report(&outcome.report, oralfuse::evaluation::ReportFormat::Text)
            );
            return Ok(());
        }
        Command::Prepare(c) => (c, Stage::Prepare),
        Command::Augment(c) => (c, Stage::Augment),
        Command::Train(c) => (c, Stage::Train),
        Command::Evaluate(c) => (c, Stage::Evaluate),
    };
    let config = load(&common)?;
    run_stage(&config, stage)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
