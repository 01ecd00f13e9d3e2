//! `oscope`: config-driven runner for the position and size bias probes.
//!
//! Exit codes: 0 success, 2 config/schema error, 3 missing input,
//! 4 computation error. `OSCOPE_THREADS` caps worker threads.

mod config;
mod error;
mod output;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, LoadedConfig};
use crate::error::CliError;
use crate::output::RunOutput;

#[derive(Parser)]
#[command(name = "oscope", version, about = "Object position and size bias probes for contrastive embeddings")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate scene, caption and scenario-pair manifests.
    Forge(ConfigArgs),
    /// Embed forged manifests with the deterministic mock encoders.
    MockEncode(ConfigArgs),
    /// Run retrieval probes over embedding stores.
    Probe(ConfigArgs),
    /// Train one linear probe per object group.
    TrainProbe(ConfigArgs),
    /// Evaluate image-text matching scenarios.
    Match(ConfigArgs),
    /// Dataset statistics: position histograms, attention shares, presence rates.
    Stats(ConfigArgs),
    /// Monte Carlo objective estimates and the toy bias trainer.
    Simulate(ConfigArgs),
    /// Run every stage present in the config, in order.
    Run(ConfigArgs),
    /// Compare finished runs as Markdown and CSV tables.
    Report {
        /// Run directories (each holding a run manifest).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

type Stage = fn(&LoadedConfig, &mut RunOutput) -> Result<(), CliError>;

fn with_config(
    args: &ConfigArgs,
    stage: impl FnOnce(&LoadedConfig, &mut RunOutput) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = &args.out {
        cfg.config.output_dir = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
    }
    let mut out = RunOutput::open(cfg.output_dir(), &cfg.config.name, cfg.config.seed, &cfg.bytes)?;
    stage(&cfg, &mut out)?;
    eprintln!("outputs in {}", out.dir().display());
    Ok(())
}

fn dispatch(verb: Verb) -> Result<(), CliError> {
    let single = |args: &ConfigArgs, f: Stage| with_config(args, f);
    match verb {
        Verb::Forge(a) => single(&a, pipeline::forge),
        Verb::MockEncode(a) => single(&a, pipeline::mock_encode),
        Verb::Probe(a) => single(&a, pipeline::probe),
        Verb::TrainProbe(a) => single(&a, pipeline::train),
        Verb::Match(a) => single(&a, pipeline::matching),
        Verb::Stats(a) => single(&a, pipeline::stats),
        Verb::Simulate(a) => single(&a, pipeline::simulate),
        Verb::Run(a) => with_config(&a, |cfg, out| {
            let ran = pipeline::run_all(cfg, out)?;
            eprintln!("ran {}", ran.join(", "));
            Ok(())
        }),
        Verb::Report { runs, out } => {
            for p in report::write_report(&runs, &out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = oscope_core::parallel::pool(oscope_core::parallel::thread_cap());
    match pool.install(|| dispatch(cli.verb)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oscope: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
