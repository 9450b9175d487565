use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cleaneval_core::{DistortionParams, Schema, Transform};
use cleaneval_cli::{cmd_audit, cmd_emd, cmd_generate, cmd_run, format_emd, RunConfig};

/// Evaluate data-cleaning strategies by glitch improvement, statistical
/// distortion and cost.
#[derive(Parser)]
#[command(name = "cleaneval", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed (and the generator seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV.
    Generate(Common),
    /// Report glitch percentages and per-time glitch counts.
    Audit(Common),
    /// Run the replication experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Histogram bins per dimension for the distortion measure.
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Print the statistical distortion between two dataset files.
    Emd {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        bins: Option<usize>,
        /// Optional config supplying column mapping, metric and transform.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c)?;
            let path = cmd_generate(&cfg, &cfg.output_dir(c.out.as_deref()))?;
            println!("{}", path.display());
        }
        Command::Audit(c) => {
            let cfg = load(&c)?;
            let report = cmd_audit(&cfg, &cfg.output_dir(c.out.as_deref()))?;
            let p = report.scan.percentages().0;
            println!("series: {} (ideal: {})", report.scan.series.len(), report.ideal_series);
            println!("missing: {}%\ninconsistent: {}%\noutlier: {}%", p[0], p[1], p[2]);
        }
        Command::Run { common, bins } => {
            let mut cfg = load(&common)?;
            if let Some(b) = bins {
                cfg.experiment.distortion.bins = b;
            }
            let out = cfg.output_dir(common.out.as_deref());
            let report = cmd_run(&cfg, &out)?;
            println!(
                "{} results, {} failures, written to {}",
                report.output.results.len(),
                report.output.failures.len(),
                out.display()
            );
        }
        Command::Emd { a, b, bins, config } => {
            let (schema, mut params, transform) = match config {
                Some(p) => {
                    let cfg = RunConfig::load(&p)?;
                    (cfg.schema(), cfg.experiment.distortion, cfg.experiment.transform)
                }
                None => (Schema::default(), DistortionParams::default(), Transform::default()),
            };
            if let Some(n) = bins {
                params.bins = n;
            }
            let d = cmd_emd(&a, &b, &schema, &params, &transform).context("emd failed")?;
            println!("{}", format_emd(d));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
