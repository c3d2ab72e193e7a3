//! CLI for the robustness evaluation harness.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use robusteval::harness::{cmd_analyze, cmd_report, cmd_run, AnalysisConfig, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "robusteval",
    about = "Evaluate LLM robustness strategies across adversarial and OOD benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured experiment and persist a run directory.
    Run {
        /// Experiment config (TOML).
        #[arg(long, short)]
        config: PathBuf,
        /// Also run the correlation analysis on the fresh metrics.
        #[arg(long)]
        analyze: bool,
    },
    /// Fit correlation lines over a metrics CSV and emit plots.
    Analyze {
        /// metrics.csv produced by `run`.
        #[arg(long, short)]
        metrics: PathBuf,
        /// Output directory for fits.json and plots/ (default: the CSV's directory).
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Axis convention: ood-x-adv-y (default) or adv-x-ood-y.
        #[arg(long)]
        axis: Option<String>,
        /// Slope magnitude treated as neutral.
        #[arg(long)]
        neutral_band: Option<f64>,
        /// Averaging rows to analyze: weighted (default) or macro.
        #[arg(long)]
        averaging: Option<String>,
    },
    /// Render a human-readable report for a completed run directory.
    Report {
        #[arg(long, short)]
        run_dir: PathBuf,
    },
    /// Check an experiment config and referenced files without running.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn analysis_settings(
    base: AnalysisConfig,
    axis: Option<String>,
    neutral_band: Option<f64>,
    averaging: Option<String>,
) -> anyhow::Result<AnalysisConfig> {
    let mut settings = base;
    if let Some(axis) = axis {
        settings.axis_convention = axis.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    if let Some(band) = neutral_band {
        settings.neutral_band = band;
    }
    if let Some(avg) = averaging {
        settings.averaging = avg.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    Ok(settings)
}

fn print_analysis(outcome: &robusteval::harness::AnalysisOutcome) {
    println!("fits written to {}", outcome.fits_path.display());
    println!("{} plots written", outcome.plot_paths.len());
    println!();
    println!("slope signs (accuracy):");
    for (model, sign) in &outcome.summary {
        println!("  {model}: {sign}");
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, analyze } => {
            let cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let outcome = cmd_run(&cfg).await?;
            println!("run directory: {}", outcome.run_dir.display());
            println!("metrics: {}", outcome.metrics_csv.display());
            for skip in &outcome.skips {
                println!("skipped: {skip}");
            }
            if analyze {
                let analysis = cmd_analyze(&outcome.metrics_csv, &cfg.analysis, &outcome.run_dir)?;
                print_analysis(&analysis);
            }
        }
        Command::Analyze {
            metrics,
            out,
            axis,
            neutral_band,
            averaging,
        } => {
            let settings = analysis_settings(AnalysisConfig::default(), axis, neutral_band, averaging)?;
            let out_dir = out.unwrap_or_else(|| {
                metrics.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
            });
            let outcome = cmd_analyze(&metrics, &settings, &out_dir)?;
            print_analysis(&outcome);
        }
        Command::Report { run_dir } => {
            let report = cmd_report(&run_dir)?;
            println!("{report}");
        }
        Command::ValidateConfig { config } => {
            ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            println!("config ok: {}", config.display());
        }
    }
    Ok(())
}
