use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sigdetect::detectors::parse_roster;
use sigdetect::harness::pipeline::summarize;
use sigdetect::harness::report::chart_title;
use sigdetect::harness::{ExperimentConfig, Pipeline, RunConfig, Stage};
use sigdetect::waveforms::SignalKind;
use sigdetect::{Error, Result};

#[derive(Parser)]
#[command(name = "sigdetect", version, about = "Signal detection lab: datasets, detectors, CFAR calibration, Pd curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train and validation datasets
    Gen,
    /// Train the learned detector (generates datasets if needed)
    Train,
    /// Calibrate thresholds on noise-only sequences
    Calibrate,
    /// Evaluate detection curves on the validation sets
    Eval,
    /// Write CSV, SVG, summaries and the run manifest
    Report,
    /// Full pipeline
    Run,
}

#[derive(Args)]
struct Overrides {
    /// TOML run configuration; defaults to the desk-scale four-experiment run
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict to one experiment: sine, qpsk, ofdm or unified
    #[arg(long, global = true)]
    signal: Option<String>,
    /// Sequences per SNR bin per class, for both train and validation sets
    #[arg(long, global = true)]
    per_bin: Option<usize>,
    /// Target false-alarm probability
    #[arg(long, global = true)]
    pfa: Option<f64>,
    /// Comma-separated detector roster (energy,fisher,mf,learned)
    #[arg(long, global = true)]
    detectors: Option<String>,
}

fn build_config(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = o.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.run.out = out.clone();
    }
    if let Some(pfa) = o.pfa {
        cfg.run.target_pfa = pfa;
    }
    if let Some(list) = &o.detectors {
        cfg.run.detectors = parse_roster(list).map_err(|e| Error::Config(e.to_string()))?;
        for e in &mut cfg.experiments {
            e.detectors = None;
        }
    }
    if let Some(n) = o.per_bin {
        cfg.run.train_per_bin = n;
        cfg.run.eval_per_bin = n;
        for e in &mut cfg.experiments {
            e.train_per_bin = None;
            e.eval_per_bin = None;
        }
    }
    if let Some(signal) = &o.signal {
        let exp = match signal.as_str() {
            "unified" => ExperimentConfig::unified(),
            other => ExperimentConfig::single(
                other
                    .parse::<SignalKind>()
                    .map_err(|_| Error::Config(format!("unknown signal `{other}`")))?,
            ),
        };
        if cfg.experiments.iter().any(|e| e.name == exp.name) {
            cfg.select(&exp.name)?;
        } else {
            cfg.experiments = vec![exp];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = build_config(&cli.opts)?;
    let pipeline = Pipeline::new(cfg)?;
    let until = match cli.command {
        Command::Gen => Stage::Gen,
        Command::Train => Stage::Train,
        Command::Calibrate => Stage::Calibrate,
        Command::Eval => Stage::Eval,
        Command::Report | Command::Run => Stage::Report,
    };
    let stamps = pipeline.run_until(until)?;
    for s in &stamps {
        println!("{:<16} {:>9.1} s", s.stage, s.elapsed_s);
    }
    if until == Stage::Report {
        println!();
        println!("{:<10} {:<16} {:>10} {:>10}", "experiment", "detector", "snr@pd0.5", "held P_FA");
        for exp in &pipeline.config.experiments {
            let summary = summarize(&pipeline.load_curves(exp)?, chart_title(&exp.signals));
            for d in &summary.detectors {
                let snr = d
                    .snr_at_pd_50
                    .map(|v| format!("{v:.2}"))
                    .unwrap_or_else(|| "n/a".into());
                println!("{:<10} {:<16} {:>10} {:>10.5}", exp.name, d.label, snr, d.holdout_pfa);
            }
        }
        println!("\nartifacts in {}", pipeline.out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
