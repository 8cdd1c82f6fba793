use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tmc_cli::pipeline::{self, COMPARISON_FILE, TABLE_HEADER};
use tmc_cli::{exit_code, ExperimentConfig, Overrides};
use tmc_core::models::Kind;

/// Patient-specific seizure prediction experiments on EEG recordings.
#[derive(Parser)]
#[command(name = "tmc", version)]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Flags {
    /// Experiment config (TOML). Flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "ID")]
    patient: Option<String>,
    /// Preictal span length in minutes.
    #[arg(long, global = true, value_parser = ["30", "60"])]
    preictal: Option<String>,
    /// Window length in seconds.
    #[arg(long, global = true, value_parser = ["5", "20"])]
    window: Option<String>,
    /// Overlap of consecutive preictal windows, in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    overlap: Option<f64>,
    #[arg(long, global = true, value_parser = ["mlp", "cnn", "tmct", "tmcvit"])]
    model: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Folds trained in parallel during cross-validation.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run patients that fail the selection rule.
    #[arg(long, global = true)]
    allow_ineligible: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic recording as EDF with its summary.
    Synth,
    /// Read recordings and check patient eligibility.
    Ingest,
    /// Label spans, cut windows, balance and split.
    Segment,
    /// Train the model and save the selected checkpoint.
    Train,
    /// Score the test windows with the saved checkpoint.
    Eval {
        /// Score the windows of this report instead, tiled by this
        /// experiment's shorter windows.
        #[arg(long, value_name = "REPORT")]
        align_to: Option<PathBuf>,
    },
    /// McNemar test between two reports (files or run directories).
    Compare { a: PathBuf, b: PathBuf },
    /// Print a summary row per report.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Ingest, segment, train and eval.
    Run,
}

impl Flags {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let num = |s: &Option<String>| {
            s.as_deref()
                .map(|v| v.parse::<f64>().expect("clap restricts values"))
        };
        let overrides = Overrides {
            patient: self.patient.clone(),
            preictal: num(&self.preictal),
            window: num(&self.window),
            overlap: self.overlap,
            model: self
                .model
                .as_deref()
                .map(|m| m.parse::<Kind>().expect("clap restricts values")),
            seed: self.seed,
            jobs: self.jobs,
            out: self.out.clone(),
            allow_ineligible: self.allow_ineligible,
        };
        let cfg = base.apply(&overrides);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compare { a, b } => {
            let cmp = pipeline::compare_models(&a, &b)?;
            let json = serde_json::to_string_pretty(&cmp)?;
            if let Some(out) = &cli.flags.out {
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join(COMPARISON_FILE), format!("{json}\n"))?;
            }
            println!("{json}");
        }
        Command::Report { reports } => {
            println!("{TABLE_HEADER}");
            for row in pipeline::report_rows(&reports)? {
                println!("{row}");
            }
        }
        command => {
            let cfg = cli.flags.experiment()?;
            match command {
                Command::Synth => {
                    let dir = pipeline::synth(&cfg)?;
                    println!("{}", dir.display());
                }
                Command::Ingest => {
                    let s = pipeline::ingest(&cfg)?;
                    println!(
                        "{}: {} files, {} seizures, {} lead, eligible: {}",
                        s.patient,
                        s.files.len(),
                        s.annotations.len(),
                        s.lead_seizures,
                        s.eligible
                    );
                }
                Command::Segment => {
                    let s = pipeline::segment(&cfg)?;
                    println!(
                        "{} spans, {} windows, {} balanced, {} test",
                        s.spans.len(),
                        s.windows.len(),
                        s.samples.len(),
                        s.split.test.len()
                    );
                }
                Command::Train => {
                    let s = pipeline::train_stage(&cfg)?;
                    println!(
                        "{}: selected epoch {} of {}",
                        s.model,
                        s.selected_epoch,
                        s.history.len()
                    );
                }
                Command::Eval { align_to } => {
                    let r = pipeline::eval_stage(&cfg, align_to.as_deref())?;
                    println!("{TABLE_HEADER}\n{}", r.table_row());
                }
                Command::Run => {
                    let r = pipeline::run_experiment(&cfg)?;
                    println!("{TABLE_HEADER}\n{}", r.table_row());
                }
                Command::Compare { .. } | Command::Report { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
