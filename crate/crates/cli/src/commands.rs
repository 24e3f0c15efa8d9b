//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use softts_core::representation::DEFAULT_NUM_KERNELS;
use softts_core::{EncoderSpec, SoftLabelConfig};

use crate::plan::load_plan;
use crate::runner::{encode_dataset, label_dataset, Pipeline, TrainSummary};

#[derive(Debug, Parser)]
#[command(name = "softts", version, about = "Soft-label time series classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute training-split representations.
    Encode(EncodeArgs),
    /// Build soft-label caches from representations.
    Labels(LabelsArgs),
    /// Train every cell of the plan.
    Train(PlanArgs),
    /// Aggregate results into tables and figures.
    Report(PlanArgs),
    /// encode, labels, train and report in sequence.
    All(PlanArgs),
    /// Write the synthetic archive used for offline runs.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Plan JSON file, or a built-in preset: paper-full, desk-scale.
    #[arg(long)]
    pub plan: String,
    /// Keep existing results and caches and only run what is missing.
    #[arg(long)]
    pub resume: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Skip per-series z-normalisation.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum EncoderArg {
    Identity,
    RandomConv,
    Precomputed,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, conflicts_with = "dataset")]
    pub plan: Option<String>,
    #[arg(long, conflicts_with = "plan")]
    pub resume: bool,
    /// Dataset directory holding `<Name>_TRAIN` and `<Name>_TEST`.
    #[arg(long, requires_all = ["encoder", "out"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long)]
    pub reps_file: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NUM_KERNELS)]
    pub kernels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[arg(long, conflicts_with = "dataset")]
    pub plan: Option<String>,
    #[arg(long, conflicts_with = "plan")]
    pub resume: bool,
    #[arg(long, requires_all = ["dataset", "out"])]
    pub reps: Option<PathBuf>,
    #[arg(long, requires = "reps")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = softts_core::softlabel::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_normalize: bool,
}

fn pipeline(source: &str, resume: bool, no_normalize: bool) -> Result<Pipeline> {
    let mut plan = load_plan(source)?;
    if no_normalize {
        plan.data.normalize = false;
    }
    Pipeline::new(plan, resume)
}

fn print_train_summary(s: &TrainSummary) -> Result<()> {
    eprintln!(
        "trained {} cells, {} already recorded, {} failed",
        s.completed,
        s.skipped,
        s.failed.len()
    );
    for d in &s.diverged {
        eprintln!("diverged: {d}");
    }
    if !s.failed.is_empty() {
        let lines: Vec<String> = s.failed.iter().map(|(c, e)| format!("  {c}: {e}")).collect();
        bail!("{} cells failed:\n{}", s.failed.len(), lines.join("\n"));
    }
    Ok(())
}

fn report(p: &Pipeline) -> Result<()> {
    let summary = p.report()?;
    for n in &summary.notices {
        eprintln!("notice: {n}");
    }
    for f in &summary.files {
        println!("{}", f.display());
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Encode(a) => {
            if let Some(source) = &a.plan {
                for f in pipeline(source, a.resume, a.no_normalize)?.encode()? {
                    println!("{}", f.display());
                }
                return Ok(());
            }
            let (Some(dir), Some(kind), Some(out)) = (&a.dataset, a.encoder, &a.out) else {
                bail!("encode needs --plan, or --dataset with --encoder and --out");
            };
            let spec = match kind {
                EncoderArg::Identity => EncoderSpec::identity(),
                EncoderArg::RandomConv => EncoderSpec::random_conv(a.kernels, a.seed),
                EncoderArg::Precomputed => match &a.reps_file {
                    Some(f) => EncoderSpec::precomputed(f),
                    None => bail!("--encoder precomputed needs --reps-file"),
                },
            };
            encode_dataset(dir, &spec, !a.no_normalize, out)?;
            println!("{}", out.display());
            Ok(())
        }
        Command::Labels(a) => {
            if let Some(source) = &a.plan {
                for f in pipeline(source, a.resume, a.no_normalize)?.labels()? {
                    println!("{}", f.display());
                }
                return Ok(());
            }
            let (Some(reps), Some(dir), Some(out)) = (&a.reps, &a.dataset, &a.out) else {
                bail!("labels needs --plan, or --reps with --dataset and --out");
            };
            let config = SoftLabelConfig::with_gamma(a.gamma);
            config.validate()?;
            let check = label_dataset(reps, dir, &config, !a.no_normalize, out)?;
            if !check.is_clean() {
                eprintln!(
                    "note: {} rows without a strict own-class argmax, {} rows out of distance order",
                    check.non_strict_argmax.len(),
                    check.non_monotone.len()
                );
            }
            println!("{}", out.display());
            Ok(())
        }
        Command::Train(a) => {
            let p = pipeline(&a.plan, a.resume, a.no_normalize)?;
            print_train_summary(&p.train(a.workers)?)
        }
        Command::Report(a) => report(&pipeline(&a.plan, true, a.no_normalize)?),
        Command::All(a) => {
            let p = pipeline(&a.plan, a.resume, a.no_normalize)?;
            p.encode()?;
            p.labels()?;
            match print_train_summary(&p.train(a.workers)?) {
                Ok(()) => report(&p),
                Err(e) => {
                    if let Err(r) = report(&p) {
                        eprintln!("notice: report skipped: {r:#}");
                    }
                    Err(e)
                }
            }
        }
        Command::Synth { out, seed } => {
            for name in softts_core::synthetic::write_archive(&out, seed)? {
                println!("{}", out.join(name).display());
            }
            Ok(())
        }
    }
}

/// Parses `args` and runs the command; errors are printed and mapped to exit status 1.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
