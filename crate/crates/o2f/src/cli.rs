//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use o2f_core::Combine;

use crate::commands::{self, AssignOptions, Metric, Overrides};
use crate::error::CliError;
use crate::exec::RayonExecutor;

#[derive(Debug, Parser)]
#[command(name = "o2f", version, about = "One-to-few label assignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Ap,
    Mmr,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CombineArg {
    Multiply,
    Add,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Config file (flat `section.key = value` lines, or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Assignment mode: o2f, o2o, o2o-hungarian, o2m, one-to-two.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: self.mode.clone(),
            nms_threshold: self.nms_threshold,
            set: self.set.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run; writes runrecord.json and metrics.csv.
    Train(RunArgs),
    /// Train every point of a sweep file, one directory per run.
    Sweep(RunArgs),
    /// Score a detections file against ground truth; writes eval.json.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        metric: MetricArg,
        /// Apply class-aware NMS first.
        #[arg(long)]
        nms_threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign one image's predictions to ground truth and dump the roles.
    Assign {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "o2f")]
        mode: String,
        #[arg(long, default_value_t = 7)]
        k: usize,
        #[arg(long, default_value_t = 0.8)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "multiply")]
        combine: CombineArg,
        /// Epoch temperature for soft degrees.
        #[arg(long, default_value_t = 0.6)]
        temperature: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scale analytic gradients by 1 + x (negative control).
        #[arg(long, default_value_t = 0.0, hide = true)]
        corrupt: f64,
    },
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Executes a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    let exec = RayonExecutor::from_env();
    match cli.command {
        Command::Train(args) => {
            let rec = commands::train(args.config.as_deref(), &args.out, &args.overrides(), &exec)?;
            if let Some(e) = rec.last() {
                println!(
                    "epoch {}: ap_nms {:.4} ap_nonms {:.4} dup_per_gt {:.3}",
                    e.epoch, e.ap_nms, e.ap_nonms, e.dup_per_gt
                );
            }
        }
        Command::Sweep(args) => {
            let config = args
                .config
                .as_deref()
                .ok_or_else(|| CliError::config("sweep needs --config"))?;
            let entries = commands::sweep(config, &args.out, &args.overrides(), &exec)?;
            for e in entries {
                println!("{}: ap_nonms {:.4}", e.name, e.final_ap_nonms.unwrap_or(f64::NAN));
            }
        }
        Command::Eval {
            detections,
            gt,
            metric,
            nms_threshold,
            out,
        } => {
            let metric = match metric {
                MetricArg::Ap => Metric::Ap,
                MetricArg::Mmr => Metric::Mmr,
                MetricArg::All => Metric::All,
            };
            print_json(&commands::eval_files(&detections, &gt, metric, nms_threshold, out.as_deref())?);
        }
        Command::Assign {
            predictions,
            gt,
            mode,
            k,
            alpha,
            combine,
            temperature,
            out,
        } => {
            let opts = AssignOptions {
                mode,
                k,
                alpha,
                combine: match combine {
                    CombineArg::Multiply => Combine::Multiply,
                    CombineArg::Add => Combine::Add,
                },
                temperature,
            };
            print_json(&commands::assign_files(&predictions, &gt, &opts, out.as_deref())?);
        }
        Command::Gradcheck {
            seed,
            trials,
            out,
            corrupt,
        } => {
            let report = commands::gradcheck(seed, trials, corrupt, out.as_deref())?;
            print_json(&report);
            if !report.passed {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Parses arguments, runs, and maps failures to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
