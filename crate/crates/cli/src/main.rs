use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use latmmi::commands::{self, ce_model_path, LatticeOp};
use latmmi::io::{read_file, ExperimentConfig};
use latmmi::objectives::NumeratorMode;
use latmmi::toy::DenominatorMode;
use latmmi::verify::Suite;

#[derive(Parser)]
#[command(
    name = "latmmi",
    version,
    about = "Lattice MMI training experiments on a synthetic ASR task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `paths.out_dir` (default `out`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/dev/test datasets.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Overrides `synth.data_seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-entropy pretraining of the CE model.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Raw, determinized and numerator lattices for every training utterance.
    MakeLattices {
        #[command(flatten)]
        common: Common,
        /// CE model; defaults to `models/ce.model` under the output directory.
        #[arg(long)]
        ce_model: Option<PathBuf>,
    },
    /// Sequence training; exits with status 2 if any measure check fails.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        numerator: Option<NumeratorArg>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one lattice algorithm on a lattice file.
    Lattice {
        #[arg(value_enum)]
        op: OpArg,
        #[arg(long = "in")]
        input: PathBuf,
        /// Score table file; all-zero scores when absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1_000_000)]
        max_paths: usize,
    },
    /// Run a verification suite and print a JSON report.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Damage one input so that a named check must fail.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Otf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NumeratorArg {
    Fixed,
    Viterbi,
    Ancestral,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Forward,
    Viterbi,
    Determinize,
    Sample,
    Enumerate,
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Oracle,
    Theorem,
    Gradient,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let out = common
        .out_dir
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn read_opt(path: Option<&Path>) -> Result<Option<String>> {
    path.map(|p| read_file(p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { common, seed } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(s) = seed {
                cfg.synth.data_seed = s;
            }
            print_json(&commands::gen_data(&cfg, &out)?);
        }
        Command::Pretrain { common } => {
            let (cfg, out) = load(&common)?;
            print_json(&commands::pretrain(&cfg, &out)?);
        }
        Command::MakeLattices { common, ce_model } => {
            let (cfg, out) = load(&common)?;
            let model = ce_model.unwrap_or_else(|| ce_model_path(&out));
            let report = commands::make_lattices(&cfg, &out, &model)?;
            eprintln!(
                "raw/det size ratio: mean {:.3} over paths, mean {:.3} over arcs, min {:.3} over paths",
                report.mean_path_ratio, report.mean_arc_ratio, report.min_path_ratio
            );
            print_json(&report);
        }
        Command::Train {
            common,
            mode,
            numerator,
            seed,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(m) = mode {
                cfg.train.mode = match m {
                    ModeArg::Baseline => DenominatorMode::Baseline,
                    ModeArg::Otf => DenominatorMode::Otf,
                };
            }
            if let Some(n) = numerator {
                cfg.train.numerator = match n {
                    NumeratorArg::Fixed => NumeratorMode::Fixed,
                    NumeratorArg::Viterbi => NumeratorMode::Viterbi,
                    NumeratorArg::Ancestral => NumeratorMode::Ancestral,
                };
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if !cfg.train.check_theorem {
                log::warn!("measure checks are disabled; the exit status does not cover them");
            }
            let report = commands::train(&cfg, &out)?;
            print_json(&report);
            if !report.summary.harness_ok {
                eprintln!("measure checks failed; see {}", report.metrics.display());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Lattice {
            op,
            input,
            scores,
            seed,
            max_paths,
        } => {
            let op = match op {
                OpArg::Forward => LatticeOp::Forward,
                OpArg::Viterbi => LatticeOp::Viterbi,
                OpArg::Determinize => LatticeOp::Determinize,
                OpArg::Sample => LatticeOp::Sample,
                OpArg::Enumerate => LatticeOp::Enumerate,
                OpArg::Validate => LatticeOp::Validate,
            };
            let lattice = read_file(&input)?;
            let scores = read_opt(scores.as_deref())?;
            let out = commands::lattice_op(op, &lattice, scores.as_deref(), seed, max_paths)?;
            print!("{}", out.text);
            if !out.ok {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Verify {
            suite,
            seed,
            corrupt,
        } => {
            let suite = match suite {
                SuiteArg::Oracle => Suite::Oracle,
                SuiteArg::Theorem => Suite::Theorem,
                SuiteArg::Gradient => Suite::Gradient,
            };
            let report = commands::verify(suite, seed, corrupt)?;
            print_json(&report);
            if !report.passed() {
                eprintln!("failed checks: {}", report.failed_checks().join(", "));
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
