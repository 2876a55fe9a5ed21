//! The CLI verbs as library functions. Each reads and writes files under an
//! output directory and returns a report that the binary prints.
//!
//! Layout under the output directory:
//!
//! ```text
//! data/{train,dev,test}.data
//! models/ce.model
//! lattices/<utt>.raw.lat  <utt>.det.lat  <utt>.num.lat  <utt>.fixed.path
//! models/<mode>-<numerator>.model
//! metrics/<mode>-<numerator>.jsonl
//! ```

use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::algorithms::{
    backward_fill, determinize_best_alignment, enumerate_paths, forward_logsum, viterbi_best_path,
};
use crate::io::{
    parse_lattice, parse_lattice_unchecked, parse_path, parse_scores, print_lattice, print_path,
    read_dataset_split, read_file, read_model, write_atomic, write_dataset_split, write_model,
    ExperimentConfig, IoError, MetricsWriter,
};
use crate::lattice::{fmt_score, validate, Lattice, LatticeError, ScoreTable};
use crate::objectives::NumeratorMode;
use crate::toy::{
    build_lattices, ce_pretrain, frame_accuracy, run, synth_dataset, Dataset, DenominatorMode,
    Prepared, RunSummary, ScorerParams, ToyError, ToyTask, Utterance, UtteranceLattices,
};
use crate::verify::{run_suite, Suite, VerifyError, VerifyReport};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{0}")]
    Usage(String),
}

impl From<crate::objectives::ObjectiveError> for CommandError {
    fn from(e: crate::objectives::ObjectiveError) -> Self {
        CommandError::Toy(e.into())
    }
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

pub fn data_path(out: &FsPath, split: &str) -> PathBuf {
    out.join("data").join(format!("{split}.data"))
}

pub fn ce_model_path(out: &FsPath) -> PathBuf {
    out.join("models").join("ce.model")
}

pub fn lattice_path(out: &FsPath, utt: &str, kind: &str) -> PathBuf {
    out.join("lattices").join(format!("{utt}.{kind}"))
}

pub fn run_name(mode: DenominatorMode, numerator: NumeratorMode) -> String {
    format!("{mode}-{numerator}")
}

#[derive(Debug, Clone, Serialize)]
pub struct GenDataReport {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub hypotheses: usize,
    pub graph_paths: u128,
}

/// Generates the dataset splits of the configured task.
pub fn gen_data(cfg: &ExperimentConfig, out: &FsPath) -> Result<GenDataReport, CommandError> {
    let task = ToyTask::new(&cfg.synth)?;
    let data = synth_dataset(&task)?;
    for (split, utts) in SPLITS.iter().zip([&data.train, &data.dev, &data.test]) {
        write_atomic(&data_path(out, split), &write_dataset_split(utts))?;
    }
    Ok(GenDataReport {
        train: data.train.len(),
        dev: data.dev.len(),
        test: data.test.len(),
        hypotheses: task.lm.len(),
        graph_paths: task.full_graph.count_paths(),
    })
}

pub fn load_dataset(out: &FsPath) -> Result<Dataset, CommandError> {
    let read = |split| -> Result<Vec<Utterance>, CommandError> {
        Ok(read_dataset_split(&read_file(&data_path(out, split))?)?)
    };
    Ok(Dataset {
        train: read("train")?,
        dev: read("dev")?,
        test: read("test")?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub iterations: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub train_frame_accuracy: f64,
    pub model: PathBuf,
}

/// Cross-entropy pretraining on the training split.
pub fn pretrain(cfg: &ExperimentConfig, out: &FsPath) -> Result<PretrainReport, CommandError> {
    let task = ToyTask::new(&cfg.synth)?;
    let data = load_dataset(out)?;
    let init = ScorerParams::zeros(task.num_pdfs(), cfg.synth.feature_dim);
    let (params, losses) = ce_pretrain(&init, &data.train, &cfg.ce)?;
    let model = ce_model_path(out);
    write_atomic(&model, &write_model(&params))?;
    Ok(PretrainReport {
        iterations: losses.len(),
        initial_loss: losses.first().copied(),
        final_loss: losses.last().copied(),
        train_frame_accuracy: frame_accuracy(&params, &data.train)?,
        model,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeSizes {
    pub utterance: String,
    pub raw_paths: u128,
    pub det_paths: u128,
    pub raw_arcs: usize,
    pub det_arcs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MakeLatticesReport {
    pub utterances: Vec<LatticeSizes>,
    /// Mean over utterances of raw/det path counts.
    pub mean_path_ratio: f64,
    /// Mean over utterances of raw/det arc counts.
    pub mean_arc_ratio: f64,
    pub min_path_ratio: f64,
}

/// Recognition pass and numerator construction for every training
/// utterance under the CE model at `ce_model`.
pub fn make_lattices(
    cfg: &ExperimentConfig,
    out: &FsPath,
    ce_model: &FsPath,
) -> Result<MakeLatticesReport, CommandError> {
    let task = ToyTask::new(&cfg.synth)?;
    let data = load_dataset(out)?;
    let ce = read_model(&read_file(ce_model)?)?;
    let lattices = build_lattices(&task, &ce, &data.train, cfg.train.k_hypotheses)?;
    let mut sizes = Vec::with_capacity(lattices.len());
    for (u, l) in data.train.iter().zip(&lattices) {
        write_atomic(&lattice_path(out, &u.id, "raw.lat"), &print_lattice(&l.raw))?;
        write_atomic(&lattice_path(out, &u.id, "det.lat"), &print_lattice(&l.det))?;
        write_atomic(
            &lattice_path(out, &u.id, "num.lat"),
            &print_lattice(&l.numerator),
        )?;
        write_atomic(
            &lattice_path(out, &u.id, "fixed.path"),
            &print_path(&l.fixed_path),
        )?;
        sizes.push(LatticeSizes {
            utterance: u.id.clone(),
            raw_paths: l.raw.count_paths(),
            det_paths: l.det.count_paths(),
            raw_arcs: l.raw.num_arcs(),
            det_arcs: l.det.num_arcs(),
        });
    }
    let n = sizes.len().max(1) as f64;
    let path_ratios: Vec<f64> = sizes
        .iter()
        .map(|s| s.raw_paths as f64 / s.det_paths as f64)
        .collect();
    Ok(MakeLatticesReport {
        mean_path_ratio: path_ratios.iter().sum::<f64>() / n,
        mean_arc_ratio: sizes
            .iter()
            .map(|s| s.raw_arcs as f64 / s.det_arcs as f64)
            .sum::<f64>()
            / n,
        min_path_ratio: path_ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        utterances: sizes,
    })
}

/// Reads back the lattices written by [`make_lattices`].
pub fn load_lattices(
    out: &FsPath,
    utterances: &[Utterance],
) -> Result<Vec<UtteranceLattices>, CommandError> {
    utterances
        .iter()
        .map(|u| {
            let lat = |kind| -> Result<Lattice, CommandError> {
                Ok(parse_lattice(&read_file(&lattice_path(out, &u.id, kind))?)?)
            };
            let raw = lat("raw.lat")?;
            let numerator = lat("num.lat")?;
            let fixed_path = parse_path(
                &read_file(&lattice_path(out, &u.id, "fixed.path"))?,
                &numerator,
            )?;
            Ok(UtteranceLattices {
                kept: raw.word_sequences(),
                det: lat("det.lat")?,
                raw,
                numerator,
                fixed_path,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub summary: RunSummary,
    pub iterations: usize,
    pub model: PathBuf,
    pub metrics: PathBuf,
}

/// Sequence training from the CE model. Metrics rows are written as they
/// are produced, so a failed run keeps its completed iterations.
pub fn train(cfg: &ExperimentConfig, out: &FsPath) -> Result<TrainReport, CommandError> {
    let task = ToyTask::new(&cfg.synth)?;
    let data = load_dataset(out)?;
    let ce_params = read_model(&read_file(&ce_model_path(out))?)?;
    let lattices = load_lattices(out, &data.train)?;
    let prepared = Prepared {
        task,
        data,
        ce_params,
        ce_losses: Vec::new(),
        lattices,
    };
    let name = run_name(cfg.train.mode, cfg.train.numerator);
    let metrics = out.join("metrics").join(format!("{name}.jsonl"));
    let mut writer = MetricsWriter::create(&metrics)?;
    let mut write_err = None;
    let result = run(&prepared, &cfg.train, &mut |r| {
        if let Err(e) = writer.write(r) {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let (outcome, summary) = result?;
    let model = out.join("models").join(format!("{name}.model"));
    write_atomic(&model, &write_model(&outcome.selected_params))?;
    Ok(TrainReport {
        summary,
        iterations: outcome.records.len(),
        model,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeOp {
    Forward,
    Viterbi,
    Determinize,
    Sample,
    Enumerate,
    Validate,
}

/// Output of a `lattice` subcommand; `ok` is false only for a lattice that
/// fails validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeOutput {
    pub text: String,
    pub ok: bool,
}

/// Runs one lattice algorithm on file contents. Without a score table all
/// acoustic scores are zero, so only graph weights count.
pub fn lattice_op(
    op: LatticeOp,
    lattice_text: &str,
    scores_text: Option<&str>,
    seed: u64,
    max_paths: usize,
) -> Result<LatticeOutput, CommandError> {
    if op == LatticeOp::Validate {
        let lat = parse_lattice_unchecked(lattice_text)?;
        let violations = validate(&lat);
        let mut text = String::new();
        if violations.is_empty() {
            writeln!(text, "valid").unwrap();
        }
        for v in &violations {
            writeln!(text, "{v}").unwrap();
        }
        return Ok(LatticeOutput {
            text,
            ok: violations.is_empty(),
        });
    }
    let lat = parse_lattice(lattice_text)?;
    let scores = match scores_text {
        Some(t) => parse_scores(t)?,
        None => ScoreTable::zeros(lat.num_frames(), lat.max_pdf().map_or(1, |p| p + 1)),
    };
    let mut text = String::new();
    match op {
        LatticeOp::Forward => {
            writeln!(text, "{}", fmt_score(forward_logsum(&lat, &scores)?)).unwrap()
        }
        LatticeOp::Viterbi => {
            let (p, s) = viterbi_best_path(&lat, &scores)?;
            writeln!(text, "{}", p.debug_line(s)).unwrap();
        }
        LatticeOp::Determinize => text = print_lattice(&determinize_best_alignment(&lat, &scores)?),
        LatticeOp::Sample => {
            let beta = backward_fill(&lat, &scores)?;
            let p = crate::algorithms::ancestral_sample(&lat, &scores, &beta, seed)?;
            let s = crate::lattice::path_score(&p, &scores)?;
            writeln!(text, "{}", p.debug_line(s)).unwrap();
        }
        LatticeOp::Enumerate => {
            for (p, s) in enumerate_paths(&lat, &scores, max_paths)? {
                writeln!(text, "{}", p.debug_line(s)).unwrap();
            }
        }
        LatticeOp::Validate => unreachable!("handled above"),
    }
    Ok(LatticeOutput { text, ok: true })
}

pub fn verify(suite: Suite, seed: u64, corrupt: bool) -> Result<VerifyReport, CommandError> {
    Ok(run_suite(suite, seed, corrupt)?)
}
