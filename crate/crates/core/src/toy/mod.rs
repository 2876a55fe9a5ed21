//! Desk-scale synthetic ASR task: lexicon and phone HMMs compiled to
//! frame-synchronous graphs, an affine log-softmax scorer, synthetic
//! utterances, lattice generation and the sequence training loop.

mod data;
mod pipeline;
mod recognition;
mod scorer;
mod task;
mod train;

pub use data::{synth_dataset, Dataset, SynthConfig, ToyTask, Utterance};
pub use pipeline::{build_lattices, prepare, run, Prepared, RunSummary};
pub use recognition::{
    make_numerator, recognition_pass, top_hypotheses, NumeratorGraphs, RecognitionOutput,
};
pub use scorer::{ce_pretrain, frame_accuracy, CeConfig, Features, ScoredFrames, ScorerParams};
pub use task::{
    alignment_count, build_full_hypothesis_graph, build_sentence_graph, pdf_of, HmmTopology,
    Lexicon, SentenceLm, STATES_PER_PHONE,
};
pub use train::{
    evaluate, map_decode, mean_true_loss, train, DenominatorMode, MetricsRecord, TrainConfig,
    TrainOutcome, UtteranceLattices,
};

use crate::lattice::LatticeError;
use crate::objectives::ObjectiveError;
use crate::theorem::HarnessError;

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sentence needs {states} frames but only {frames} are available")]
    SentenceTooLong { states: usize, frames: usize },
    #[error("hypothesis graph would have {count} paths, above the cap of {max}")]
    TooManyPaths { count: u128, max: u128 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
