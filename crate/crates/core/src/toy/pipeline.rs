//! End-to-end experiment: task, data, CE model, lattices, training.

use serde::{Deserialize, Serialize};

use super::{
    ce_pretrain, evaluate, make_numerator, mean_true_loss, recognition_pass, synth_dataset, train,
    CeConfig, Dataset, DenominatorMode, MetricsRecord, ScorerParams, SynthConfig, ToyError,
    ToyTask, TrainConfig, TrainOutcome, Utterance, UtteranceLattices,
};
use crate::lattice::Lattice;
use crate::objectives::NumeratorMode;

/// Generates the per-utterance training lattices under the CE model.
pub fn build_lattices(
    task: &ToyTask,
    ce: &ScorerParams,
    utterances: &[Utterance],
    k: usize,
) -> Result<Vec<UtteranceLattices>, ToyError> {
    utterances
        .iter()
        .map(|u| {
            let scores = ce.score_frames(&u.features)?.scores;
            let rec = recognition_pass(&task.full_graph, &scores, k, Some(&u.words))?;
            let num = make_numerator(&task.full_graph, &u.words, &scores)?;
            Ok(UtteranceLattices {
                kept: rec.kept_set(),
                raw: rec.raw,
                det: rec.det,
                numerator: num.lattice,
                fixed_path: num.fixed_path,
            })
        })
        .collect()
}

/// Everything training needs, built once and shared by all mode runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub task: ToyTask,
    pub data: Dataset,
    pub ce_params: ScorerParams,
    pub ce_losses: Vec<f64>,
    pub lattices: Vec<UtteranceLattices>,
}

pub fn prepare(synth: &SynthConfig, ce: &CeConfig, k: usize) -> Result<Prepared, ToyError> {
    let task = ToyTask::new(synth)?;
    let data = synth_dataset(&task)?;
    let init = ScorerParams::zeros(task.num_pdfs(), synth.feature_dim);
    let (ce_params, ce_losses) = ce_pretrain(&init, &data.train, ce)?;
    let lattices = build_lattices(&task, &ce_params, &data.train, k)?;
    Ok(Prepared {
        task,
        data,
        ce_params,
        ce_losses,
        lattices,
    })
}

/// Outcome of one training run, as compared across modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: DenominatorMode,
    pub numerator_mode: NumeratorMode,
    pub selected_iteration: usize,
    /// Development error of the selected model.
    pub dev_error: f64,
    /// Test error of the selected model.
    pub test_error: f64,
    /// Mean true MMI loss over the training set at the final parameters.
    pub final_true_loss: f64,
    pub harness_ok: bool,
}

pub fn run(
    prepared: &Prepared,
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<(TrainOutcome, RunSummary), ToyError> {
    let Prepared {
        task,
        data,
        ce_params,
        lattices,
        ..
    } = prepared;
    let outcome = train(
        task,
        &data.train,
        &data.dev,
        lattices,
        ce_params,
        cfg,
        on_record,
    )?;
    let numerators: Vec<Lattice> = lattices.iter().map(|l| l.numerator.clone()).collect();
    let summary = RunSummary {
        mode: cfg.mode,
        numerator_mode: cfg.numerator,
        selected_iteration: outcome.selected_iteration,
        dev_error: evaluate(&outcome.selected_params, &data.dev, &task.full_graph)?,
        test_error: evaluate(&outcome.selected_params, &data.test, &task.full_graph)?,
        final_true_loss: mean_true_loss(task, &outcome.final_params, &data.train, &numerators)?,
        harness_ok: outcome.harness_ok,
    };
    Ok((outcome, summary))
}
