//! Sequence training loop and sentence-error evaluation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ScorerParams, ToyError, ToyTask, Utterance};
use crate::algorithms::word_sequence_totals;
use crate::lattice::{Lattice, Path, ScoreTable, WordSeq};
use crate::objectives::{
    baseline_lattice_mmi, otf_mmi, resolve_numerator, true_mmi, NumeratorMode, NumeratorSpec,
};
use crate::theorem::measure_report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenominatorMode {
    /// Denominator lattice determinized once under the CE model.
    Baseline,
    /// Raw lattice determinized under the current model at every step.
    Otf,
}

impl DenominatorMode {
    pub const ALL: [DenominatorMode; 2] = [DenominatorMode::Baseline, DenominatorMode::Otf];

    pub fn as_str(self) -> &'static str {
        match self {
            DenominatorMode::Baseline => "baseline",
            DenominatorMode::Otf => "otf",
        }
    }
}

impl fmt::Display for DenominatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DenominatorMode {
    type Err = ToyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(DenominatorMode::Baseline),
            "otf" => Ok(DenominatorMode::Otf),
            other => Err(ToyError::Config(format!(
                "unknown mode '{other}' (expected baseline or otf)"
            ))),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: DenominatorMode,
    pub numerator: NumeratorMode,
    /// Hypotheses kept by the recognition pass.
    pub k_hypotheses: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Utterances per minibatch.
    pub batch_size: usize,
    /// Seeds the ancestral numerator draws.
    pub seed: u64,
    /// Run the measure checks on every utterance of every minibatch.
    #[serde(default = "default_true")]
    pub check_theorem: bool,
    /// Evaluate on the development set every this many iterations.
    #[serde(default = "default_one")]
    pub eval_every: usize,
}

/// Lattices generated once per training utterance.
#[derive(Debug, Clone)]
pub struct UtteranceLattices {
    pub raw: Lattice,
    pub det: Lattice,
    pub numerator: Lattice,
    pub fixed_path: Path,
    pub kept: BTreeSet<WordSeq>,
}

impl UtteranceLattices {
    pub fn numerator_spec(&self, mode: NumeratorMode) -> NumeratorSpec {
        match mode {
            NumeratorMode::Fixed => NumeratorSpec::Fixed(self.fixed_path.clone()),
            NumeratorMode::Viterbi => NumeratorSpec::Viterbi(self.numerator.clone()),
            NumeratorMode::Ancestral => NumeratorSpec::Ancestral(self.numerator.clone()),
        }
    }
}

/// One row of the training metrics stream. Losses are minibatch means taken
/// before the update; residuals are worst cases over the minibatch and are
/// absent when the checks are switched off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mode: DenominatorMode,
    pub numerator_mode: NumeratorMode,
    pub loss_true: f64,
    pub loss_baseline: f64,
    pub loss_otf: f64,
    pub ineq13_min_residual: Option<f64>,
    pub ineq14_residual: Option<f64>,
    pub normalization_residual: Option<f64>,
    pub muhat_loss_gap: Option<f64>,
    /// Development-set sentence error after this iteration's update.
    pub heldout_sentence_error: f64,
    pub harness_ok: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ScorerParams,
    /// Parameters with the lowest development error (earliest on ties).
    pub selected_params: ScorerParams,
    pub selected_iteration: usize,
    pub records: Vec<MetricsRecord>,
    /// Whether every measure check passed at every iteration.
    pub harness_ok: bool,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the numerator draw for one utterance at one iteration.
pub(crate) fn draw_seed(base: u64, iteration: usize, utterance: usize) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(iteration as u64)) ^ utterance as u64)
}

/// Index of the hypothesis with the largest forward score; the smaller word
/// sequence wins ties.
pub fn map_decode(full_graph: &Lattice, scores: &ScoreTable) -> Result<WordSeq, ToyError> {
    let totals = word_sequence_totals(full_graph, scores)?;
    let mut best: Option<&(WordSeq, f64)> = None;
    for entry in &totals {
        if best.is_none_or(|b| entry.1 > b.1) {
            best = Some(entry);
        }
    }
    best.map(|b| b.0.clone())
        .ok_or_else(|| ToyError::Config("decode graph has no hypotheses".into()))
}

/// Fraction of utterances whose MAP hypothesis differs from the reference.
pub fn evaluate(
    params: &ScorerParams,
    utterances: &[Utterance],
    full_graph: &Lattice,
) -> Result<f64, ToyError> {
    if utterances.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for u in utterances {
        let scores = params.score_frames(&u.features)?.scores;
        if map_decode(full_graph, &scores)? != u.words {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / utterances.len() as f64)
}

struct BatchStats {
    loss_true: f64,
    loss_baseline: f64,
    loss_otf: f64,
    ineq13: f64,
    ineq14: f64,
    normalization: f64,
    gap: f64,
    harness_ok: bool,
}

/// Plain minibatch gradient descent on the chosen lattice objective.
///
/// Minibatch `i` holds utterances `i*B .. i*B + B` modulo the training set
/// size. Each record is passed to `on_record` as soon as it is complete, so
/// a caller can persist the stream even if a later iteration fails.
pub fn train(
    task: &ToyTask,
    train_set: &[Utterance],
    dev_set: &[Utterance],
    lattices: &[UtteranceLattices],
    init: &ScorerParams,
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome, ToyError> {
    if train_set.len() != lattices.len() {
        return Err(ToyError::Config(format!(
            "{} training utterances but {} lattice sets",
            train_set.len(),
            lattices.len()
        )));
    }
    if train_set.is_empty() || cfg.batch_size == 0 {
        return Err(ToyError::Config(
            "training needs utterances and a positive batch size".into(),
        ));
    }
    let max_paths = task.config.max_paths as usize;
    let eval_every = cfg.eval_every.max(1);
    let n = train_set.len();
    let specs: Vec<NumeratorSpec> = lattices
        .iter()
        .map(|l| l.numerator_spec(cfg.numerator))
        .collect();

    let mut params = init.clone();
    let mut selected = init.clone();
    let mut selected_iteration = 0;
    let mut best_dev = f64::INFINITY;
    let mut dev_error = evaluate(&params, dev_set, &task.full_graph)?;
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut all_ok = true;

    for it in 0..cfg.iterations {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|j| (it * cfg.batch_size + j) % n)
            .collect();
        let mut grad = vec![0.0; params.weights().len()];
        let mut stats = BatchStats {
            loss_true: 0.0,
            loss_baseline: 0.0,
            loss_otf: 0.0,
            ineq13: f64::INFINITY,
            ineq14: f64::INFINITY,
            normalization: 0.0,
            gap: 0.0,
            harness_ok: true,
        };
        for &u in &batch {
            let utt = &train_set[u];
            let lat = &lattices[u];
            let scored = params.score_frames(&utt.features)?;
            let scores = &scored.scores;
            let seed = draw_seed(cfg.seed, it, u);
            let truth = true_mmi(&lat.numerator, &task.full_graph, scores)?;
            let base = baseline_lattice_mmi(&specs[u], &lat.det, scores, seed)?;
            let otf = otf_mmi(&specs[u], &lat.raw, scores, seed)?;
            for (name, v) in [
                ("true", truth.loss),
                ("baseline", base.loss),
                ("otf", otf.loss),
            ] {
                if !v.is_finite() {
                    return Err(ToyError::Diverged {
                        iteration: it,
                        detail: format!("{name} loss {v} on {}", utt.id),
                    });
                }
            }
            stats.loss_true += truth.loss;
            stats.loss_baseline += base.loss;
            stats.loss_otf += otf.loss;
            if cfg.check_theorem {
                let numerator = resolve_numerator(&specs[u], scores, seed)?;
                let report = measure_report(
                    &task.full_graph,
                    scores,
                    &utt.words,
                    &numerator,
                    Some(&lat.kept),
                    Some(otf.loss),
                    max_paths,
                )?;
                stats.ineq13 = stats.ineq13.min(report.inequality13_min);
                stats.ineq14 = stats.ineq14.min(report.inequality14_residual);
                stats.normalization = stats.normalization.max(report.normalization_residual);
                stats.gap = stats.gap.max(report.muhat_loss_gap.unwrap_or(0.0));
                if !report.all_ok() {
                    stats.harness_ok = false;
                    log::error!("measure check failed on {} at iteration {it}", utt.id);
                }
            }
            let objective = match cfg.mode {
                DenominatorMode::Baseline => &base,
                DenominatorMode::Otf => &otf,
            };
            for (acc, d) in grad
                .iter_mut()
                .zip(scored.backward(&utt.features, &objective.grad)?)
            {
                *acc += d;
            }
        }
        let b = batch.len() as f64;
        for g in &mut grad {
            *g /= b;
        }
        params.step(&grad, cfg.learning_rate);
        if params.weights().iter().any(|w| !w.is_finite()) {
            return Err(ToyError::Diverged {
                iteration: it,
                detail: "non-finite parameters after update".into(),
            });
        }
        if (it + 1) % eval_every == 0 || it + 1 == cfg.iterations {
            dev_error = evaluate(&params, dev_set, &task.full_graph)?;
            if dev_error < best_dev {
                best_dev = dev_error;
                selected = params.clone();
                selected_iteration = it + 1;
            }
        }
        all_ok &= stats.harness_ok;
        let record = MetricsRecord {
            iteration: it,
            mode: cfg.mode,
            numerator_mode: cfg.numerator,
            loss_true: stats.loss_true / b,
            loss_baseline: stats.loss_baseline / b,
            loss_otf: stats.loss_otf / b,
            ineq13_min_residual: cfg.check_theorem.then_some(stats.ineq13),
            ineq14_residual: cfg.check_theorem.then_some(stats.ineq14),
            normalization_residual: cfg.check_theorem.then_some(stats.normalization),
            muhat_loss_gap: cfg.check_theorem.then_some(stats.gap),
            heldout_sentence_error: dev_error,
            harness_ok: stats.harness_ok,
        };
        on_record(&record);
        records.push(record);
    }
    Ok(TrainOutcome {
        final_params: params,
        selected_params: selected,
        selected_iteration,
        records,
        harness_ok: all_ok,
    })
}

/// Mean true MMI loss over a set of utterances.
pub fn mean_true_loss(
    task: &ToyTask,
    params: &ScorerParams,
    utterances: &[Utterance],
    numerators: &[Lattice],
) -> Result<f64, ToyError> {
    let mut total = 0.0;
    for (u, num) in utterances.iter().zip(numerators) {
        let scores = params.score_frames(&u.features)?.scores;
        total += true_mmi(num, &task.full_graph, &scores)?.loss;
    }
    Ok(total / utterances.len().max(1) as f64)
}
