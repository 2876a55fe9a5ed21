//! Numerical checks of the alignment-measure construction.
//!
//! Over a complete hypothesis graph `X` (every alignment of every word
//! sequence for one utterance), the mass of an alignment is its posterior
//! `m(y) = exp(score(y) - log Z)` with `log Z` the forward total of `X`. The
//! alignments are partitioned by word sequence into the reference set `A` and
//! competitor sets `B_j`; `B^_j` is the best alignment of `B_j` and `A^` is a
//! single fixed reference alignment. This module checks, for a given score
//! table, that
//!
//! - masses sum to one;
//! - `mu(B_j) <= |B_j| m(B^_j)` for every competitor;
//! - `m(A^) <= mu(A)`;
//! - `-log mu^(A^)`, with `mu^(A^) = m(A^) / sum_j m(B^_j)`, equals the
//!   on-the-fly lattice MMI loss over the same hypotheses.
//!
//! All arithmetic stays in the log domain until the comparisons.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::algorithms::{enumerate_paths, forward_logsum};
use crate::lattice::{path_score, Lattice, LatticeError, LogWeight, Path, ScoreTable, WordSeq};
use crate::logmath::log_sum_exp;

/// Slack for the normalization residual.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Residuals of the two inequalities must be at least `-INEQUALITY_SLACK`.
pub const INEQUALITY_SLACK: f64 = 1e-9;
/// Allowed gap between `-log mu^(A^)` and the on-the-fly loss.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("path is not an alignment of the complete graph")]
    PathNotInGraph,
    #[error("reference word sequence {0:?} has no alignment in the graph")]
    ReferenceMissing(WordSeq),
    #[error("fixed reference path realizes {got:?}, expected {expected:?}")]
    WordMismatch { expected: WordSeq, got: WordSeq },
    #[error("mu-hat denominator is empty or underflows (no selected hypotheses)")]
    EmptyDenominator,
}

/// A path with its score under the grouping's score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPath {
    pub path: Path,
    pub score: LogWeight,
}

/// Partition of the complete path set by word sequence, with selections.
#[derive(Debug, Clone)]
pub struct HypothesisGrouping {
    pub reference_words: WordSeq,
    /// `A`: every alignment of the reference.
    pub reference_set: Vec<ScoredPath>,
    /// `B_j`: every alignment of each competing word sequence.
    pub competitor_sets: BTreeMap<WordSeq, Vec<ScoredPath>>,
    /// `A^`: the fixed reference alignment.
    pub selected_reference: ScoredPath,
    /// `B^_j`: argmax of `m` within each `B_j`.
    pub selected_competitors: BTreeMap<WordSeq, ScoredPath>,
    /// Argmax of `m` within `A`; the reference's own `B^` term.
    pub reference_best: ScoredPath,
    /// `log Z`, the forward total of the complete graph.
    pub log_partition: LogWeight,
}

impl HypothesisGrouping {
    pub fn log_m(&self, p: &ScoredPath) -> f64 {
        p.score - self.log_partition
    }

    pub fn m(&self, p: &ScoredPath) -> f64 {
        self.log_m(p).exp()
    }

    /// `mu(S)` for a set of paths.
    pub fn mu(&self, set: &[ScoredPath]) -> f64 {
        set.iter().map(|p| self.m(p)).sum()
    }
}

/// `m(path)`: posterior of `path` within the complete graph.
pub fn measure_m(
    path: &Path,
    full_graph: &Lattice,
    scores: &ScoreTable,
) -> Result<f64, HarnessError> {
    let own = full_graph
        .find_alignment(path)
        .ok_or(HarnessError::PathNotInGraph)?;
    let z = forward_logsum(full_graph, scores)?;
    Ok((path_score(&own, scores)? - z).exp())
}

/// `|sum over paths of m - 1|`.
pub fn check_normalization(
    full_graph: &Lattice,
    scores: &ScoreTable,
    max_paths: usize,
) -> Result<f64, HarnessError> {
    let z = forward_logsum(full_graph, scores)?;
    let paths = enumerate_paths(full_graph, scores, max_paths)?;
    let total: f64 = paths.iter().map(|(_, s)| (s - z).exp()).sum();
    Ok((total - 1.0).abs())
}

/// Argmax preference used for `B^_j`: higher score, then smaller final state,
/// then the smaller `(source state, arc index)` sequence compared from the
/// last arc backwards. This is the order the Viterbi backpointer rule
/// induces, so selections agree with [`crate::algorithms::best_alignments`].
pub fn prefer(a: &ScoredPath, b: &ScoredPath) -> Ordering {
    match a.score.partial_cmp(&b.score) {
        Some(Ordering::Greater) => return Ordering::Less,
        Some(Ordering::Less) => return Ordering::Greater,
        _ => {}
    }
    let key = |p: &Path| -> Vec<(usize, usize)> {
        p.arcs()
            .iter()
            .zip(p.arc_ids())
            .rev()
            .map(|(arc, &id)| (arc.src, id))
            .collect()
    };
    a.path
        .final_state()
        .cmp(&b.path.final_state())
        .then_with(|| key(&a.path).cmp(&key(&b.path)))
}

fn select_best(set: &[ScoredPath]) -> ScoredPath {
    set.iter()
        .min_by(|a, b| prefer(a, b))
        .cloned()
        .expect("non-empty group")
}

/// Enumerates the complete graph and partitions it around `ref_words`.
pub fn build_grouping(
    full_graph: &Lattice,
    scores: &ScoreTable,
    ref_words: &[u32],
    fixed_ref_path: &Path,
    max_paths: usize,
) -> Result<HypothesisGrouping, HarnessError> {
    if fixed_ref_path.word_sequence() != ref_words {
        return Err(HarnessError::WordMismatch {
            expected: ref_words.to_vec(),
            got: fixed_ref_path.word_sequence().to_vec(),
        });
    }
    let log_partition = forward_logsum(full_graph, scores)?;
    let mut groups: BTreeMap<WordSeq, Vec<ScoredPath>> = BTreeMap::new();
    for (path, score) in enumerate_paths(full_graph, scores, max_paths)? {
        groups
            .entry(path.word_sequence().to_vec())
            .or_default()
            .push(ScoredPath { path, score });
    }
    let reference_set = groups
        .remove(ref_words)
        .ok_or_else(|| HarnessError::ReferenceMissing(ref_words.to_vec()))?;
    let selected_reference = reference_set
        .iter()
        .find(|p| p.path.same_alignment(fixed_ref_path))
        .cloned()
        .ok_or(HarnessError::PathNotInGraph)?;
    let reference_best = select_best(&reference_set);
    let selected_competitors = groups
        .iter()
        .map(|(w, set)| (w.clone(), select_best(set)))
        .collect();
    Ok(HypothesisGrouping {
        reference_words: ref_words.to_vec(),
        reference_set,
        competitor_sets: groups,
        selected_reference,
        selected_competitors,
        reference_best,
        log_partition,
    })
}

/// Per competitor: `|B_j| m(B^_j) - mu(B_j)`.
pub fn check_inequality_13(grouping: &HypothesisGrouping) -> Vec<(WordSeq, f64)> {
    grouping
        .competitor_sets
        .iter()
        .map(|(w, set)| {
            let best = &grouping.selected_competitors[w];
            (
                w.clone(),
                set.len() as f64 * grouping.m(best) - grouping.mu(set),
            )
        })
        .collect()
}

/// `mu(A) - m(A^)`.
pub fn check_inequality_14(grouping: &HypothesisGrouping) -> f64 {
    grouping.mu(&grouping.reference_set) - grouping.m(&grouping.selected_reference)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuHat {
    pub value: f64,
    /// `-log mu^(A^)`, computed without exponentiating.
    pub neg_log: f64,
}

/// `mu^(A^) = m(A^) / sum_j m(B^_j)`.
///
/// The sum runs over the competitors in `captured` (all competitors when
/// `None`); the reference's own best alignment contributes a term when
/// `include_reference` is set.
pub fn muhat_of_a(
    grouping: &HypothesisGrouping,
    captured: Option<&BTreeSet<WordSeq>>,
    include_reference: bool,
) -> Result<MuHat, HarnessError> {
    let mut terms: Vec<f64> = grouping
        .selected_competitors
        .iter()
        .filter(|(w, _)| captured.is_none_or(|c| c.contains(*w)))
        .map(|(_, p)| grouping.log_m(p))
        .collect();
    if include_reference {
        terms.push(grouping.log_m(&grouping.reference_best));
    }
    let log_den = log_sum_exp(&terms);
    if !log_den.is_finite() {
        return Err(HarnessError::EmptyDenominator);
    }
    let neg_log = log_den - grouping.log_m(&grouping.selected_reference);
    Ok(MuHat {
        value: (-neg_log).exp(),
        neg_log,
    })
}

/// Everything the harness checks for one (graph, scores, reference) triple.
#[derive(Debug, Clone)]
pub struct MeasureReport {
    /// `(path, m)` for every alignment of the graph, in enumeration order.
    pub m_values: Vec<(Path, f64)>,
    /// Named set masses: `A`, `A_hat`, `X`, `B[..]` and `B_hat[..]`.
    pub mu: BTreeMap<String, f64>,
    /// `mu^(A^)` with the reference's best alignment in the denominator.
    pub muhat_a: f64,
    /// `mu^(A^)` without it.
    pub muhat_a_excluding_reference: Option<f64>,
    pub normalization_residual: f64,
    pub normalization_ok: bool,
    pub inequality13_residuals: Vec<(WordSeq, f64)>,
    pub inequality13_min: f64,
    pub inequality13_ok: bool,
    pub inequality14_residual: f64,
    pub inequality14_ok: bool,
    /// `|-log mu^(A^) - otf loss|`, when an on-the-fly loss was supplied.
    pub muhat_loss_gap: Option<f64>,
    pub identity_ok: bool,
}

impl MeasureReport {
    pub fn all_ok(&self) -> bool {
        self.normalization_ok && self.inequality13_ok && self.inequality14_ok && self.identity_ok
    }
}

fn words_label(w: &[u32]) -> String {
    w.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs every check for one utterance.
///
/// `captured` restricts the mu-hat denominator to the hypotheses held in the
/// training lattice; `otf_loss` is compared against `-log mu^(A^)` using the
/// include-reference reading.
pub fn measure_report(
    full_graph: &Lattice,
    scores: &ScoreTable,
    ref_words: &[u32],
    fixed_ref_path: &Path,
    captured: Option<&BTreeSet<WordSeq>>,
    otf_loss: Option<f64>,
    max_paths: usize,
) -> Result<MeasureReport, HarnessError> {
    let g = build_grouping(full_graph, scores, ref_words, fixed_ref_path, max_paths)?;

    let mut m_values = Vec::new();
    let mut total = 0.0;
    for p in &g.reference_set {
        m_values.push((p.path.clone(), g.m(p)));
    }
    for set in g.competitor_sets.values() {
        for p in set {
            m_values.push((p.path.clone(), g.m(p)));
        }
    }
    for (_, m) in &m_values {
        total += m;
    }
    let normalization_residual = (total - 1.0).abs();

    let mut mu = BTreeMap::new();
    mu.insert("X".to_string(), total);
    mu.insert("A".to_string(), g.mu(&g.reference_set));
    mu.insert("A_hat".to_string(), g.m(&g.selected_reference));
    for (w, set) in &g.competitor_sets {
        mu.insert(format!("B[{}]", words_label(w)), g.mu(set));
        mu.insert(
            format!("B_hat[{}]", words_label(w)),
            g.m(&g.selected_competitors[w]),
        );
    }

    let inequality13_residuals = check_inequality_13(&g);
    let inequality13_min = inequality13_residuals
        .iter()
        .map(|(_, r)| *r)
        .fold(f64::INFINITY, f64::min);
    let inequality14_residual = check_inequality_14(&g);

    let with_ref = muhat_of_a(&g, captured, true)?;
    let without_ref = muhat_of_a(&g, captured, false).ok();
    let muhat_loss_gap = otf_loss.map(|l| (with_ref.neg_log - l).abs());

    Ok(MeasureReport {
        m_values,
        mu,
        muhat_a: with_ref.value,
        muhat_a_excluding_reference: without_ref.map(|m| m.value),
        normalization_residual,
        normalization_ok: normalization_residual <= NORMALIZATION_TOL,
        inequality13_ok: inequality13_min >= -INEQUALITY_SLACK,
        inequality13_min,
        inequality13_residuals,
        inequality14_ok: inequality14_residual >= -INEQUALITY_SLACK,
        inequality14_residual,
        identity_ok: muhat_loss_gap.is_none_or(|g| g <= IDENTITY_TOL),
        muhat_loss_gap,
    })
}
