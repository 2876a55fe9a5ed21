//! Simulated recognition pass and numerator construction.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::ToyError;
use crate::algorithms::{
    best_alignments, determinize_best_alignment, restrict_to_word_sequences, viterbi_best_path,
};
use crate::lattice::{Lattice, LogWeight, Path, ScoreTable, WordId, WordSeq};

#[derive(Debug, Clone)]
pub struct RecognitionOutput {
    /// Every alignment of every kept hypothesis.
    pub raw: Lattice,
    /// Best alignment per kept hypothesis under the scores of the pass.
    pub det: Lattice,
    /// Kept hypotheses with their Viterbi scores, best first.
    pub kept: Vec<(WordSeq, LogWeight)>,
}

impl RecognitionOutput {
    pub fn kept_set(&self) -> BTreeSet<WordSeq> {
        self.kept.iter().map(|(w, _)| w.clone()).collect()
    }
}

/// The `k` hypotheses with the highest Viterbi score, best first, ties to
/// the smaller word sequence. A given reference replaces the last entry if
/// it did not make the cut.
pub fn top_hypotheses(
    full_graph: &Lattice,
    scores: &ScoreTable,
    k: usize,
    reference: Option<&[WordId]>,
) -> Result<Vec<(WordSeq, LogWeight)>, ToyError> {
    if k == 0 {
        return Err(ToyError::Config(
            "at least one hypothesis must be kept".into(),
        ));
    }
    let mut ranked: Vec<(WordSeq, LogWeight)> = best_alignments(full_graph, scores)?
        .into_iter()
        .map(|b| (b.words, b.score))
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    if k > ranked.len() {
        log::warn!(
            "{k} hypotheses requested but the graph only has {}; keeping all",
            ranked.len()
        );
    }
    let pos = match reference {
        Some(r) => Some(
            ranked
                .iter()
                .position(|(w, _)| w[..] == *r)
                .ok_or_else(|| {
                    ToyError::Config(format!("reference {r:?} is not a hypothesis of the graph"))
                })?,
        ),
        None => None,
    };
    let k = k.min(ranked.len());
    let mut kept: Vec<_> = ranked[..k].to_vec();
    if let Some(p) = pos {
        if p >= k {
            kept[k - 1] = ranked[p].clone();
        }
    }
    Ok(kept)
}

/// Keeps the top `k` hypotheses (reference force-included) and builds the
/// raw and determinized lattices over them.
pub fn recognition_pass(
    full_graph: &Lattice,
    ce_scores: &ScoreTable,
    k: usize,
    reference: Option<&[WordId]>,
) -> Result<RecognitionOutput, ToyError> {
    let kept = top_hypotheses(full_graph, ce_scores, k, reference)?;
    let keep: BTreeSet<WordSeq> = kept.iter().map(|(w, _)| w.clone()).collect();
    let raw = restrict_to_word_sequences(full_graph, &keep)?;
    let det = determinize_best_alignment(&raw, ce_scores)?;
    Ok(RecognitionOutput { raw, det, kept })
}

#[derive(Debug, Clone)]
pub struct NumeratorGraphs {
    /// All alignments of the reference, with its LM weight.
    pub lattice: Lattice,
    /// Viterbi alignment of `lattice` under the CE scores.
    pub fixed_path: Path,
}

pub fn make_numerator(
    full_graph: &Lattice,
    reference: &[WordId],
    ce_scores: &ScoreTable,
) -> Result<NumeratorGraphs, ToyError> {
    let keep = BTreeSet::from([reference.to_vec()]);
    let lattice = restrict_to_word_sequences(full_graph, &keep)?;
    let (fixed_path, _) = viterbi_best_path(&lattice, ce_scores)?;
    Ok(NumeratorGraphs {
        lattice,
        fixed_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{enumerate_paths, path_set_contains};
    use crate::lattice::path_score;
    use crate::toy::data::tiny_config;
    use crate::toy::ToyTask;

    fn setup() -> (ToyTask, ScoreTable) {
        let task = ToyTask::new(&tiny_config()).unwrap();
        let scores = ScoreTable::from_fn(8, task.num_pdfs(), |t, p| {
            -(((t * 7 + p * 5) % 11) as f64) * 0.3
        })
        .unwrap();
        (task, scores)
    }

    #[test]
    fn keeping_everything_reproduces_full_graph() {
        let (task, scores) = setup();
        let n = task.full_graph.word_sequences().len();
        let out = recognition_pass(&task.full_graph, &scores, n, None).unwrap();
        assert_eq!(out.raw.count_paths(), task.full_graph.count_paths());
        assert!(path_set_contains(&out.raw, &task.full_graph));
        assert!(path_set_contains(&task.full_graph, &out.raw));
    }

    #[test]
    fn k_one_keeps_single_best_alignment() {
        let (task, scores) = setup();
        let out = recognition_pass(&task.full_graph, &scores, 1, None).unwrap();
        assert_eq!(out.det.count_paths(), 1);
        let (best, best_score) = viterbi_best_path(&task.full_graph, &scores).unwrap();
        let det = enumerate_paths(&out.det, &scores, 10).unwrap();
        assert_eq!(det[0].1, best_score);
        assert!(det[0].0.same_alignment(&best));
    }

    #[test]
    fn reference_is_forced_in() {
        let (task, scores) = setup();
        let all = top_hypotheses(&task.full_graph, &scores, 100, None).unwrap();
        let worst = all.last().unwrap().0.clone();
        let kept = top_hypotheses(&task.full_graph, &scores, 2, Some(&worst)).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0], all[0]);
        assert_eq!(kept[1].0, worst);
    }

    #[test]
    fn fixed_path_is_numerator_maximum() {
        let (task, scores) = setup();
        let num = make_numerator(&task.full_graph, &[1, 2], &scores).unwrap();
        assert_eq!(num.lattice.word_sequences(), BTreeSet::from([vec![1, 2]]));
        let best = enumerate_paths(&num.lattice, &scores, 100_000)
            .unwrap()
            .into_iter()
            .map(|(_, s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(path_score(&num.fixed_path, &scores).unwrap(), best);
    }
}
