//! Lexicon, phone HMM topology, sentence LM and graph construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ToyError;
use crate::lattice::{Arc, Lattice, LogWeight, PdfId, StateId, WordId, WordSeq, EPSILON};
use crate::logmath::log_sum_exp;

pub const STATES_PER_PHONE: usize = 3;

/// Word pronunciations. Word ids are dense from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    prons: Vec<Vec<usize>>,
    num_phones: usize,
}

impl Lexicon {
    pub fn new(prons: Vec<Vec<usize>>, num_phones: usize) -> Result<Self, ToyError> {
        for (i, p) in prons.iter().enumerate() {
            if p.is_empty() {
                return Err(ToyError::Config(format!(
                    "word {} has an empty pronunciation",
                    i + 1
                )));
            }
            if let Some(&ph) = p.iter().find(|&&ph| ph >= num_phones) {
                return Err(ToyError::Config(format!(
                    "word {} uses phone {ph} of {num_phones}",
                    i + 1
                )));
            }
        }
        Ok(Lexicon { prons, num_phones })
    }

    /// Random lexicon with distinct pronunciations of 1..=max_phones phones.
    pub fn random<R: Rng + ?Sized>(
        vocab_size: usize,
        num_phones: usize,
        max_phones: usize,
        rng: &mut R,
    ) -> Result<Self, ToyError> {
        let mut prons: Vec<Vec<usize>> = Vec::with_capacity(vocab_size);
        let mut attempts = 0;
        while prons.len() < vocab_size {
            attempts += 1;
            if attempts > 10_000 {
                return Err(ToyError::Config(format!(
                    "cannot draw {vocab_size} distinct pronunciations from {num_phones} phones"
                )));
            }
            let len = rng.random_range(1..=max_phones.max(1));
            let mut phones: Vec<usize> = (0..num_phones).collect();
            phones.shuffle(rng);
            let pron: Vec<usize> = (0..len).map(|i| phones[i % num_phones]).collect();
            if !prons.contains(&pron) {
                prons.push(pron);
            }
        }
        Self::new(prons, num_phones)
    }

    pub fn vocab_size(&self) -> usize {
        self.prons.len()
    }

    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn num_pdfs(&self) -> usize {
        self.num_phones * STATES_PER_PHONE
    }

    pub fn pronunciation(&self, word: WordId) -> &[usize] {
        &self.prons[word as usize - 1]
    }

    pub fn pronunciations(&self) -> &[Vec<usize>] {
        &self.prons
    }

    /// HMM states of a sentence: one per (phone, state) of its words.
    pub fn sentence_states(&self, words: &[WordId]) -> usize {
        words
            .iter()
            .map(|&w| self.pronunciation(w).len() * STATES_PER_PHONE)
            .sum()
    }
}

pub fn pdf_of(phone: usize, state: usize) -> PdfId {
    phone * STATES_PER_PHONE + state
}

/// Left-to-right 3-state phone HMMs: each state has a self-loop and a
/// forward transition, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmTopology {
    self_loop: Vec<[f64; STATES_PER_PHONE]>,
    forward: Vec<[f64; STATES_PER_PHONE]>,
}

impl HmmTopology {
    /// Same self-loop probability for every state of every phone.
    pub fn uniform(num_phones: usize, self_loop_prob: f64) -> Result<Self, ToyError> {
        if !(self_loop_prob > 0.0 && self_loop_prob < 1.0) {
            return Err(ToyError::Config(format!(
                "self-loop probability {self_loop_prob} not in (0, 1)"
            )));
        }
        let l = self_loop_prob.ln();
        let f = (1.0 - self_loop_prob).ln();
        Ok(HmmTopology {
            self_loop: vec![[l; 3]; num_phones],
            forward: vec![[f; 3]; num_phones],
        })
    }

    pub fn self_loop(&self, phone: usize, state: usize) -> f64 {
        self.self_loop[phone][state]
    }

    pub fn forward(&self, phone: usize, state: usize) -> f64 {
        self.forward[phone][state]
    }
}

/// Normalized table of sentence log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceLm {
    logprobs: BTreeMap<WordSeq, LogWeight>,
}

impl SentenceLm {
    /// Normalizes arbitrary finite log-weights so they sum to one.
    pub fn from_log_weights(weights: BTreeMap<WordSeq, LogWeight>) -> Result<Self, ToyError> {
        if weights.is_empty() {
            return Err(ToyError::Config("empty sentence LM".into()));
        }
        if weights.values().any(|w| !w.is_finite()) {
            return Err(ToyError::Config(
                "sentence LM weights must be finite".into(),
            ));
        }
        let vals: Vec<f64> = weights.values().copied().collect();
        let norm = log_sum_exp(&vals);
        Ok(SentenceLm {
            logprobs: weights.into_iter().map(|(k, v)| (k, v - norm)).collect(),
        })
    }

    /// Every sentence of 1..=max_len words that fits in `frames`, weighted by
    /// the product of uniform word probabilities.
    pub fn uniform_unigram(
        lexicon: &Lexicon,
        max_len: usize,
        frames: usize,
    ) -> Result<Self, ToyError> {
        let v = lexicon.vocab_size();
        let word_lp = -(v as f64).ln();
        let mut weights = BTreeMap::new();
        let mut frontier: Vec<WordSeq> = vec![Vec::new()];
        for len in 1..=max_len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for w in 1..=v as WordId {
                    let mut s = prefix.clone();
                    s.push(w);
                    next.push(s);
                }
            }
            for s in &next {
                if lexicon.sentence_states(s) <= frames {
                    weights.insert(s.clone(), word_lp * len as f64);
                }
            }
            frontier = next;
        }
        if weights.is_empty() {
            return Err(ToyError::Config(format!(
                "no sentence of at most {max_len} words fits in {frames} frames"
            )));
        }
        Self::from_log_weights(weights)
    }

    pub fn logprob(&self, words: &[WordId]) -> Option<LogWeight> {
        self.logprobs.get(words).copied()
    }

    pub fn sentences(&self) -> impl Iterator<Item = (&WordSeq, LogWeight)> {
        self.logprobs.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// Incremental construction of unions of sentence graphs that share one
/// start state.
struct GraphBuilder {
    num_frames: usize,
    state_frames: Vec<usize>,
    finals: Vec<StateId>,
    arcs: Vec<Arc>,
}

struct HmmState {
    pdf: PdfId,
    self_loop: f64,
    forward: f64,
    // word whose first state this is
    entry_word: WordId,
}

impl GraphBuilder {
    fn new(num_frames: usize) -> Self {
        GraphBuilder {
            num_frames,
            state_frames: vec![0],
            finals: Vec::new(),
            arcs: Vec::new(),
        }
    }

    fn add_sentence(
        &mut self,
        words: &[WordId],
        lexicon: &Lexicon,
        topology: &HmmTopology,
        lm_logprob: LogWeight,
    ) -> Result<(), ToyError> {
        let t_max = self.num_frames;
        let mut hmm = Vec::new();
        for &w in words {
            if w == EPSILON || w as usize > lexicon.vocab_size() {
                return Err(ToyError::Config(format!("word id {w} not in the lexicon")));
            }
            for (k, &ph) in lexicon.pronunciation(w).iter().enumerate() {
                for st in 0..STATES_PER_PHONE {
                    hmm.push(HmmState {
                        pdf: pdf_of(ph, st),
                        self_loop: topology.self_loop(ph, st),
                        forward: topology.forward(ph, st),
                        entry_word: if k == 0 && st == 0 { w } else { EPSILON },
                    });
                }
            }
        }
        let n = hmm.len();
        if n == 0 {
            return Err(ToyError::Config("empty sentence".into()));
        }
        if n > t_max {
            return Err(ToyError::SentenceTooLong {
                states: n,
                frames: t_max,
            });
        }
        // lattice state for HMM state i after t frames (1 <= t <= T)
        let feasible = |i: usize, t: usize| i < t && n - 1 - i <= t_max - t;
        let mut ids: BTreeMap<(usize, usize), StateId> = BTreeMap::new();
        for t in 1..=t_max {
            for i in 0..n {
                if feasible(i, t) {
                    ids.insert((i, t), self.state_frames.len());
                    self.state_frames.push(t);
                }
            }
        }
        let last = n - 1;
        // the LM weight rides on the arc that first enters the last state
        let forward_weight =
            |i: usize| hmm[i].forward + if i + 1 == last { lm_logprob } else { 0.0 };
        self.arcs.push(Arc {
            src: 0,
            dst: ids[&(0, 1)],
            pdf_id: hmm[0].pdf,
            word_id: hmm[0].entry_word,
            graph_weight: 0.0,
        });
        for t in 1..t_max {
            for i in 0..n {
                let Some(&src) = ids.get(&(i, t)) else {
                    continue;
                };
                if let Some(&dst) = ids.get(&(i, t + 1)) {
                    self.arcs.push(Arc {
                        src,
                        dst,
                        pdf_id: hmm[i].pdf,
                        word_id: EPSILON,
                        graph_weight: hmm[i].self_loop,
                    });
                }
                if i + 1 < n {
                    if let Some(&dst) = ids.get(&(i + 1, t + 1)) {
                        self.arcs.push(Arc {
                            src,
                            dst,
                            pdf_id: hmm[i + 1].pdf,
                            word_id: hmm[i + 1].entry_word,
                            graph_weight: forward_weight(i),
                        });
                    }
                }
            }
        }
        self.finals.push(ids[&(last, t_max)]);
        Ok(())
    }

    fn finish(self) -> Result<Lattice, ToyError> {
        Ok(Lattice::new(
            self.num_frames,
            self.state_frames,
            0,
            self.finals,
            self.arcs,
        )?)
    }
}

/// Frame-synchronous unrolling of a sentence HMM over exactly `frames`
/// frames. Its paths are all alignments of the sentence.
pub fn build_sentence_graph(
    words: &[WordId],
    lexicon: &Lexicon,
    topology: &HmmTopology,
    lm_logprob: LogWeight,
    frames: usize,
) -> Result<Lattice, ToyError> {
    let mut b = GraphBuilder::new(frames);
    b.add_sentence(words, lexicon, topology, lm_logprob)?;
    b.finish()
}

/// Number of alignments of an `n`-state left-to-right HMM over `frames`
/// frames: `C(frames - 1, n - 1)`.
pub fn alignment_count(n: usize, frames: usize) -> u128 {
    if n == 0 || n > frames {
        return 0;
    }
    let (top, k) = ((frames - 1) as u128, (n - 1) as u128);
    let k = k.min(top - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul(top - i) / (i + 1);
    }
    c
}

/// Union of the sentence graphs of every LM sentence of at most `max_len`
/// words that fits in `frames`, with LM weights renormalized over the
/// included sentences. Refused when the total path count exceeds `max_paths`.
pub fn build_full_hypothesis_graph(
    lexicon: &Lexicon,
    topology: &HmmTopology,
    lm: &SentenceLm,
    frames: usize,
    max_len: usize,
    max_paths: u128,
) -> Result<Lattice, ToyError> {
    let included: Vec<(&WordSeq, LogWeight)> = lm
        .sentences()
        .filter(|(w, _)| w.len() <= max_len && lexicon.sentence_states(w) <= frames)
        .collect();
    if included.is_empty() {
        return Err(ToyError::Config("no sentence fits the frame budget".into()));
    }
    let count: u128 = included
        .iter()
        .map(|(w, _)| alignment_count(lexicon.sentence_states(w), frames))
        .fold(0u128, |a, b| a.saturating_add(b));
    if count > max_paths {
        return Err(ToyError::TooManyPaths {
            count,
            max: max_paths,
        });
    }
    let norm = if included.len() == lm.len() {
        0.0
    } else {
        log_sum_exp(&included.iter().map(|(_, lp)| *lp).collect::<Vec<_>>())
    };
    let mut b = GraphBuilder::new(frames);
    for (words, lp) in included {
        b.add_sentence(words, lexicon, topology, lp - norm)?;
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{enumerate_paths, forward_logsum};
    use crate::lattice::ScoreTable;

    fn one_phone_lexicon() -> Lexicon {
        Lexicon::new(vec![vec![0]], 1).unwrap()
    }

    #[test]
    fn forced_alignment_has_one_path() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        let g = build_sentence_graph(&[1], &lex, &topo, 0.0, 3).unwrap();
        assert_eq!(g.count_paths(), 1);
    }

    #[test]
    fn one_extra_frame_gives_three_paths() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        let g = build_sentence_graph(&[1], &lex, &topo, 0.0, 4).unwrap();
        assert_eq!(g.count_paths(), 3);
        let paths = enumerate_paths(&g, &ScoreTable::zeros(4, 3), 10).unwrap();
        for (p, _) in &paths {
            assert_eq!(p.word_sequence(), &[1]);
            assert_eq!(p.pdf_sequence()[0], 0);
            assert_eq!(*p.pdf_sequence().last().unwrap(), 2);
        }
    }

    #[test]
    fn too_long_sentence_rejected() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        assert!(matches!(
            build_sentence_graph(&[1, 1], &lex, &topo, 0.0, 5),
            Err(ToyError::SentenceTooLong {
                states: 6,
                frames: 5
            })
        ));
    }

    #[test]
    fn alignment_count_matches_binomial() {
        assert_eq!(alignment_count(3, 3), 1);
        assert_eq!(alignment_count(3, 4), 3);
        assert_eq!(alignment_count(3, 12), 55);
        assert_eq!(alignment_count(6, 12), 462);
        assert_eq!(alignment_count(7, 6), 0);
    }

    #[test]
    fn lm_weight_applied_once_per_path() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        let g = build_sentence_graph(&[1], &lex, &topo, -2.0, 5).unwrap();
        let h = 0.5f64.ln();
        for (p, _) in enumerate_paths(&g, &ScoreTable::zeros(5, 3), 100).unwrap() {
            // 4 transitions of probability 0.5 plus the LM weight
            assert!((p.total_graph_weight() - (4.0 * h - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_word_vocab_full_graph_is_sentence_graph() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        let lm = SentenceLm::uniform_unigram(&lex, 1, 5).unwrap();
        let full = build_full_hypothesis_graph(&lex, &topo, &lm, 5, 1, 1_000).unwrap();
        let sent = build_sentence_graph(&[1], &lex, &topo, 0.0, 5).unwrap();
        assert_eq!(full, sent);
    }

    #[test]
    fn two_word_union_forward_total() {
        let lex = Lexicon::new(vec![vec![0], vec![1]], 2).unwrap();
        let topo = HmmTopology::uniform(2, 0.5).unwrap();
        let lm = SentenceLm::uniform_unigram(&lex, 1, 4).unwrap();
        let full = build_full_hypothesis_graph(&lex, &topo, &lm, 4, 1, 1_000).unwrap();
        let scores = ScoreTable::from_fn(4, 6, |t, p| -0.1 * (t + p) as f64).unwrap();
        let a = build_sentence_graph(&[1], &lex, &topo, 0.0, 4).unwrap();
        let b = build_sentence_graph(&[2], &lex, &topo, 0.0, 4).unwrap();
        let fa = forward_logsum(&a, &scores).unwrap();
        let fb = forward_logsum(&b, &scores).unwrap();
        let h = 0.5f64.ln();
        let expected = log_sum_exp(&[fa + h, fb + h]);
        assert!((forward_logsum(&full, &scores).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn cap_refusal_reports_count() {
        let lex = one_phone_lexicon();
        let topo = HmmTopology::uniform(1, 0.5).unwrap();
        let lm = SentenceLm::uniform_unigram(&lex, 1, 12).unwrap();
        match build_full_hypothesis_graph(&lex, &topo, &lm, 12, 1, 10) {
            Err(ToyError::TooManyPaths { count, max }) => {
                assert_eq!(count, 55);
                assert_eq!(max, 10);
            }
            other => panic!("{other:?}"),
        }
    }
}
