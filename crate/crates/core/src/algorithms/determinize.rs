//! Word-sequence-aware dynamic programming.
//!
//! Paths are tracked through the product of lattice states and word-sequence
//! prefixes (interned in a trie). The tropical version keeps, per product
//! state, the best prefix score and a backpointer, which yields the best
//! alignment of every distinct word sequence in one pass. The log version
//! yields each word sequence's total.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::lattice::{
    Arc, ArcId, Lattice, LatticeError, LogWeight, Path, ScoreTable, StateId, WordId, WordSeq,
    EPSILON,
};
use crate::logmath::log_sum_exp;

#[derive(Default)]
struct PrefixTrie {
    parent: Vec<(usize, WordId)>,
    children: HashMap<(usize, WordId), usize>,
}

impl PrefixTrie {
    fn new() -> Self {
        PrefixTrie {
            parent: vec![(0, EPSILON)],
            children: HashMap::new(),
        }
    }

    fn extend(&mut self, node: usize, word: WordId) -> usize {
        if word == EPSILON {
            return node;
        }
        if let Some(&c) = self.children.get(&(node, word)) {
            return c;
        }
        let id = self.parent.len();
        self.parent.push((node, word));
        self.children.insert((node, word), id);
        id
    }

    fn words(&self, mut node: usize) -> WordSeq {
        let mut out = Vec::new();
        while node != 0 {
            let (p, w) = self.parent[node];
            out.push(w);
            node = p;
        }
        out.reverse();
        out
    }
}

#[derive(Clone, Copy)]
struct Entry {
    score: f64,
    // (source state, source prefix node, arc)
    back: Option<(StateId, usize, ArcId)>,
}

/// The best alignment of one word sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BestAlignment {
    pub words: WordSeq,
    pub path: Path,
    pub score: LogWeight,
}

/// Best-scoring alignment for every distinct word sequence of `lattice`,
/// sorted by word sequence.
///
/// Ties follow the same rule as [`super::viterbi_best_path`]: smallest
/// `(source state, arc index)` backpointer, then smallest final state id.
pub fn best_alignments(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<Vec<BestAlignment>, LatticeError> {
    lattice.check_scores(scores)?;
    let n = lattice.num_states();
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    let mut trie = PrefixTrie::new();
    let mut tables: Vec<BTreeMap<usize, Entry>> = vec![BTreeMap::new(); n];
    tables[lattice.start()].insert(
        0,
        Entry {
            score: 0.0,
            back: None,
        },
    );
    for &s in lattice.topo_order() {
        if s == lattice.start() {
            continue;
        }
        let mut table: BTreeMap<usize, Entry> = BTreeMap::new();
        for &a in lattice.in_arcs(s) {
            let arc = lattice.arc(a);
            let w = lattice.arc_weight(a, scores);
            for (&node, e) in &tables[arc.src] {
                let next = trie.extend(node, arc.word_id);
                let cand = e.score + w;
                let key = (arc.src, a);
                match table.get_mut(&next) {
                    None => {
                        table.insert(
                            next,
                            Entry {
                                score: cand,
                                back: Some((arc.src, node, a)),
                            },
                        );
                    }
                    Some(cur) => {
                        let cur_key = cur.back.map(|(src, _, arc)| (src, arc));
                        if cand > cur.score
                            || (cand == cur.score && cur_key.is_none_or(|k| key < k))
                        {
                            *cur = Entry {
                                score: cand,
                                back: Some((arc.src, node, a)),
                            };
                        }
                    }
                }
            }
        }
        tables[s] = table;
    }

    // node -> (final state, score), smallest final id wins ties
    let mut winners: BTreeMap<WordSeq, (StateId, usize, f64)> = BTreeMap::new();
    for &f in lattice.finals() {
        if f >= n {
            continue;
        }
        for (&node, e) in &tables[f] {
            let words = trie.words(node);
            match winners.get(&words) {
                Some(&(_, _, best)) if best >= e.score => {}
                _ => {
                    winners.insert(words, (f, node, e.score));
                }
            }
        }
    }
    if winners.is_empty() {
        return Err(LatticeError::NoPath);
    }

    let mut out = Vec::with_capacity(winners.len());
    for (words, (fin, node, score)) in winners {
        let mut ids = Vec::with_capacity(lattice.num_frames());
        let (mut s, mut nd) = (fin, node);
        while let Some((src, src_node, a)) = tables[s][&nd].back {
            ids.push(a);
            s = src;
            nd = src_node;
        }
        ids.reverse();
        let path = Path::from_arc_ids(lattice, ids)?;
        out.push(BestAlignment { words, path, score });
    }
    Ok(out)
}

/// Keeps exactly the best alignment of each distinct word sequence.
///
/// The output is the prefix tree of the retained paths, so it has exactly one
/// path per word sequence and each retained path keeps its original score.
pub fn determinize_best_alignment(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<Lattice, LatticeError> {
    let best = best_alignments(lattice, scores)?;
    Ok(prefix_tree(
        lattice.num_frames(),
        best.iter().map(|b| &b.path),
    ))
}

/// Builds a lattice whose path set is exactly `paths`, sharing common arc
/// prefixes.
pub(crate) fn prefix_tree<'a>(num_frames: usize, paths: impl Iterator<Item = &'a Path>) -> Lattice {
    let mut state_frames = vec![0usize];
    let mut arcs: Vec<Arc> = Vec::new();
    let mut finals = Vec::new();
    let mut edges: HashMap<(StateId, ArcId), StateId> = HashMap::new();
    for path in paths {
        let mut cur = 0;
        for (t, (&orig, arc)) in path.arc_ids().iter().zip(path.arcs()).enumerate() {
            cur = match edges.get(&(cur, orig)) {
                Some(&next) => next,
                None => {
                    let next = state_frames.len();
                    state_frames.push(t + 1);
                    arcs.push(Arc {
                        src: cur,
                        dst: next,
                        ..*arc
                    });
                    edges.insert((cur, orig), next);
                    next
                }
            };
        }
        finals.push(cur);
    }
    Lattice::new_unchecked(num_frames, state_frames, 0, finals, arcs)
}

/// Log-sum of path scores for every distinct word sequence, sorted by word
/// sequence.
pub fn word_sequence_totals(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<Vec<(WordSeq, LogWeight)>, LatticeError> {
    lattice.check_scores(scores)?;
    let n = lattice.num_states();
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    let mut trie = PrefixTrie::new();
    let mut tables: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    tables[lattice.start()].insert(0, 0.0);
    for &s in lattice.topo_order() {
        if s == lattice.start() {
            continue;
        }
        let mut terms: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &a in lattice.in_arcs(s) {
            let arc = lattice.arc(a);
            let w = lattice.arc_weight(a, scores);
            for (&node, &v) in &tables[arc.src] {
                let next = trie.extend(node, arc.word_id);
                terms.entry(next).or_default().push(v + w);
            }
        }
        tables[s] = terms
            .into_iter()
            .map(|(k, v)| (k, log_sum_exp(&v)))
            .collect();
    }
    let mut totals: BTreeMap<WordSeq, Vec<f64>> = BTreeMap::new();
    for &f in lattice.finals() {
        if f >= n {
            continue;
        }
        for (&node, &v) in &tables[f] {
            totals.entry(trie.words(node)).or_default().push(v);
        }
    }
    if totals.is_empty() {
        return Err(LatticeError::NoPath);
    }
    Ok(totals
        .into_iter()
        .map(|(k, v)| (k, log_sum_exp(&v)))
        .collect())
}

/// Sub-lattice holding exactly the paths whose word sequence is in `keep`.
///
/// Arcs keep their labels and weights, so path scores are unchanged. Errors
/// with [`LatticeError::NoPath`] if no path survives.
pub fn restrict_to_word_sequences(
    lattice: &Lattice,
    keep: &BTreeSet<WordSeq>,
) -> Result<Lattice, LatticeError> {
    let n = lattice.num_states();
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    // trie of allowed sequences; node 0 = empty prefix
    let mut trie = PrefixTrie::new();
    let mut terminal = BTreeSet::new();
    for words in keep {
        let mut node = 0;
        for &w in words {
            node = trie.extend(node, w);
        }
        terminal.insert(node);
    }
    let child = |node: usize, w: WordId| -> Option<usize> {
        if w == EPSILON {
            Some(node)
        } else {
            trie.children.get(&(node, w)).copied()
        }
    };

    // forward reachability over (state, node)
    let mut reach: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    reach[lattice.start()].insert(0);
    // ((state, trie node), arc, (state, trie node))
    type ProductArc = ((StateId, usize), ArcId, (StateId, usize));
    let mut product_arcs: Vec<ProductArc> = Vec::new();
    for &s in lattice.topo_order() {
        let nodes: Vec<usize> = reach[s].iter().copied().collect();
        for node in nodes {
            for &a in lattice.out_arcs(s) {
                let arc = lattice.arc(a);
                if let Some(next) = child(node, arc.word_id) {
                    reach[arc.dst].insert(next);
                    product_arcs.push(((s, node), a, (arc.dst, next)));
                }
            }
        }
    }

    // backward: keep product states that reach an accepting final
    let mut alive: BTreeSet<(StateId, usize)> = BTreeSet::new();
    for &f in lattice.finals() {
        if f < n {
            for &node in &reach[f] {
                if terminal.contains(&node) {
                    alive.insert((f, node));
                }
            }
        }
    }
    for (src, _, dst) in product_arcs.iter().rev() {
        if alive.contains(dst) {
            alive.insert(*src);
        }
    }
    if !alive.contains(&(lattice.start(), 0)) {
        return Err(LatticeError::NoPath);
    }

    let mut order: Vec<(StateId, usize)> = alive.iter().copied().collect();
    order.sort_by_key(|&(s, node)| (lattice.frame(s), s, node));
    let ids: HashMap<(StateId, usize), StateId> =
        order.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let state_frames = order.iter().map(|&(s, _)| lattice.frame(s)).collect();
    let mut arcs: Vec<(StateId, ArcId, Arc)> = product_arcs
        .iter()
        .filter(|(src, _, dst)| alive.contains(src) && alive.contains(dst))
        .map(|(src, a, dst)| {
            let orig = lattice.arc(*a);
            (
                ids[src],
                *a,
                Arc {
                    src: ids[src],
                    dst: ids[dst],
                    ..*orig
                },
            )
        })
        .collect();
    arcs.sort_by_key(|&(src, a, _)| (src, a));
    let finals = order
        .iter()
        .filter(|&&(s, node)| lattice.is_final(s) && terminal.contains(&node))
        .map(|k| ids[k])
        .collect();
    Lattice::new(
        lattice.num_frames(),
        state_frames,
        ids[&(lattice.start(), 0)],
        finals,
        arcs.into_iter().map(|x| x.2).collect(),
    )
}
