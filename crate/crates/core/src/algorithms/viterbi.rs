use crate::lattice::{ArcId, Lattice, LatticeError, LogWeight, Path, ScoreTable, StateId};

/// Maximum-score path (tropical semiring) and its score.
///
/// The returned score is accumulated in frame order exactly as
/// [`crate::lattice::path_score`] does, so the two agree bit for bit.
pub fn viterbi_best_path(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<(Path, LogWeight), LatticeError> {
    lattice.check_scores(scores)?;
    let n = lattice.num_states();
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    let mut delta = vec![f64::NEG_INFINITY; n];
    let mut back: Vec<Option<ArcId>> = vec![None; n];
    delta[lattice.start()] = 0.0;
    for &s in lattice.topo_order() {
        if s == lattice.start() {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_key: Option<(StateId, ArcId)> = None;
        for &a in lattice.in_arcs(s) {
            let src = lattice.arc(a).src;
            if delta[src] == f64::NEG_INFINITY {
                continue;
            }
            let cand = delta[src] + lattice.arc_weight(a, scores);
            let key = (src, a);
            if cand > best || (cand == best && best_key.is_none_or(|k| key < k)) {
                best = cand;
                best_key = Some(key);
            }
        }
        delta[s] = best;
        back[s] = best_key.map(|(_, a)| a);
    }

    let mut best_final = None;
    for &f in lattice.finals() {
        if f < n
            && delta[f] > f64::NEG_INFINITY
            && best_final.is_none_or(|b: StateId| delta[f] > delta[b])
        {
            best_final = Some(f);
        }
    }
    let fin = best_final.ok_or(LatticeError::NoPath)?;
    let mut ids = Vec::with_capacity(lattice.num_frames());
    let mut s = fin;
    while let Some(a) = back[s] {
        ids.push(a);
        s = lattice.arc(a).src;
    }
    ids.reverse();
    let path = Path::from_arc_ids(lattice, ids)?;
    Ok((path, delta[fin]))
}
