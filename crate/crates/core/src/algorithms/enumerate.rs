use std::collections::{BTreeSet, HashSet};

use crate::lattice::{
    path_score, ArcId, Lattice, LatticeError, LogWeight, Path, ScoreTable, StateId,
};

/// Every complete path with its exact score, in arc-index depth-first order.
///
/// The path count is computed first; lattices with more than `max_paths`
/// paths are refused rather than truncated.
pub fn enumerate_paths(
    lattice: &Lattice,
    scores: &ScoreTable,
    max_paths: usize,
) -> Result<Vec<(Path, LogWeight)>, LatticeError> {
    lattice.check_scores(scores)?;
    let count = lattice.count_paths();
    if count > max_paths as u128 {
        return Err(LatticeError::TooManyPaths {
            count,
            max: max_paths,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut ids: Vec<ArcId> = Vec::with_capacity(lattice.num_frames());
    walk(lattice, lattice.start(), &mut ids, &mut |ids| {
        let path = Path::from_arc_ids(lattice, ids.to_vec())?;
        let score = path_score(&path, scores)?;
        out.push((path, score));
        Ok(())
    })?;
    Ok(out)
}

fn walk(
    lattice: &Lattice,
    s: StateId,
    ids: &mut Vec<ArcId>,
    emit: &mut dyn FnMut(&[ArcId]) -> Result<(), LatticeError>,
) -> Result<(), LatticeError> {
    if lattice.is_final(s) {
        emit(ids)?;
    }
    for &a in lattice.out_arcs(s) {
        ids.push(a);
        walk(lattice, lattice.arc(a).dst, ids, emit)?;
        ids.pop();
    }
    Ok(())
}

/// True when every path of `inner` also appears in `outer` with the same
/// per-frame `(pdf, word)` labels.
///
/// Runs a subset construction over `outer` driven by the paths of `inner`;
/// cheap when `outer` is close to deterministic on labels.
pub fn path_set_contains(outer: &Lattice, inner: &Lattice) -> bool {
    let mut seen: HashSet<(StateId, BTreeSet<StateId>)> = HashSet::new();
    let mut stack = vec![(inner.start(), BTreeSet::from([outer.start()]))];
    while let Some((s, set)) = stack.pop() {
        if !seen.insert((s, set.clone())) {
            continue;
        }
        if inner.is_final(s) && !set.iter().any(|&o| outer.is_final(o)) {
            return false;
        }
        for &a in inner.out_arcs(s) {
            let arc = inner.arc(a);
            let next: BTreeSet<StateId> = set
                .iter()
                .flat_map(|&o| outer.out_arcs(o).iter().map(|&b| outer.arc(b)))
                .filter(|b| b.pdf_id == arc.pdf_id && b.word_id == arc.word_id)
                .map(|b| b.dst)
                .collect();
            if next.is_empty() {
                return false;
            }
            stack.push((arc.dst, next));
        }
    }
    true
}
