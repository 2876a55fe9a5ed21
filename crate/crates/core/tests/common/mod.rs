//! Brute-force oracles shared by the integration tests. Everything here walks
//! lattices through the public accessors only and never calls the library's
//! own enumeration or semiring code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use latmmi::lattice::{Lattice, ScoreTable};

#[derive(Debug, Clone)]
pub struct OraclePath {
    pub arcs: Vec<usize>,
    pub words: Vec<u32>,
    pub score: f64,
}

/// Every complete path from `from`, scored in frame order.
pub fn paths_from(lat: &Lattice, scores: &ScoreTable, from: usize) -> Vec<OraclePath> {
    let mut out = Vec::new();
    let mut stack = vec![(from, Vec::<usize>::new())];
    while let Some((s, arcs)) = stack.pop() {
        if lat.is_final(s) {
            let mut score = 0.0;
            let mut words = Vec::new();
            for &a in &arcs {
                let arc = lat.arc(a);
                score += scores.get(lat.frame(arc.src), arc.pdf_id) + arc.graph_weight;
                if arc.word_id != 0 {
                    words.push(arc.word_id);
                }
            }
            out.push(OraclePath {
                arcs: arcs.clone(),
                words,
                score,
            });
        }
        for &a in lat.out_arcs(s) {
            let mut next = arcs.clone();
            next.push(a);
            stack.push((lat.arc(a).dst, next));
        }
    }
    out
}

pub fn all_paths(lat: &Lattice, scores: &ScoreTable) -> Vec<OraclePath> {
    paths_from(lat, scores, lat.start())
}

pub fn logsumexp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn max_by_words(paths: &[OraclePath]) -> BTreeMap<Vec<u32>, f64> {
    let mut best: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for p in paths {
        let e = best.entry(p.words.clone()).or_insert(f64::NEG_INFINITY);
        *e = e.max(p.score);
    }
    best
}

pub fn sum_by_words(paths: &[OraclePath]) -> BTreeMap<Vec<u32>, f64> {
    let mut groups: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
    for p in paths {
        groups.entry(p.words.clone()).or_default().push(p.score);
    }
    groups.into_iter().map(|(k, v)| (k, logsumexp(v))).collect()
}

/// Per-frame labels of a path, for comparing paths across lattices.
pub fn labels(lat: &Lattice, arcs: &[usize]) -> Vec<(usize, u32)> {
    arcs.iter()
        .map(|&a| (lat.arc(a).pdf_id, lat.arc(a).word_id))
        .collect()
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} (|diff| {})",
        (a - b).abs()
    );
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
