use crate::lattice::{Lattice, LatticeError, LogWeight, ScoreTable, StateId};
use crate::logmath::log_sum_exp;

use super::{FrameMatrix, OccupancyTable};

/// Per-state forward log-sums `alpha(s)` and the lattice total.
///
/// States are visited in `(frame, id)` order and incoming arcs in arc-index
/// order, so the accumulation order is fixed.
pub fn forward_table(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<(Vec<LogWeight>, LogWeight), LatticeError> {
    lattice.check_scores(scores)?;
    let n = lattice.num_states();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    alpha[lattice.start()] = 0.0;
    let mut terms = Vec::new();
    for &s in lattice.topo_order() {
        if s == lattice.start() {
            continue;
        }
        terms.clear();
        for &a in lattice.in_arcs(s) {
            let src = lattice.arc(a).src;
            terms.push(alpha[src] + lattice.arc_weight(a, scores));
        }
        alpha[s] = log_sum_exp(&terms);
    }
    let finals: Vec<f64> = lattice
        .finals()
        .iter()
        .filter(|&&f| f < n)
        .map(|&f| alpha[f])
        .collect();
    let total = log_sum_exp(&finals);
    if !total.is_finite() {
        return Err(LatticeError::NoPath);
    }
    Ok((alpha, total))
}

/// Log-sum-exp over all complete paths of their scores.
pub fn forward_logsum(lattice: &Lattice, scores: &ScoreTable) -> Result<LogWeight, LatticeError> {
    forward_table(lattice, scores).map(|(_, total)| total)
}

/// Per-state backward log-sums over suffix paths to a final state.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTable {
    beta: Vec<LogWeight>,
    start: StateId,
}

impl BackwardTable {
    pub fn get(&self, s: StateId) -> LogWeight {
        self.beta[s]
    }

    pub fn values(&self) -> &[LogWeight] {
        &self.beta
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `beta(start)`, which equals the forward total.
    pub fn total(&self) -> LogWeight {
        self.beta[self.start]
    }

    /// Wraps externally supplied values, e.g. to exercise stale-table checks.
    pub fn from_values(beta: Vec<LogWeight>, start: StateId) -> Self {
        BackwardTable { beta, start }
    }
}

pub fn backward_fill(
    lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<BackwardTable, LatticeError> {
    lattice.check_scores(scores)?;
    let n = lattice.num_states();
    if lattice.start() >= n {
        return Err(LatticeError::NoPath);
    }
    let mut beta = vec![f64::NEG_INFINITY; n];
    let mut terms = Vec::new();
    for &s in lattice.topo_order().iter().rev() {
        if lattice.is_final(s) {
            beta[s] = 0.0;
            continue;
        }
        terms.clear();
        for &a in lattice.out_arcs(s) {
            terms.push(lattice.arc_weight(a, scores) + beta[lattice.arc(a).dst]);
        }
        beta[s] = log_sum_exp(&terms);
    }
    if !beta[lattice.start()].is_finite() {
        return Err(LatticeError::NoPath);
    }
    Ok(BackwardTable {
        beta,
        start: lattice.start(),
    })
}

/// Posterior probability `gamma(t, p)` that a path's frame-`t` arc carries
/// pdf `p`. The table has as many pdf columns as `scores`.
pub fn occupancies(lattice: &Lattice, scores: &ScoreTable) -> Result<OccupancyTable, LatticeError> {
    let (alpha, total) = forward_table(lattice, scores)?;
    let beta = backward_fill(lattice, scores)?;
    let mut gamma = FrameMatrix::zeros(scores.num_frames(), scores.num_pdfs());
    for (id, arc) in lattice.arcs().iter().enumerate() {
        let post =
            (alpha[arc.src] + lattice.arc_weight(id, scores) + beta.get(arc.dst) - total).exp();
        if post > 0.0 {
            gamma.add(lattice.frame(arc.src), arc.pdf_id, post);
        }
    }
    Ok(gamma)
}
