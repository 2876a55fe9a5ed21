//! MMI objectives and their gradients with respect to acoustic scores.
//!
//! All three variants minimise `loss = denominator - numerator`:
//!
//! - [`true_mmi`]: both terms are full forward sums, the numerator over every
//!   alignment of the reference and the denominator over every alignment of
//!   every hypothesis;
//! - [`baseline_lattice_mmi`]: the numerator is a single resolved alignment and
//!   the denominator is a lattice determinized once, ahead of training;
//! - [`otf_mmi`]: like the baseline but the denominator lattice keeps every
//!   alignment and is determinized under the current scores at each call.
//!
//! Gradients are `d loss / d a(t, p)`: denominator occupancy minus numerator
//! occupancy. For the on-the-fly variant the per-hypothesis argmax is held
//! fixed within a call.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{
    ancestral_sample, backward_fill, determinize_best_alignment, forward_logsum, occupancies,
    path_set_contains, viterbi_best_path, FrameMatrix,
};
use crate::lattice::{path_score, Lattice, LatticeError, LogWeight, Path, ScoreTable};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("numerator mode 'fixed' requires a fixed path")]
    MissingFixedPath,
    #[error("numerator mode '{0}' requires a numerator lattice")]
    MissingNumeratorLattice(NumeratorMode),
    #[error("unknown numerator mode '{0}' (expected fixed, viterbi or ancestral)")]
    UnknownMode(String),
}

/// Result of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MmiEvaluation {
    pub numerator_logprob: LogWeight,
    pub denominator_logprob: LogWeight,
    /// `denominator_logprob - numerator_logprob`.
    pub loss: f64,
    /// `d loss / d a(t, p)`.
    pub grad: FrameMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumeratorMode {
    Fixed,
    Viterbi,
    Ancestral,
}

impl NumeratorMode {
    pub const ALL: [NumeratorMode; 3] = [
        NumeratorMode::Fixed,
        NumeratorMode::Viterbi,
        NumeratorMode::Ancestral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NumeratorMode::Fixed => "fixed",
            NumeratorMode::Viterbi => "viterbi",
            NumeratorMode::Ancestral => "ancestral",
        }
    }
}

impl fmt::Display for NumeratorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NumeratorMode {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(NumeratorMode::Fixed),
            "viterbi" => Ok(NumeratorMode::Viterbi),
            "ancestral" => Ok(NumeratorMode::Ancestral),
            other => Err(ObjectiveError::UnknownMode(other.to_string())),
        }
    }
}

/// How the numerator alignment is chosen.
#[derive(Debug, Clone)]
pub enum NumeratorSpec {
    /// A single alignment chosen once, ahead of training.
    Fixed(Path),
    /// Best alignment of the numerator lattice under the current scores.
    Viterbi(Lattice),
    /// One posterior sample from the numerator lattice under the current
    /// scores.
    Ancestral(Lattice),
}

impl NumeratorSpec {
    /// Assembles a spec from loosely typed parts, as read from files or flags.
    pub fn from_parts(
        mode: NumeratorMode,
        fixed_path: Option<Path>,
        numerator_lattice: Option<Lattice>,
    ) -> Result<Self, ObjectiveError> {
        match mode {
            NumeratorMode::Fixed => fixed_path
                .map(NumeratorSpec::Fixed)
                .ok_or(ObjectiveError::MissingFixedPath),
            NumeratorMode::Viterbi => numerator_lattice
                .map(NumeratorSpec::Viterbi)
                .ok_or(ObjectiveError::MissingNumeratorLattice(mode)),
            NumeratorMode::Ancestral => numerator_lattice
                .map(NumeratorSpec::Ancestral)
                .ok_or(ObjectiveError::MissingNumeratorLattice(mode)),
        }
    }

    pub fn mode(&self) -> NumeratorMode {
        match self {
            NumeratorSpec::Fixed(_) => NumeratorMode::Fixed,
            NumeratorSpec::Viterbi(_) => NumeratorMode::Viterbi,
            NumeratorSpec::Ancestral(_) => NumeratorMode::Ancestral,
        }
    }
}

/// Resolves the numerator to one path. `seed` is only used by the ancestral
/// mode.
pub fn resolve_numerator(
    num: &NumeratorSpec,
    scores: &ScoreTable,
    seed: u64,
) -> Result<Path, ObjectiveError> {
    Ok(match num {
        NumeratorSpec::Fixed(path) => path.clone(),
        NumeratorSpec::Viterbi(lat) => viterbi_best_path(lat, scores)?.0,
        NumeratorSpec::Ancestral(lat) => {
            let beta = backward_fill(lat, scores)?;
            ancestral_sample(lat, scores, &beta, seed)?
        }
    })
}

/// MMI over complete graphs: forward totals of both graphs.
///
/// Logs a warning if the numerator graph has a path missing from the
/// denominator graph, since the loss may then go negative.
pub fn true_mmi(
    numerator_graph: &Lattice,
    denominator_graph: &Lattice,
    scores: &ScoreTable,
) -> Result<MmiEvaluation, ObjectiveError> {
    let num = forward_logsum(numerator_graph, scores)?;
    let den = forward_logsum(denominator_graph, scores)?;
    if !path_set_contains(denominator_graph, numerator_graph) {
        log::warn!(
            "numerator graph has paths outside the denominator graph; MMI loss may be negative"
        );
    }
    let grad = occupancies(denominator_graph, scores)?.sub(&occupancies(numerator_graph, scores)?);
    Ok(MmiEvaluation {
        numerator_logprob: num,
        denominator_logprob: den,
        loss: den - num,
        grad,
    })
}

/// Lattice MMI against an already resolved numerator path.
pub fn lattice_mmi_with_path(
    numerator: &Path,
    den_lattice: &Lattice,
    scores: &ScoreTable,
) -> Result<MmiEvaluation, ObjectiveError> {
    let num = path_score(numerator, scores)?;
    let den = forward_logsum(den_lattice, scores)?;
    let mut grad = occupancies(den_lattice, scores)?;
    for (t, &p) in numerator.pdf_sequence().iter().enumerate() {
        grad.add(t, p, -1.0);
    }
    Ok(MmiEvaluation {
        numerator_logprob: num,
        denominator_logprob: den,
        loss: den - num,
        grad,
    })
}

/// Lattice MMI with a denominator lattice that was determinized ahead of
/// time (under the CE model): one retained alignment per hypothesis,
/// re-scored under the current scores.
pub fn baseline_lattice_mmi(
    num: &NumeratorSpec,
    den_lattice: &Lattice,
    scores: &ScoreTable,
    seed: u64,
) -> Result<MmiEvaluation, ObjectiveError> {
    let path = resolve_numerator(num, scores, seed)?;
    lattice_mmi_with_path(&path, den_lattice, scores)
}

/// Lattice MMI that re-selects each hypothesis' best alignment under the
/// current scores before summing.
pub fn otf_mmi(
    num: &NumeratorSpec,
    raw_den_lattice: &Lattice,
    scores: &ScoreTable,
    seed: u64,
) -> Result<MmiEvaluation, ObjectiveError> {
    let det = determinize_best_alignment(raw_den_lattice, scores)?;
    baseline_lattice_mmi(num, &det, scores, seed)
}
