//! Frame-synchronous lattices, alignment paths and acoustic score tables.
//!
//! A [`Lattice`] is an acyclic weighted automaton in which every arc consumes
//! exactly one frame. Arcs carry a pdf id and a word label (0 = no word) plus a
//! graph log-weight; acoustic log-scores are not stored on the lattice but
//! injected at evaluation time through a [`ScoreTable`], so the same lattice
//! can be re-scored under any parameter vector.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// Natural-log weight. Stored weights are always finite.
pub type LogWeight = f64;
pub type StateId = usize;
pub type ArcId = usize;
pub type PdfId = usize;
/// Word label; `0` is epsilon.
pub type WordId = u32;
pub type WordSeq = Vec<WordId>;

pub const EPSILON: WordId = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub pdf_id: PdfId,
    pub word_id: WordId,
    pub graph_weight: LogWeight,
}

/// A structural invariant breach found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoFrames,
    NoStates,
    StartOutOfRange {
        start: StateId,
    },
    StartFrame {
        state: StateId,
        frame: usize,
    },
    NoFinal,
    FinalOutOfRange {
        state: StateId,
    },
    FinalFrame {
        state: StateId,
        frame: usize,
    },
    FrameRange {
        state: StateId,
        frame: usize,
    },
    ArcEndpoint {
        arc: ArcId,
    },
    FrameStep {
        arc: ArcId,
        src_frame: usize,
        dst_frame: usize,
    },
    NonFiniteWeight {
        arc: ArcId,
    },
    Connectivity {
        state: StateId,
    },
}

impl Violation {
    /// Short machine-friendly name of the violated invariant.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::NoFrames => "frame-count",
            Violation::NoStates => "no-states",
            Violation::StartOutOfRange { .. } | Violation::StartFrame { .. } => "start",
            Violation::NoFinal
            | Violation::FinalOutOfRange { .. }
            | Violation::FinalFrame { .. } => "final",
            Violation::FrameRange { .. } => "frame-range",
            Violation::ArcEndpoint { .. } => "arc-endpoint",
            Violation::FrameStep { .. } => "frame-step",
            Violation::NonFiniteWeight { .. } => "weight",
            Violation::Connectivity { .. } => "connectivity",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoFrames => write!(f, "frame-count: lattice must span at least one frame"),
            Violation::NoStates => write!(f, "no-states: lattice has no states"),
            Violation::StartOutOfRange { start } => {
                write!(f, "start: state {start} does not exist")
            }
            Violation::StartFrame { state, frame } => {
                write!(f, "start: state {state} is at frame {frame}, expected 0")
            }
            Violation::NoFinal => write!(f, "final: lattice has no final state"),
            Violation::FinalOutOfRange { state } => {
                write!(f, "final: state {state} does not exist")
            }
            Violation::FinalFrame { state, frame } => {
                write!(
                    f,
                    "final: state {state} is at frame {frame}, expected the last frame"
                )
            }
            Violation::FrameRange { state, frame } => {
                write!(
                    f,
                    "frame-range: state {state} has frame {frame} outside the lattice"
                )
            }
            Violation::ArcEndpoint { arc } => {
                write!(f, "arc-endpoint: arc {arc} references a missing state")
            }
            Violation::FrameStep {
                arc,
                src_frame,
                dst_frame,
            } => write!(
                f,
                "frame-step: arc {arc} goes from frame {src_frame} to frame {dst_frame}"
            ),
            Violation::NonFiniteWeight { arc } => {
                write!(f, "weight: arc {arc} has a non-finite graph weight")
            }
            Violation::Connectivity { state } => {
                write!(
                    f,
                    "connectivity: state {state} is not on any start-to-final path"
                )
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid lattice: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("score table has {score_frames} frames but the lattice has {lattice_frames}")]
    FrameMismatch {
        lattice_frames: usize,
        score_frames: usize,
    },
    #[error("pdf id {pdf} is out of range for a score table with {num_pdfs} pdfs")]
    PdfOutOfRange { pdf: PdfId, num_pdfs: usize },
    #[error("score table entry ({frame}, {pdf}) is not finite")]
    NonFiniteScore { frame: usize, pdf: PdfId },
    #[error("score table data has {got} entries, expected {expected}")]
    ScoreShape { expected: usize, got: usize },
    #[error("lattice has no complete start-to-final path")]
    NoPath,
    #[error("not a complete path: {0}")]
    BadPath(String),
    #[error("backward table does not match this lattice and score table: {0}")]
    StaleBackward(String),
    #[error("lattice has {count} paths, more than the enumeration cap of {max}")]
    TooManyPaths { count: u128, max: usize },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Acyclic, frame-synchronous weighted automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    num_frames: usize,
    state_frames: Vec<usize>,
    start: StateId,
    finals: Vec<StateId>,
    arcs: Vec<Arc>,
    out_arcs: Vec<Vec<ArcId>>,
    in_arcs: Vec<Vec<ArcId>>,
    topo: Vec<StateId>,
    is_final: Vec<bool>,
}

impl Lattice {
    /// Builds a lattice and rejects it if any structural invariant fails.
    pub fn new(
        num_frames: usize,
        state_frames: Vec<usize>,
        start: StateId,
        finals: Vec<StateId>,
        arcs: Vec<Arc>,
    ) -> Result<Self, LatticeError> {
        let lat = Self::new_unchecked(num_frames, state_frames, start, finals, arcs);
        let violations = validate(&lat);
        if violations.is_empty() {
            Ok(lat)
        } else {
            Err(LatticeError::Invalid(violations))
        }
    }

    /// Builds a lattice without validating it. Only [`validate`] may be
    /// relied upon for such a lattice; the algorithms assume validity.
    pub fn new_unchecked(
        num_frames: usize,
        state_frames: Vec<usize>,
        start: StateId,
        finals: Vec<StateId>,
        arcs: Vec<Arc>,
    ) -> Self {
        let n = state_frames.len();
        let mut out_arcs = vec![Vec::new(); n];
        let mut in_arcs = vec![Vec::new(); n];
        for (id, arc) in arcs.iter().enumerate() {
            if arc.src < n && arc.dst < n {
                out_arcs[arc.src].push(id);
                in_arcs[arc.dst].push(id);
            }
        }
        let mut topo: Vec<StateId> = (0..n).collect();
        topo.sort_by_key(|&s| (state_frames[s], s));
        let finals: Vec<StateId> = finals
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut is_final = vec![false; n];
        for &f in &finals {
            if f < n {
                is_final[f] = true;
            }
        }
        Lattice {
            num_frames,
            state_frames,
            start,
            finals,
            arcs,
            out_arcs,
            in_arcs,
            topo,
            is_final,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_states(&self) -> usize {
        self.state_frames.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    /// Final states in increasing id order.
    pub fn finals(&self) -> &[StateId] {
        &self.finals
    }

    pub fn is_final(&self, s: StateId) -> bool {
        self.is_final.get(s).copied().unwrap_or(false)
    }

    pub fn frame(&self, s: StateId) -> usize {
        self.state_frames[s]
    }

    pub fn state_frames(&self) -> &[usize] {
        &self.state_frames
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, id: ArcId) -> &Arc {
        &self.arcs[id]
    }

    /// Outgoing arc ids of `s`, in arc-index order.
    pub fn out_arcs(&self, s: StateId) -> &[ArcId] {
        &self.out_arcs[s]
    }

    /// Incoming arc ids of `s`, in arc-index order.
    pub fn in_arcs(&self, s: StateId) -> &[ArcId] {
        &self.in_arcs[s]
    }

    /// States ordered by `(frame, id)`, a topological order.
    pub fn topo_order(&self) -> &[StateId] {
        &self.topo
    }

    /// Largest pdf id on any arc, if there are arcs.
    pub fn max_pdf(&self) -> Option<PdfId> {
        self.arcs.iter().map(|a| a.pdf_id).max()
    }

    /// Checks that `scores` can score every arc of this lattice.
    pub fn check_scores(&self, scores: &ScoreTable) -> Result<(), LatticeError> {
        if scores.num_frames() != self.num_frames {
            return Err(LatticeError::FrameMismatch {
                lattice_frames: self.num_frames,
                score_frames: scores.num_frames(),
            });
        }
        if let Some(p) = self.max_pdf() {
            if p >= scores.num_pdfs() {
                return Err(LatticeError::PdfOutOfRange {
                    pdf: p,
                    num_pdfs: scores.num_pdfs(),
                });
            }
        }
        Ok(())
    }

    /// Combined acoustic + graph weight of an arc.
    #[inline]
    pub fn arc_weight(&self, id: ArcId, scores: &ScoreTable) -> LogWeight {
        let arc = &self.arcs[id];
        scores.get(self.state_frames[arc.src], arc.pdf_id) + arc.graph_weight
    }

    /// Number of complete paths, saturating at `u128::MAX`.
    pub fn count_paths(&self) -> u128 {
        let mut counts = vec![0u128; self.num_states()];
        for &s in self.topo.iter().rev() {
            if self.is_final[s] {
                counts[s] = 1;
            }
            let mut total = counts[s];
            for &a in &self.out_arcs[s] {
                total = total.saturating_add(counts[self.arcs[a].dst]);
            }
            counts[s] = total;
        }
        counts.get(self.start).copied().unwrap_or(0)
    }

    /// Distinct word sequences, in lexicographic order. Exponential in the
    /// worst case; meant for small lattices.
    pub fn word_sequences(&self) -> BTreeSet<WordSeq> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<(StateId, WordSeq)> = vec![(self.start, Vec::new())];
        let mut seen = std::collections::HashSet::new();
        while let Some((s, words)) = stack.pop() {
            if !seen.insert((s, words.clone())) {
                continue;
            }
            if self.is_final(s) {
                out.insert(words.clone());
            }
            for &a in &self.out_arcs[s] {
                let arc = &self.arcs[a];
                let mut next = words.clone();
                if arc.word_id != EPSILON {
                    next.push(arc.word_id);
                }
                stack.push((arc.dst, next));
            }
        }
        out
    }

    /// Finds the path whose per-frame `(pdf, word)` labels equal those of
    /// `other`. When several match, the first in arc-index depth-first order
    /// is returned.
    pub fn find_alignment(&self, other: &Path) -> Option<Path> {
        let labels: Vec<(PdfId, WordId)> = other.labels().collect();
        if labels.len() != self.num_frames {
            return None;
        }
        let mut stack: Vec<(StateId, Vec<ArcId>)> = vec![(self.start, Vec::new())];
        while let Some((s, ids)) = stack.pop() {
            let t = ids.len();
            if t == labels.len() {
                if self.is_final(s) {
                    return Path::from_arc_ids(self, ids).ok();
                }
                continue;
            }
            for &a in self.out_arcs[s].iter().rev() {
                let arc = &self.arcs[a];
                if (arc.pdf_id, arc.word_id) == labels[t] {
                    let mut next = ids.clone();
                    next.push(a);
                    stack.push((arc.dst, next));
                }
            }
        }
        None
    }
}

/// Returns every violated structural invariant; empty means valid.
pub fn validate(lattice: &Lattice) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = lattice.num_states();
    let t_max = lattice.num_frames;
    if t_max == 0 {
        out.push(Violation::NoFrames);
    }
    if n == 0 {
        out.push(Violation::NoStates);
        return out;
    }
    for (s, &f) in lattice.state_frames.iter().enumerate() {
        if f > t_max {
            out.push(Violation::FrameRange { state: s, frame: f });
        }
    }
    if lattice.start >= n {
        out.push(Violation::StartOutOfRange {
            start: lattice.start,
        });
    } else if lattice.state_frames[lattice.start] != 0 {
        out.push(Violation::StartFrame {
            state: lattice.start,
            frame: lattice.state_frames[lattice.start],
        });
    }
    if lattice.finals.is_empty() {
        out.push(Violation::NoFinal);
    }
    for &f in &lattice.finals {
        if f >= n {
            out.push(Violation::FinalOutOfRange { state: f });
        } else if lattice.state_frames[f] != t_max {
            out.push(Violation::FinalFrame {
                state: f,
                frame: lattice.state_frames[f],
            });
        }
    }
    for (id, arc) in lattice.arcs.iter().enumerate() {
        if arc.src >= n || arc.dst >= n {
            out.push(Violation::ArcEndpoint { arc: id });
            continue;
        }
        let (fs, fd) = (lattice.state_frames[arc.src], lattice.state_frames[arc.dst]);
        if fd != fs + 1 {
            out.push(Violation::FrameStep {
                arc: id,
                src_frame: fs,
                dst_frame: fd,
            });
        }
        if !arc.graph_weight.is_finite() {
            out.push(Violation::NonFiniteWeight { arc: id });
        }
    }

    // Connectivity: graph reachability from start and to finals. Arc frame
    // steps are not required here so one bad arc is reported once.
    let mut reach = vec![false; n];
    let mut stack = Vec::new();
    if lattice.start < n {
        reach[lattice.start] = true;
        stack.push(lattice.start);
    }
    while let Some(s) = stack.pop() {
        for &a in &lattice.out_arcs[s] {
            let d = lattice.arcs[a].dst;
            if !reach[d] {
                reach[d] = true;
                stack.push(d);
            }
        }
    }
    let mut coreach = vec![false; n];
    for &f in &lattice.finals {
        if f < n && !coreach[f] {
            coreach[f] = true;
            stack.push(f);
        }
    }
    while let Some(s) = stack.pop() {
        for &a in &lattice.in_arcs[s] {
            let src = lattice.arcs[a].src;
            if !coreach[src] {
                coreach[src] = true;
                stack.push(src);
            }
        }
    }
    for s in 0..n {
        if !(reach[s] && coreach[s]) {
            out.push(Violation::Connectivity { state: s });
        }
    }
    out
}

/// One complete alignment through a lattice.
///
/// Holds copies of its arcs, so it stays meaningful after the lattice it came
/// from is dropped; `arc_ids` index into that originating lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    arc_ids: Vec<ArcId>,
    arcs: Vec<Arc>,
    word_sequence: WordSeq,
    pdf_sequence: Vec<PdfId>,
    total_graph_weight: LogWeight,
}

impl Path {
    /// Builds a path from arc ids of `lattice`, checking that it is a
    /// contiguous start-to-final walk covering every frame.
    pub fn from_arc_ids(lattice: &Lattice, arc_ids: Vec<ArcId>) -> Result<Self, LatticeError> {
        if arc_ids.len() != lattice.num_frames() {
            return Err(LatticeError::BadPath(format!(
                "{} arcs for a {}-frame lattice",
                arc_ids.len(),
                lattice.num_frames()
            )));
        }
        let mut state = lattice.start();
        let mut arcs = Vec::with_capacity(arc_ids.len());
        for (t, &id) in arc_ids.iter().enumerate() {
            let arc = lattice
                .arcs()
                .get(id)
                .ok_or_else(|| LatticeError::BadPath(format!("arc {id} does not exist")))?;
            if arc.src != state {
                return Err(LatticeError::BadPath(format!(
                    "arc {id} at position {t} leaves state {} but the path is at state {state}",
                    arc.src
                )));
            }
            state = arc.dst;
            arcs.push(*arc);
        }
        if !lattice.is_final(state) {
            return Err(LatticeError::BadPath(format!(
                "path ends at non-final state {state}"
            )));
        }
        let word_sequence = arcs
            .iter()
            .map(|a| a.word_id)
            .filter(|&w| w != EPSILON)
            .collect();
        let pdf_sequence = arcs.iter().map(|a| a.pdf_id).collect();
        let total_graph_weight = arcs.iter().fold(0.0, |acc, a| acc + a.graph_weight);
        Ok(Path {
            arc_ids,
            arcs,
            word_sequence,
            pdf_sequence,
            total_graph_weight,
        })
    }

    pub fn arc_ids(&self) -> &[ArcId] {
        &self.arc_ids
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn len(&self) -> usize {
        self.arcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn word_sequence(&self) -> &[WordId] {
        &self.word_sequence
    }

    pub fn pdf_sequence(&self) -> &[PdfId] {
        &self.pdf_sequence
    }

    pub fn total_graph_weight(&self) -> LogWeight {
        self.total_graph_weight
    }

    pub fn final_state(&self) -> StateId {
        self.arcs.last().map(|a| a.dst).unwrap_or(0)
    }

    /// Per-frame `(pdf, word)` labels.
    pub fn labels(&self) -> impl Iterator<Item = (PdfId, WordId)> + '_ {
        self.arcs.iter().map(|a| (a.pdf_id, a.word_id))
    }

    /// True when both paths carry the same per-frame labels, regardless of
    /// which lattice they were taken from.
    pub fn same_alignment(&self, other: &Path) -> bool {
        self.arcs.len() == other.arcs.len() && self.labels().eq(other.labels())
    }

    /// Debug line: `path <score> <pdf_0 .. pdf_{T-1}> | <word ids>`.
    pub fn debug_line(&self, score: LogWeight) -> String {
        let pdfs: Vec<String> = self.pdf_sequence.iter().map(|p| p.to_string()).collect();
        let words: Vec<String> = self.word_sequence.iter().map(|w| w.to_string()).collect();
        let mut line = format!("path {} {}", fmt_score(score), pdfs.join(" "));
        line.push_str(" |");
        for w in words {
            line.push(' ');
            line.push_str(&w);
        }
        line
    }
}

/// Formats a score with 15 significant digits.
pub fn fmt_score(x: f64) -> String {
    format!("{:.14e}", x)
}

/// Per-frame, per-pdf acoustic log-scores, `T x P`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    num_frames: usize,
    num_pdfs: usize,
    data: Vec<f64>,
}

impl ScoreTable {
    pub fn new(num_frames: usize, num_pdfs: usize, data: Vec<f64>) -> Result<Self, LatticeError> {
        if data.len() != num_frames * num_pdfs {
            return Err(LatticeError::ScoreShape {
                expected: num_frames * num_pdfs,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(LatticeError::NonFiniteScore {
                frame: i / num_pdfs.max(1),
                pdf: i % num_pdfs.max(1),
            });
        }
        Ok(ScoreTable {
            num_frames,
            num_pdfs,
            data,
        })
    }

    pub fn zeros(num_frames: usize, num_pdfs: usize) -> Self {
        ScoreTable {
            num_frames,
            num_pdfs,
            data: vec![0.0; num_frames * num_pdfs],
        }
    }

    pub fn from_fn(
        num_frames: usize,
        num_pdfs: usize,
        mut f: impl FnMut(usize, PdfId) -> f64,
    ) -> Result<Self, LatticeError> {
        let mut data = Vec::with_capacity(num_frames * num_pdfs);
        for t in 0..num_frames {
            for p in 0..num_pdfs {
                data.push(f(t, p));
            }
        }
        Self::new(num_frames, num_pdfs, data)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_pdfs(&self) -> usize {
        self.num_pdfs
    }

    #[inline]
    pub fn get(&self, t: usize, p: PdfId) -> f64 {
        self.data[t * self.num_pdfs + p]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.num_pdfs..(t + 1) * self.num_pdfs]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copy with entry `(t, p)` shifted by `delta`.
    pub fn perturbed(&self, t: usize, p: PdfId, delta: f64) -> Self {
        let mut out = self.clone();
        out.data[t * self.num_pdfs + p] += delta;
        out
    }
}

/// Total log-weight of `path`: the sum over frames of the acoustic score of
/// the frame's pdf plus the arc's graph weight, accumulated in frame order.
pub fn path_score(path: &Path, scores: &ScoreTable) -> Result<LogWeight, LatticeError> {
    partial_score(path.arcs(), 0, scores)
}

/// Score of a contiguous run of arcs whose first arc leaves frame
/// `first_frame`. `path_score` is `partial_score` over the whole path.
pub fn partial_score(
    arcs: &[Arc],
    first_frame: usize,
    scores: &ScoreTable,
) -> Result<LogWeight, LatticeError> {
    if first_frame + arcs.len() > scores.num_frames() {
        return Err(LatticeError::FrameMismatch {
            lattice_frames: first_frame + arcs.len(),
            score_frames: scores.num_frames(),
        });
    }
    let mut acc = 0.0;
    for (i, arc) in arcs.iter().enumerate() {
        if arc.pdf_id >= scores.num_pdfs() {
            return Err(LatticeError::PdfOutOfRange {
                pdf: arc.pdf_id,
                num_pdfs: scores.num_pdfs(),
            });
        }
        acc += scores.get(first_frame + i, arc.pdf_id) + arc.graph_weight;
    }
    Ok(acc)
}
