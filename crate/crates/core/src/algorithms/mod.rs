//! Shortest-distance style algorithms over lattices.
//!
//! Log semiring: [`forward_logsum`], [`backward_fill`], [`occupancies`].
//! Tropical semiring: [`viterbi_best_path`] and the word-sequence-aware
//! variant [`best_alignments`] behind [`determinize_best_alignment`].
//! Brute force: [`enumerate_paths`], the oracle everything else is checked
//! against.
//!
//! Argmax ties are broken deterministically: at every state the incoming arc
//! with the smallest `(source state id, arc index)` wins, and among final
//! states the smallest id wins.

mod determinize;
mod enumerate;
mod forward_backward;
mod sample;
mod viterbi;

pub use determinize::{
    best_alignments, determinize_best_alignment, restrict_to_word_sequences, word_sequence_totals,
    BestAlignment,
};
pub use enumerate::{enumerate_paths, path_set_contains};
pub use forward_backward::{
    backward_fill, forward_logsum, forward_table, occupancies, BackwardTable,
};
pub use sample::{ancestral_sample, PathSampler};
pub use viterbi::viterbi_best_path;

use crate::lattice::PdfId;

/// Dense `frames x pdfs` table of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    num_frames: usize,
    num_pdfs: usize,
    data: Vec<f64>,
}

/// Per-(frame, pdf) posterior occupancy; each row sums to one.
pub type OccupancyTable = FrameMatrix;

impl FrameMatrix {
    pub fn zeros(num_frames: usize, num_pdfs: usize) -> Self {
        FrameMatrix {
            num_frames,
            num_pdfs,
            data: vec![0.0; num_frames * num_pdfs],
        }
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

    #[inline]
    pub fn add(&mut self, t: usize, p: PdfId, v: f64) {
        self.data[t * self.num_pdfs + p] += v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.num_pdfs..(t + 1) * self.num_pdfs]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &FrameMatrix) -> FrameMatrix {
        assert_eq!(
            (self.num_frames, self.num_pdfs),
            (other.num_frames, other.num_pdfs)
        );
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        FrameMatrix {
            num_frames: self.num_frames,
            num_pdfs: self.num_pdfs,
            data,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.num_frames)
            .map(|t| self.row(t).iter().sum())
            .collect()
    }
}
