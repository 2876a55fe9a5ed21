//! Seeded random lattices and score tables for property checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lattice::{Arc, Lattice, ScoreTable};

/// Shape limits for [`random_lattice`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeShape {
    pub max_frames: usize,
    pub max_states_per_frame: usize,
    pub max_arcs_per_state: usize,
    pub num_pdfs: usize,
    /// Word labels are drawn from `0..=max_word`; 0 means no word.
    pub max_word: u32,
    pub max_paths: u128,
    /// Round graph weights and scores to multiples of 0.5 so that equal
    /// path scores are common.
    pub coarse: bool,
}

impl Default for LatticeShape {
    fn default() -> Self {
        LatticeShape {
            max_frames: 12,
            max_states_per_frame: 3,
            max_arcs_per_state: 4,
            num_pdfs: 4,
            max_word: 3,
            max_paths: 10_000,
            coarse: false,
        }
    }
}

fn draw_weight<R: Rng>(rng: &mut R, coarse: bool, scale: f64) -> f64 {
    let w = -scale * rng.random::<f64>();
    if coarse {
        (w * 2.0).round() / 2.0
    } else {
        w
    }
}

/// A valid frame-synchronous lattice. Frame 0 holds the start state, every
/// state of the last frame is final, and every state lies on a complete
/// path. Instances above `max_paths` are redrawn.
pub fn random_lattice<R: Rng>(rng: &mut R, shape: &LatticeShape) -> Lattice {
    loop {
        let frames = rng.random_range(1..=shape.max_frames);
        let mut layers: Vec<Vec<usize>> = vec![vec![0]];
        let mut state_frames = vec![0];
        for t in 1..=frames {
            let n = rng.random_range(1..=shape.max_states_per_frame);
            let ids: Vec<usize> = (state_frames.len()..state_frames.len() + n).collect();
            state_frames.extend(std::iter::repeat_n(t, n));
            layers.push(ids);
        }
        let mut arcs = Vec::new();
        for t in 0..frames {
            let (cur, next) = (&layers[t], &layers[t + 1]);
            let mut fanout = vec![0usize; cur.len()];
            let label = |rng: &mut R, src: usize, dst: usize| Arc {
                src,
                dst,
                pdf_id: rng.random_range(0..shape.num_pdfs),
                word_id: rng.random_range(0..=shape.max_word),
                graph_weight: draw_weight(rng, shape.coarse, 2.0),
            };
            // every state of the next frame gets an incoming arc and every
            // state of this frame an outgoing one
            for &dst in next {
                let i = rng.random_range(0..cur.len());
                arcs.push(label(rng, cur[i], dst));
                fanout[i] += 1;
            }
            for (i, &src) in cur.iter().enumerate() {
                if fanout[i] == 0 {
                    let dst = next[rng.random_range(0..next.len())];
                    arcs.push(label(rng, src, dst));
                    fanout[i] += 1;
                }
                let room = shape.max_arcs_per_state.saturating_sub(fanout[i]);
                let extra = rng.random_range(0..=room);
                for _ in 0..extra {
                    let dst = next[rng.random_range(0..next.len())];
                    arcs.push(label(rng, src, dst));
                }
            }
        }
        // arcs sorted by source so that arc ids follow state order
        arcs.sort_by_key(|a| a.src);
        let finals = layers[frames].clone();
        let lat = Lattice::new(frames, state_frames, 0, finals, arcs)
            .expect("generated lattice is valid");
        if lat.count_paths() <= shape.max_paths {
            return lat;
        }
    }
}

/// Per-frame log-scores drawn uniformly from `[-3, 0]`.
pub fn random_scores<R: Rng>(rng: &mut R, frames: usize, pdfs: usize, coarse: bool) -> ScoreTable {
    ScoreTable::from_fn(frames, pdfs, |_, _| draw_weight(rng, coarse, 3.0)).expect("finite scores")
}

/// Lattice and matching scores from one seed.
pub fn random_instance(seed: u64, shape: &LatticeShape) -> (Lattice, ScoreTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat = random_lattice(&mut rng, shape);
    let scores = random_scores(&mut rng, lat.num_frames(), shape.num_pdfs, shape.coarse);
    (lat, scores)
}
