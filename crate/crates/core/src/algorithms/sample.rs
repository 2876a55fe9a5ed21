//! Backward-filtering forward-sampling of lattice paths.
//!
//! After a backward pass, the weight of every arc leaving a state is
//! re-weighted by the backward score of its destination and normalized by the
//! backward score of its source. The resulting local distributions are exact
//! conditionals of the path posterior, so walking from the start state and
//! drawing one arc at a time yields an exact posterior sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{forward_logsum, BackwardTable};
use crate::lattice::{ArcId, Lattice, LatticeError, Path, ScoreTable};

const BETA_TOLERANCE: f64 = 1e-9;

/// Precomputed per-state arc distributions for repeated sampling.
#[derive(Debug, Clone)]
pub struct PathSampler<'a> {
    lattice: &'a Lattice,
    // per state: (arc, probability); probabilities are not renormalized
    local: Vec<Vec<(ArcId, f64)>>,
}

impl<'a> PathSampler<'a> {
    /// Rejects `beta` unless it has one entry per state and `beta(start)`
    /// matches the forward total of `(lattice, scores)`.
    pub fn new(
        lattice: &'a Lattice,
        scores: &ScoreTable,
        beta: &BackwardTable,
    ) -> Result<Self, LatticeError> {
        if beta.len() != lattice.num_states() {
            return Err(LatticeError::StaleBackward(format!(
                "{} entries for {} states",
                beta.len(),
                lattice.num_states()
            )));
        }
        let total = forward_logsum(lattice, scores)?;
        let b0 = beta.get(lattice.start());
        let consistent = (b0 - total).abs() <= BETA_TOLERANCE * total.abs().max(1.0);
        if !consistent {
            return Err(LatticeError::StaleBackward(format!(
                "beta(start) = {b0} but forward total = {total}"
            )));
        }
        let local = (0..lattice.num_states())
            .map(|s| {
                let bs = beta.get(s);
                lattice
                    .out_arcs(s)
                    .iter()
                    .map(|&a| {
                        let dst = lattice.arc(a).dst;
                        (
                            a,
                            (lattice.arc_weight(a, scores) + beta.get(dst) - bs).exp(),
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(PathSampler { lattice, local })
    }

    /// Arc distribution at state `s`.
    pub fn local_distribution(&self, s: usize) -> &[(ArcId, f64)] {
        &self.local[s]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Path {
        let lat = self.lattice;
        let mut s = lat.start();
        let mut ids = Vec::with_capacity(lat.num_frames());
        while !lat.is_final(s) {
            let dist = &self.local[s];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = dist[dist.len() - 1].0;
            for &(a, p) in dist {
                acc += p;
                if u < acc {
                    chosen = a;
                    break;
                }
            }
            ids.push(chosen);
            s = lat.arc(chosen).dst;
        }
        Path::from_arc_ids(lat, ids).expect("sampled walk on a valid lattice is a complete path")
    }
}

/// Draws one path with probability `exp(path_score - forward_logsum)`.
pub fn ancestral_sample(
    lattice: &Lattice,
    scores: &ScoreTable,
    beta: &BackwardTable,
    seed: u64,
) -> Result<Path, LatticeError> {
    let sampler = PathSampler::new(lattice, scores, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::backward_fill;
    use crate::lattice::Arc;

    fn arc(src: usize, dst: usize, pdf: usize, w: f64) -> Arc {
        Arc {
            src,
            dst,
            pdf_id: pdf,
            word_id: 0,
            graph_weight: w,
        }
    }

    #[test]
    fn single_path_always_sampled() {
        let lat = Lattice::new(
            2,
            vec![0, 1, 2],
            0,
            vec![2],
            vec![arc(0, 1, 0, -1.0), arc(1, 2, 0, -4.0)],
        )
        .unwrap();
        let scores = ScoreTable::zeros(2, 1);
        let beta = backward_fill(&lat, &scores).unwrap();
        for seed in 0..20 {
            assert_eq!(
                ancestral_sample(&lat, &scores, &beta, seed)
                    .unwrap()
                    .arc_ids(),
                &[0, 1]
            );
        }
    }

    #[test]
    fn equal_paths_are_balanced() {
        let lat = Lattice::new(
            1,
            vec![0, 1],
            0,
            vec![1],
            vec![arc(0, 1, 0, -0.3), arc(0, 1, 1, -0.3)],
        )
        .unwrap();
        let scores = ScoreTable::zeros(1, 2);
        let beta = backward_fill(&lat, &scores).unwrap();
        let sampler = PathSampler::new(&lat, &scores, &beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let first = (0..n)
            .filter(|_| sampler.sample(&mut rng).arc_ids()[0] == 0)
            .count();
        let freq = first as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.01, "{freq}");
    }

    #[test]
    fn stale_beta_rejected() {
        let lat = Lattice::new(
            1,
            vec![0, 1],
            0,
            vec![1],
            vec![arc(0, 1, 0, -0.3), arc(0, 1, 1, -0.3)],
        )
        .unwrap();
        let scores = ScoreTable::zeros(1, 2);
        let other = ScoreTable::new(1, 2, vec![-1.0, -2.0]).unwrap();
        let beta = backward_fill(&lat, &other).unwrap();
        assert!(matches!(
            ancestral_sample(&lat, &scores, &beta, 0),
            Err(LatticeError::StaleBackward(_))
        ));
        let short = BackwardTable::from_values(vec![0.0], 0);
        assert!(matches!(
            ancestral_sample(&lat, &scores, &short, 0),
            Err(LatticeError::StaleBackward(_))
        ));
    }

    #[test]
    fn same_seed_same_path() {
        let lat = Lattice::new(
            1,
            vec![0, 1],
            0,
            vec![1],
            vec![arc(0, 1, 0, -0.3), arc(0, 1, 1, -0.1)],
        )
        .unwrap();
        let scores = ScoreTable::zeros(1, 2);
        let beta = backward_fill(&lat, &scores).unwrap();
        let a = ancestral_sample(&lat, &scores, &beta, 7).unwrap();
        let b = ancestral_sample(&lat, &scores, &beta, 7).unwrap();
        assert_eq!(a, b);
    }
}
