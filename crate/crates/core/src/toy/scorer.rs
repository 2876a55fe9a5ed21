//! Affine log-softmax frame scorer and its cross-entropy pretraining.

use serde::{Deserialize, Serialize};

use super::{ToyError, Utterance};
use crate::algorithms::FrameMatrix;
use crate::lattice::{PdfId, ScoreTable};
use crate::logmath::log_sum_exp;

/// `frames x dim` feature block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    num_frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(num_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self, ToyError> {
        if data.len() != num_frames * dim {
            return Err(ToyError::Dimension(format!(
                "{} values for {num_frames} x {dim} features",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(ToyError::Dimension("non-finite feature value".into()));
        }
        Ok(Features {
            num_frames,
            dim,
            data,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `a(t, .) = log_softmax(W x_t + b)`. Stored as a `pdfs x (dim + 1)` matrix
/// whose last column is the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    num_pdfs: usize,
    feature_dim: usize,
    weights: Vec<f64>,
}

impl ScorerParams {
    pub fn zeros(num_pdfs: usize, feature_dim: usize) -> Self {
        ScorerParams {
            num_pdfs,
            feature_dim,
            weights: vec![0.0; num_pdfs * (feature_dim + 1)],
        }
    }

    pub fn from_weights(
        num_pdfs: usize,
        feature_dim: usize,
        weights: Vec<f64>,
    ) -> Result<Self, ToyError> {
        if weights.len() != num_pdfs * (feature_dim + 1) {
            return Err(ToyError::Dimension(format!(
                "{} weights for {num_pdfs} pdfs and {feature_dim} features",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ToyError::Dimension("non-finite scorer weight".into()));
        }
        Ok(ScorerParams {
            num_pdfs,
            feature_dim,
            weights,
        })
    }

    pub fn num_pdfs(&self) -> usize {
        self.num_pdfs
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn row(&self, p: PdfId) -> &[f64] {
        let w = self.feature_dim + 1;
        &self.weights[p * w..(p + 1) * w]
    }

    /// `self -= rate * grad`.
    pub fn step(&mut self, grad: &[f64], rate: f64) {
        assert_eq!(grad.len(), self.weights.len());
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= rate * g;
        }
    }

    pub fn score_frames(&self, features: &Features) -> Result<ScoredFrames, ToyError> {
        if features.dim() != self.feature_dim {
            return Err(ToyError::Dimension(format!(
                "features have dimension {} but the scorer expects {}",
                features.dim(),
                self.feature_dim
            )));
        }
        let (n, f) = (self.num_pdfs, self.feature_dim);
        let mut logits = vec![0.0; n];
        let mut scores = Vec::with_capacity(features.num_frames() * n);
        let mut probs = Vec::with_capacity(features.num_frames() * n);
        for t in 0..features.num_frames() {
            let x = features.row(t);
            for (p, z) in logits.iter_mut().enumerate() {
                let row = self.row(p);
                *z = row[f] + row[..f].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let norm = log_sum_exp(&logits);
            for &z in &logits {
                scores.push(z - norm);
                probs.push((z - norm).exp());
            }
        }
        let scores = ScoreTable::new(features.num_frames(), n, scores)?;
        Ok(ScoredFrames { scores, probs })
    }
}

/// Scorer output together with what the backward map needs.
#[derive(Debug, Clone)]
pub struct ScoredFrames {
    pub scores: ScoreTable,
    probs: Vec<f64>,
}

impl ScoredFrames {
    /// Maps `d loss / d a` to `d loss / d theta`, laid out like
    /// [`ScorerParams::weights`].
    pub fn backward(
        &self,
        features: &Features,
        grad_a: &FrameMatrix,
    ) -> Result<Vec<f64>, ToyError> {
        let (t_len, n) = (self.scores.num_frames(), self.scores.num_pdfs());
        if grad_a.num_frames() != t_len || grad_a.num_pdfs() != n || features.num_frames() != t_len
        {
            return Err(ToyError::Dimension(
                "gradient shape does not match the scored frames".into(),
            ));
        }
        let f = features.dim();
        let mut out = vec![0.0; n * (f + 1)];
        for t in 0..t_len {
            let g = grad_a.row(t);
            let g_sum: f64 = g.iter().sum();
            let x = features.row(t);
            for q in 0..n {
                let dz = g[q] - self.probs[t * n + q] * g_sum;
                if dz == 0.0 {
                    continue;
                }
                let row = &mut out[q * (f + 1)..(q + 1) * (f + 1)];
                for (w, xi) in row[..f].iter_mut().zip(x) {
                    *w += dz * xi;
                }
                row[f] += dz;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

/// Full-batch gradient descent on the mean per-frame negative log-likelihood
/// of the true alignments. Returns the parameters and the loss before each
/// step.
pub fn ce_pretrain(
    init: &ScorerParams,
    utterances: &[Utterance],
    cfg: &CeConfig,
) -> Result<(ScorerParams, Vec<f64>), ToyError> {
    let mut params = init.clone();
    let frames: usize = utterances.iter().map(|u| u.features.num_frames()).sum();
    if frames == 0 {
        return Ok((params, Vec::new()));
    }
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut grad = vec![0.0; params.weights.len()];
        let mut loss = 0.0;
        for u in utterances {
            let scored = params.score_frames(&u.features)?;
            let mut g = FrameMatrix::zeros(scored.scores.num_frames(), scored.scores.num_pdfs());
            for (t, &p) in u.alignment.iter().enumerate() {
                loss -= scored.scores.get(t, p);
                g.add(t, p, -1.0 / frames as f64);
            }
            for (acc, d) in grad.iter_mut().zip(scored.backward(&u.features, &g)?) {
                *acc += d;
            }
        }
        loss /= frames as f64;
        if !loss.is_finite() {
            return Err(ToyError::Diverged {
                iteration: it,
                detail: format!("cross-entropy loss {loss}"),
            });
        }
        losses.push(loss);
        params.step(&grad, cfg.learning_rate);
    }
    Ok((params, losses))
}

/// Fraction of frames whose highest-scoring pdf is the aligned one.
pub fn frame_accuracy(params: &ScorerParams, utterances: &[Utterance]) -> Result<f64, ToyError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for u in utterances {
        let scored = params.score_frames(&u.features)?;
        for (t, &p) in u.alignment.iter().enumerate() {
            let row = scored.scores.row(t);
            let best = (0..row.len()).fold(0, |b, q| if row[q] > row[b] { q } else { b });
            hit += usize::from(best == p);
            total += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats() -> Features {
        Features::new(3, 2, vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.1]).unwrap()
    }

    fn params() -> ScorerParams {
        let w = (0..4 * 3)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13)
            .collect();
        ScorerParams::from_weights(4, 2, w).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_rows() {
        let s = ScorerParams::zeros(6, 2).score_frames(&feats()).unwrap();
        for &a in s.scores.data() {
            assert!((a + 6f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_are_normalized() {
        let s = params().score_frames(&feats()).unwrap();
        for t in 0..3 {
            let total: f64 = s.scores.row(t).iter().map(|a| a.exp()).sum();
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(matches!(
            ScorerParams::zeros(4, 3).score_frames(&feats()),
            Err(ToyError::Dimension(_))
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let f = feats();
        let p = params();
        // loss = sum_t,q c(t,q) a(t,q) with arbitrary coefficients
        let coef = |t: usize, q: usize| ((t * 5 + q * 3) % 7) as f64 * 0.25 - 0.6;
        let loss = |p: &ScorerParams| {
            let s = p.score_frames(&f).unwrap();
            (0..3)
                .flat_map(|t| (0..4).map(move |q| (t, q)))
                .map(|(t, q)| coef(t, q) * s.scores.get(t, q))
                .sum::<f64>()
        };
        let mut g = FrameMatrix::zeros(3, 4);
        for t in 0..3 {
            for q in 0..4 {
                g.add(t, q, coef(t, q));
            }
        }
        let analytic = p.score_frames(&f).unwrap().backward(&f, &g).unwrap();
        let h = 1e-6;
        for (i, &a) in analytic.iter().enumerate() {
            let mut up = p.clone();
            up.weights_mut()[i] += h;
            let mut dn = p.clone();
            dn.weights_mut()[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!(
                (fd - a).abs() <= 1e-7 * fd.abs().max(1.0),
                "{i}: {fd} vs {a}"
            );
        }
    }
}
