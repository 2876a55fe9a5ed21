//! Task construction and synthetic utterances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    build_full_hypothesis_graph, build_sentence_graph, Features, HmmTopology, Lexicon, SentenceLm,
    ToyError,
};
use crate::algorithms::{backward_fill, PathSampler};
use crate::lattice::{ArcId, Lattice, PdfId, ScoreTable, WordId, WordSeq};

fn default_max_paths() -> u64 {
    1_000_000
}

/// Shape of the synthetic task and dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub num_phones: usize,
    pub max_phones_per_word: usize,
    pub max_sentence_len: usize,
    pub frames: usize,
    pub feature_dim: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    /// Standard deviation of the per-pdf template entries.
    pub template_scale: f64,
    pub self_loop_prob: f64,
    pub num_train: usize,
    pub num_dev: usize,
    pub num_test: usize,
    /// Seeds the lexicon and the feature templates.
    pub task_seed: u64,
    /// Seeds sentence, alignment and noise draws.
    pub data_seed: u64,
    #[serde(default = "default_max_paths")]
    pub max_paths: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("num_phones", self.num_phones),
            ("max_phones_per_word", self.max_phones_per_word),
            ("max_sentence_len", self.max_sentence_len),
            ("frames", self.frames),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ToyError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(ToyError::Config(format!(
                "noise {} must be a finite non-negative number",
                self.noise
            )));
        }
        if !(self.template_scale > 0.0 && self.template_scale.is_finite()) {
            return Err(ToyError::Config(format!(
                "template_scale {} must be positive",
                self.template_scale
            )));
        }
        Ok(())
    }
}

/// Everything fixed by the task seed: lexicon, HMMs, LM, the complete
/// hypothesis graph and the pdf feature templates.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub config: SynthConfig,
    pub lexicon: Lexicon,
    pub topology: HmmTopology,
    pub lm: SentenceLm,
    pub full_graph: Lattice,
    templates: Vec<f64>,
}

impl ToyTask {
    pub fn new(config: &SynthConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.task_seed);
        let lexicon = Lexicon::random(
            config.vocab_size,
            config.num_phones,
            config.max_phones_per_word,
            &mut rng,
        )?;
        let topology = HmmTopology::uniform(config.num_phones, config.self_loop_prob)?;
        let lm = SentenceLm::uniform_unigram(&lexicon, config.max_sentence_len, config.frames)?;
        let full_graph = build_full_hypothesis_graph(
            &lexicon,
            &topology,
            &lm,
            config.frames,
            config.max_sentence_len,
            config.max_paths as u128,
        )?;
        let templates = (0..lexicon.num_pdfs() * config.feature_dim)
            .map(|_| config.template_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(ToyTask {
            config: config.clone(),
            lexicon,
            topology,
            lm,
            full_graph,
            templates,
        })
    }

    pub fn num_pdfs(&self) -> usize {
        self.lexicon.num_pdfs()
    }

    pub fn template(&self, pdf: PdfId) -> &[f64] {
        let f = self.config.feature_dim;
        &self.templates[pdf * f..(pdf + 1) * f]
    }

    pub fn sentence_graph(&self, words: &[WordId]) -> Result<Lattice, ToyError> {
        let lp = self
            .lm
            .logprob(words)
            .ok_or_else(|| ToyError::Config(format!("sentence {words:?} is not in the LM")))?;
        build_sentence_graph(words, &self.lexicon, &self.topology, lp, self.config.frames)
    }

    /// Features whose frame `t` is the template of `pdfs[t]` plus noise.
    pub fn render<R: Rng + ?Sized>(&self, pdfs: &[PdfId], rng: &mut R) -> Features {
        let f = self.config.feature_dim;
        let mut data = Vec::with_capacity(pdfs.len() * f);
        for &p in pdfs {
            for &m in self.template(p) {
                let eps: f64 = rng.sample(StandardNormal);
                data.push(m + self.config.noise * eps);
            }
        }
        Features::new(pdfs.len(), f, data).expect("rendered features are finite")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Features,
    pub words: WordSeq,
    /// True pdf per frame.
    pub alignment: Vec<PdfId>,
    /// True alignment as arc ids of the reference sentence graph.
    pub alignment_arcs: Vec<ArcId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Draws every utterance from the data seed. Sentences come from the LM by
/// rejection: a length uniform in `1..=max_sentence_len`, uniform words, and
/// a redraw whenever the sentence needs more than `frames` frames.
/// Alignments are posterior samples of the sentence graph under zero
/// acoustic scores, i.e. draws from the HMM transition model.
pub fn synth_dataset(task: &ToyTask) -> Result<Dataset, ToyError> {
    let cfg = &task.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let zeros = ScoreTable::zeros(cfg.frames, task.num_pdfs());
    let mut graphs: BTreeMap<WordSeq, Lattice> = BTreeMap::new();
    let mut draw = |prefix: &str, i: usize, rng: &mut ChaCha8Rng| -> Result<Utterance, ToyError> {
        let words = loop {
            let len = rng.random_range(1..=cfg.max_sentence_len);
            let w: WordSeq = (0..len)
                .map(|_| rng.random_range(1..=cfg.vocab_size as WordId))
                .collect();
            if task.lexicon.sentence_states(&w) <= cfg.frames {
                break w;
            }
        };
        if !graphs.contains_key(&words) {
            graphs.insert(words.clone(), task.sentence_graph(&words)?);
        }
        let graph = &graphs[&words];
        let beta = backward_fill(graph, &zeros)?;
        let path = PathSampler::new(graph, &zeros, &beta)?.sample(rng);
        let features = task.render(path.pdf_sequence(), rng);
        Ok(Utterance {
            id: format!("{prefix}-{i:04}"),
            features,
            words,
            alignment: path.pdf_sequence().to_vec(),
            alignment_arcs: path.arc_ids().to_vec(),
        })
    };
    let mut split = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|i| draw(prefix, i, rng))
            .collect::<Result<Vec<_>, _>>()
    };
    let train = split("train", cfg.num_train, &mut rng)?;
    let dev = split("dev", cfg.num_dev, &mut rng)?;
    let test = split("test", cfg.num_test, &mut rng)?;
    Ok(Dataset { train, dev, test })
}

#[cfg(test)]
pub(crate) fn tiny_config() -> SynthConfig {
    SynthConfig {
        vocab_size: 3,
        num_phones: 3,
        max_phones_per_word: 1,
        max_sentence_len: 2,
        frames: 8,
        feature_dim: 4,
        noise: 0.0,
        template_scale: 1.0,
        self_loop_prob: 0.5,
        num_train: 6,
        num_dev: 3,
        num_test: 3,
        task_seed: 1,
        data_seed: 2,
        max_paths: 1_000_000,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let task = ToyTask::new(&tiny_config()).unwrap();
        assert_eq!(synth_dataset(&task).unwrap(), synth_dataset(&task).unwrap());
    }

    #[test]
    fn alignments_are_paths_of_the_reference_graph() {
        let task = ToyTask::new(&tiny_config()).unwrap();
        let data = synth_dataset(&task).unwrap();
        for u in data.train.iter().chain(&data.dev).chain(&data.test) {
            let g = task.sentence_graph(&u.words).unwrap();
            let p = crate::lattice::Path::from_arc_ids(&g, u.alignment_arcs.clone()).unwrap();
            assert_eq!(p.pdf_sequence(), &u.alignment[..]);
            assert_eq!(p.word_sequence(), &u.words[..]);
            assert_eq!(u.features.num_frames(), 8);
        }
    }

    #[test]
    fn single_word_vocab_repeats_sentence() {
        let cfg = SynthConfig {
            vocab_size: 1,
            max_sentence_len: 1,
            ..tiny_config()
        };
        let task = ToyTask::new(&cfg).unwrap();
        let data = synth_dataset(&task).unwrap();
        assert!(data.train.iter().all(|u| u.words == data.train[0].words));
    }

    #[test]
    fn cap_is_enforced() {
        let cfg = SynthConfig {
            max_paths: 5,
            ..tiny_config()
        };
        assert!(matches!(
            ToyTask::new(&cfg),
            Err(ToyError::TooManyPaths { max: 5, .. })
        ));
    }

    #[test]
    fn noise_free_features_equal_templates() {
        let task = ToyTask::new(&tiny_config()).unwrap();
        let data = synth_dataset(&task).unwrap();
        let u = &data.train[0];
        for (t, &p) in u.alignment.iter().enumerate() {
            assert_eq!(u.features.row(t), task.template(p));
        }
    }
}
