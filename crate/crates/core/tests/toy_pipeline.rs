mod common;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use latmmi::algorithms::{best_alignments, path_set_contains};
use latmmi::objectives::{otf_mmi, true_mmi, NumeratorMode, NumeratorSpec};
use latmmi::theorem::measure_report;
use latmmi::toy::{
    build_sentence_graph, ce_pretrain, evaluate, frame_accuracy, make_numerator, prepare,
    recognition_pass, run, synth_dataset, CeConfig, DenominatorMode, ScorerParams, SynthConfig,
    ToyTask, TrainConfig,
};

fn noise_free() -> SynthConfig {
    SynthConfig {
        vocab_size: 3,
        num_phones: 3,
        max_phones_per_word: 1,
        max_sentence_len: 2,
        frames: 8,
        // more dimensions than pdfs, so every template is linearly separable
        feature_dim: 10,
        noise: 0.0,
        template_scale: 1.0,
        self_loop_prob: 0.5,
        num_train: 20,
        num_dev: 10,
        num_test: 20,
        task_seed: 11,
        data_seed: 12,
        max_paths: 1_000_000,
    }
}

fn noisy() -> SynthConfig {
    SynthConfig {
        vocab_size: 3,
        num_phones: 3,
        max_phones_per_word: 2,
        max_sentence_len: 2,
        frames: 7,
        feature_dim: 4,
        noise: 1.0,
        num_train: 6,
        num_dev: 4,
        num_test: 4,
        task_seed: 21,
        data_seed: 22,
        ..noise_free()
    }
}

fn train_cfg(mode: DenominatorMode, numerator: NumeratorMode) -> TrainConfig {
    TrainConfig {
        mode,
        numerator,
        k_hypotheses: 3,
        learning_rate: 0.05,
        iterations: 10,
        batch_size: 4,
        seed: 3,
        check_theorem: true,
        eval_every: 1,
    }
}

#[test]
fn noise_free_data_is_learned_by_ce() {
    let task = ToyTask::new(&noise_free()).unwrap();
    let data = synth_dataset(&task).unwrap();
    let init = ScorerParams::zeros(task.num_pdfs(), 10);
    let cfg = CeConfig {
        iterations: 300,
        learning_rate: 1.0,
    };
    let (params, losses) = ce_pretrain(&init, &data.train, &cfg).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let acc = frame_accuracy(&params, &data.train).unwrap();
    assert!(acc > 0.99, "frame accuracy {acc}");
    assert_eq!(
        evaluate(&params, &data.test, &task.full_graph).unwrap(),
        0.0
    );
}

#[test]
fn otf_training_lowers_true_loss_on_noise_free_data() {
    let synth = noise_free();
    let ce = CeConfig {
        iterations: 5,
        learning_rate: 1.0,
    };
    let prepared = prepare(&synth, &ce, 3).unwrap();
    let cfg = TrainConfig {
        batch_size: synth.num_train,
        ..train_cfg(DenominatorMode::Otf, NumeratorMode::Fixed)
    };
    let mut losses = Vec::new();
    let (outcome, _) = run(&prepared, &cfg, &mut |r| losses.push(r.loss_true)).unwrap();
    assert!(outcome.harness_ok);
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "true loss went {} -> {}", w[0], w[1]);
    }
}

#[test]
fn full_graph_is_union_of_sentence_graphs() {
    let task = ToyTask::new(&noisy()).unwrap();
    let zeros = latmmi::lattice::ScoreTable::zeros(7, task.num_pdfs());
    let mut expected = Vec::new();
    for (words, lp) in task.lm.sentences() {
        let g = build_sentence_graph(words, &task.lexicon, &task.topology, lp, 7).unwrap();
        for p in all_paths(&g, &zeros) {
            expected.push((labels(&g, &p.arcs), p.score));
        }
    }
    let mut got: Vec<_> = all_paths(&task.full_graph, &zeros)
        .into_iter()
        .map(|p| (labels(&task.full_graph, &p.arcs), p.score))
        .collect();
    assert_eq!(got.len(), expected.len());
    let key = |a: &(Vec<(usize, u32)>, f64), b: &(Vec<(usize, u32)>, f64)| a.0.cmp(&b.0);
    got.sort_by(key);
    expected.sort_by(key);
    for (g, e) in got.iter().zip(&expected) {
        assert_eq!(g.0, e.0);
        assert_close(g.1, e.1, 1e-12, "path weight");
    }
}

#[test]
fn recognition_keeps_oracle_top_hypotheses() {
    let task = ToyTask::new(&noisy()).unwrap();
    let data = synth_dataset(&task).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ScorerParams::zeros(task.num_pdfs(), 4);
    for w in params.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    for utt in &data.train {
        let scores = params.score_frames(&utt.features).unwrap().scores;
        let paths = all_paths(&task.full_graph, &scores);
        let mut ranked: Vec<(Vec<u32>, f64)> = max_by_words(&paths).into_iter().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for k in [1, 2, 4] {
            let rec = recognition_pass(&task.full_graph, &scores, k, Some(&utt.words)).unwrap();
            let mut oracle: BTreeSet<Vec<u32>> =
                ranked.iter().take(k).map(|(w, _)| w.clone()).collect();
            if !oracle.contains(&utt.words) {
                // the reference displaces the weakest of the K
                let weakest = ranked[..k].last().unwrap().0.clone();
                oracle.remove(&weakest);
                oracle.insert(utt.words.clone());
            }
            assert_eq!(rec.kept_set(), oracle);
            assert!(path_set_contains(&rec.raw, &rec.det));
            let raw_best = max_by_words(&all_paths(&rec.raw, &scores));
            let det_best = max_by_words(&all_paths(&rec.det, &scores));
            assert_eq!(raw_best, det_best);
        }
        let num = make_numerator(&task.full_graph, &utt.words, &scores).unwrap();
        let best = all_paths(&num.lattice, &scores)
            .iter()
            .map(|p| p.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let fixed = latmmi::lattice::path_score(&num.fixed_path, &scores).unwrap();
        assert_eq!(fixed, best);
    }
}

/// Loss of one utterance as a function of the scorer weights.
fn utterance_loss(
    task: &ToyTask,
    params: &ScorerParams,
    utt: &latmmi::toy::Utterance,
    raw: &latmmi::lattice::Lattice,
    spec: &NumeratorSpec,
    otf: bool,
) -> (f64, Vec<f64>, Vec<Vec<usize>>) {
    let scored = params.score_frames(&utt.features).unwrap();
    let eval = if otf {
        otf_mmi(spec, raw, &scored.scores, 0).unwrap()
    } else {
        let num = latmmi::algorithms::restrict_to_word_sequences(
            &task.full_graph,
            &BTreeSet::from([utt.words.clone()]),
        )
        .unwrap();
        true_mmi(&num, &task.full_graph, &scored.scores).unwrap()
    };
    let grad = scored.backward(&utt.features, &eval.grad).unwrap();
    let selection = best_alignments(raw, &scored.scores)
        .unwrap()
        .into_iter()
        .map(|b| b.path.arc_ids().to_vec())
        .collect();
    (eval.loss, grad, selection)
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let task = ToyTask::new(&noisy()).unwrap();
    let data = synth_dataset(&task).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = ScorerParams::zeros(task.num_pdfs(), 4);
    for w in params.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let h = 1e-5;
    let mut checked = 0;
    for utt in data.train.iter().take(3) {
        let scores = params.score_frames(&utt.features).unwrap().scores;
        let rec = recognition_pass(&task.full_graph, &scores, 3, Some(&utt.words)).unwrap();
        let num = make_numerator(&task.full_graph, &utt.words, &scores).unwrap();
        let spec = NumeratorSpec::Fixed(num.fixed_path);
        for otf in [false, true] {
            let (_, grad, sel) = utterance_loss(&task, &params, utt, &rec.raw, &spec, otf);
            for (i, &g) in grad.iter().enumerate() {
                let at = |delta: f64| {
                    let mut p = params.clone();
                    p.weights_mut()[i] += delta;
                    utterance_loss(&task, &p, utt, &rec.raw, &spec, otf)
                };
                let (plus, minus) = (at(h), at(-h));
                if otf && (plus.2 != sel || minus.2 != sel) {
                    continue;
                }
                let numeric = (plus.0 - minus.0) / (2.0 * h);
                let err = relative_error(g, numeric, 1e-3);
                assert!(err <= 1e-4, "weight {i}: {g} vs {numeric}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn training_is_deterministic_and_harness_holds() {
    let prepared = prepare(
        &noisy(),
        &CeConfig {
            iterations: 10,
            learning_rate: 1.0,
        },
        3,
    )
    .unwrap();
    for mode in DenominatorMode::ALL {
        for num in NumeratorMode::ALL {
            let cfg = train_cfg(mode, num);
            let mut a = Vec::new();
            let mut b = Vec::new();
            let (_, sa) = run(&prepared, &cfg, &mut |r| a.push(r.clone())).unwrap();
            let (_, sb) = run(&prepared, &cfg, &mut |r| b.push(r.clone())).unwrap();
            assert_eq!(a, b);
            assert_eq!(sa, sb);
            assert!(sa.harness_ok);
            for r in &a {
                assert!(r.normalization_residual.unwrap() <= 1e-9);
                assert!(r.ineq13_min_residual.unwrap() >= -1e-9);
                assert!(r.ineq14_residual.unwrap() >= -1e-9);
                assert!(r.muhat_loss_gap.unwrap() <= 1e-9);
            }
        }
    }
}

#[test]
fn harness_detects_a_wrong_otf_loss() {
    let task = ToyTask::new(&noisy()).unwrap();
    let data = synth_dataset(&task).unwrap();
    let utt = &data.train[0];
    let params = ScorerParams::zeros(task.num_pdfs(), 4);
    let scores = params.score_frames(&utt.features).unwrap().scores;
    let rec = recognition_pass(&task.full_graph, &scores, 2, Some(&utt.words)).unwrap();
    let num = make_numerator(&task.full_graph, &utt.words, &scores).unwrap();
    let spec = NumeratorSpec::Fixed(num.fixed_path.clone());
    let loss = otf_mmi(&spec, &rec.raw, &scores, 0).unwrap().loss;
    let kept = rec.kept_set();
    let ok = measure_report(
        &task.full_graph,
        &scores,
        &utt.words,
        &num.fixed_path,
        Some(&kept),
        Some(loss),
        100_000,
    )
    .unwrap();
    assert!(ok.all_ok());
    let bad = measure_report(
        &task.full_graph,
        &scores,
        &utt.words,
        &num.fixed_path,
        Some(&kept),
        Some(loss + 1e-6),
        100_000,
    )
    .unwrap();
    assert!(!bad.identity_ok);
}
