//! Self-contained verification suites over seeded random instances.
//!
//! Each suite returns named checks with the worst observed value. With
//! `corrupt` set, one input is deliberately damaged so the matching check
//! must fail; this exercises the failure path of callers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::algorithms::{
    backward_fill, best_alignments, determinize_best_alignment, enumerate_paths, forward_logsum,
    occupancies, restrict_to_word_sequences, viterbi_best_path, PathSampler,
};
use crate::lattice::{Lattice, LatticeError, Path, ScoreTable, WordSeq};
use crate::logmath::{log_sum_exp, relative_error};
use crate::objectives::{
    baseline_lattice_mmi, otf_mmi, resolve_numerator, true_mmi, MmiEvaluation, NumeratorMode,
    NumeratorSpec, ObjectiveError,
};
use crate::testgen::{random_instance, LatticeShape};
use crate::theorem::{build_grouping, check_inequality_13, measure_report, INEQUALITY_SLACK};
use crate::toy::{build_lattices, synth_dataset, ScorerParams, SynthConfig, ToyError, ToyTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Theorem,
    Gradient,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Suite::Oracle),
            "theorem" => Ok(Suite::Theorem),
            "gradient" => Ok(Suite::Gradient),
            other => Err(format!(
                "unknown suite '{other}' (expected oracle, theorem or gradient)"
            )),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Oracle => "oracle",
            Suite::Theorem => "theorem",
            Suite::Gradient => "gradient",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    /// Worst observed error or residual.
    pub worst: f64,
    pub tolerance: f64,
    /// First failing instance, if any.
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub seed: u64,
    pub corrupted: bool,
    pub checks: Vec<Check>,
    /// Gradient entries skipped because a selection changed within one
    /// finite-difference step, per objective.
    pub skipped_unstable: BTreeMap<String, usize>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Harness(#[from] crate::theorem::HarnessError),
}

/// Tracks the worst value of one named check. `bad` is true when an
/// instance fails.
struct Tracker {
    check: Check,
    higher_is_worse: bool,
}

impl Tracker {
    fn new(name: &str, tolerance: f64, higher_is_worse: bool) -> Self {
        Tracker {
            check: Check {
                name: name.to_string(),
                passed: true,
                instances: 0,
                worst: if higher_is_worse { 0.0 } else { f64::INFINITY },
                tolerance,
                first_failure: None,
            },
            higher_is_worse,
        }
    }

    fn record(&mut self, value: f64, bad: bool, what: impl FnOnce() -> String) {
        let c = &mut self.check;
        c.instances += 1;
        let worse = if self.higher_is_worse {
            value > c.worst || value.is_nan()
        } else {
            value < c.worst || value.is_nan()
        };
        if worse {
            c.worst = value;
        }
        if bad && c.passed {
            c.passed = false;
            c.first_failure = Some(what());
        }
    }

    fn done(self) -> Check {
        self.check
    }
}

/// Forward, backward, Viterbi, determinization, occupancy and sampling
/// against exhaustive enumeration.
pub fn oracle_suite(
    seed: u64,
    instances: usize,
    corrupt: bool,
) -> Result<VerifyReport, VerifyError> {
    let max_paths = 10_000;
    let mut fwd = Tracker::new("forward-oracle", 1e-9, true);
    let mut bwd = Tracker::new("backward-forward", 1e-9, true);
    let mut vit = Tracker::new("viterbi-oracle", 0.0, true);
    let mut det = Tracker::new("determinize-oracle", 0.0, true);
    let mut occ = Tracker::new("occupancy-rows", 1e-9, true);
    let mut otf = Tracker::new("otf-definition", 0.0, true);
    for i in 0..instances {
        let shape = LatticeShape {
            coarse: i % 3 == 2,
            ..LatticeShape::default()
        };
        let inst_seed = seed.wrapping_add(i as u64);
        let (lat, scores) = random_instance(inst_seed, &shape);
        let what = || format!("instance seed {inst_seed}");
        let paths = enumerate_paths(&lat, &scores, max_paths)?;
        let path_scores: Vec<f64> = paths.iter().map(|(_, s)| *s).collect();

        let total = forward_logsum(&lat, &scores)?;
        let reported = if corrupt && i == 0 {
            total + 1e-6
        } else {
            total
        };
        let err = (reported - log_sum_exp(&path_scores)).abs();
        fwd.record(err, err > 1e-9, what);

        let beta = backward_fill(&lat, &scores)?;
        let err = (beta.total() - total).abs();
        bwd.record(err, err > 1e-9, what);

        let best = path_scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let (_, v) = viterbi_best_path(&lat, &scores)?;
        let err = (v - best).abs();
        vit.record(err, v != best, what);

        let mut maxima: BTreeMap<WordSeq, f64> = BTreeMap::new();
        for (p, s) in &paths {
            let e = maxima
                .entry(p.word_sequence().to_vec())
                .or_insert(f64::NEG_INFINITY);
            *e = e.max(*s);
        }
        let d = determinize_best_alignment(&lat, &scores)?;
        let dpaths = enumerate_paths(&d, &scores, max_paths)?;
        let mut worst: f64 = 0.0;
        let mut ok = dpaths.len() == maxima.len();
        for (p, s) in &dpaths {
            match maxima.get(p.word_sequence()) {
                Some(m) => {
                    worst = worst.max((m - s).abs());
                    ok &= m == s;
                }
                None => ok = false,
            }
        }
        det.record(worst, !ok, what);

        let g = occupancies(&lat, &scores)?;
        let err = g
            .row_sums()
            .iter()
            .map(|r| (r - 1.0).abs())
            .fold(0.0, f64::max);
        occ.record(err, err > 1e-9, what);

        // the on-the-fly objective is the baseline objective on the lattice
        // determinized under the same scores
        let (vpath, _) = viterbi_best_path(&lat, &scores)?;
        let num = NumeratorSpec::Fixed(vpath);
        let a = otf_mmi(&num, &lat, &scores, inst_seed)?;
        let b = baseline_lattice_mmi(&num, &d, &scores, inst_seed)?;
        let same = a == b;
        otf.record(if same { 0.0 } else { 1.0 }, !same, what);
    }
    let checks = vec![
        fwd.done(),
        bwd.done(),
        vit.done(),
        det.done(),
        occ.done(),
        otf.done(),
        sampling_check(seed, 20, 200_000)?,
    ];
    Ok(VerifyReport {
        suite: Suite::Oracle,
        seed,
        corrupted: corrupt,
        checks,
        skipped_unstable: BTreeMap::new(),
    })
}

/// Total-variation distance between sample frequencies and enumerated
/// posteriors on small lattices.
fn sampling_check(seed: u64, lattices: usize, samples: usize) -> Result<Check, VerifyError> {
    let shape = LatticeShape {
        max_frames: 4,
        max_states_per_frame: 2,
        max_arcs_per_state: 2,
        max_paths: 8,
        ..LatticeShape::default()
    };
    let mut tv_track = Tracker::new("sampling-tv", 0.01, true);
    for i in 0..lattices {
        let inst_seed = seed.wrapping_add(10_000 + i as u64);
        let (lat, scores) = random_instance(inst_seed, &shape);
        let paths = enumerate_paths(&lat, &scores, 8)?;
        let z = forward_logsum(&lat, &scores)?;
        let beta = backward_fill(&lat, &scores)?;
        let sampler = PathSampler::new(&lat, &scores, &beta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for _ in 0..samples {
            *counts
                .entry(sampler.sample(&mut rng).arc_ids().to_vec())
                .or_default() += 1;
        }
        let tv = 0.5
            * paths
                .iter()
                .map(|(p, s)| {
                    let freq =
                        counts.get(p.arc_ids()).copied().unwrap_or(0) as f64 / samples as f64;
                    (freq - (s - z).exp()).abs()
                })
                .sum::<f64>();
        tv_track.record(tv, tv > 0.01, || format!("instance seed {inst_seed}"));
    }
    Ok(tv_track.done())
}

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        vocab_size: 3,
        num_phones: 3,
        max_phones_per_word: 2,
        max_sentence_len: 2,
        frames: 9,
        feature_dim: 3,
        noise: 1.0,
        template_scale: 1.0,
        self_loop_prob: 0.5,
        num_train: 3,
        num_dev: 0,
        num_test: 0,
        task_seed: seed,
        data_seed: seed ^ 0x5eed,
        max_paths: 1_000_000,
    }
}

fn random_params<R: Rng>(rng: &mut R, pdfs: usize, dim: usize, scale: f64) -> ScorerParams {
    let w = (0..pdfs * (dim + 1))
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ScorerParams::from_weights(pdfs, dim, w).expect("finite weights")
}

/// Measure normalization, both inequalities and the mu-hat identity on toy
/// utterances under random scorers and random numerator modes.
pub fn theorem_suite(
    seed: u64,
    instances: usize,
    corrupt: bool,
) -> Result<VerifyReport, VerifyError> {
    let mut norm = Tracker::new("normalization", 1e-9, true);
    let mut ineq13 = Tracker::new("inequality-13", -INEQUALITY_SLACK, false);
    let mut ineq14 = Tracker::new("inequality-14", -INEQUALITY_SLACK, false);
    let mut ident = Tracker::new("muhat-identity", 1e-9, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let task = ToyTask::new(&small_synth(seed.wrapping_add(i as u64)))?;
        let data = synth_dataset(&task)?;
        let pdfs = task.num_pdfs();
        let ce = random_params(&mut rng, pdfs, 3, 1.0);
        let current = random_params(&mut rng, pdfs, 3, 1.0);
        let k = rng.random_range(1..=6);
        let lattices = build_lattices(&task, &ce, &data.train, k)?;
        for (u, lat) in data.train.iter().zip(&lattices) {
            let mode = NumeratorMode::ALL[rng.random_range(0..3)];
            let spec = lat.numerator_spec(mode);
            let scores = current.score_frames(&u.features)?.scores;
            let draw = rng.random();
            let numerator = resolve_numerator(&spec, &scores, draw)?;
            let otf = otf_mmi(&spec, &lat.raw, &scores, draw)?;
            let what = || {
                format!(
                    "task seed {}, {}, numerator {mode}",
                    seed.wrapping_add(i as u64),
                    u.id
                )
            };
            let report = measure_report(
                &task.full_graph,
                &scores,
                &u.words,
                &numerator,
                Some(&lat.kept),
                Some(otf.loss),
                task.config.max_paths as usize,
            )?;
            let r = report.normalization_residual;
            norm.record(r, !report.normalization_ok, what);
            let mut r13 = report.inequality13_min;
            if corrupt && i == 0 {
                // pick the worst alignment of each competitor instead of the best
                let mut g = build_grouping(
                    &task.full_graph,
                    &scores,
                    &u.words,
                    &numerator,
                    task.config.max_paths as usize,
                )?;
                for (w, set) in &g.competitor_sets {
                    let worst = set
                        .iter()
                        .min_by(|a, b| a.score.total_cmp(&b.score))
                        .expect("non-empty")
                        .clone();
                    g.selected_competitors.insert(w.clone(), worst);
                }
                r13 = check_inequality_13(&g)
                    .iter()
                    .map(|(_, r)| *r)
                    .fold(f64::INFINITY, f64::min);
            }
            ineq13.record(r13, r13 < -INEQUALITY_SLACK, what);
            let r = report.inequality14_residual;
            ineq14.record(r, !report.inequality14_ok, what);
            let gap = report.muhat_loss_gap.unwrap_or(f64::NAN);
            ident.record(gap, gap.is_nan() || gap > 1e-9, what);
        }
    }
    Ok(VerifyReport {
        suite: Suite::Theorem,
        seed,
        corrupted: corrupt,
        checks: vec![norm.done(), ineq13.done(), ineq14.done(), ident.done()],
        skipped_unstable: BTreeMap::new(),
    })
}

/// Finite-difference step for score gradients.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error denominator floor: entries whose gradient is below this
/// magnitude are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-3;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Which objective a gradient instance differentiates.
#[derive(Debug, Clone)]
pub enum GradientTarget<'a> {
    True {
        numerator: &'a Lattice,
        denominator: &'a Lattice,
    },
    Baseline {
        numerator: &'a NumeratorSpec,
        det: &'a Lattice,
        seed: u64,
    },
    Otf {
        numerator: &'a NumeratorSpec,
        raw: &'a Lattice,
        seed: u64,
    },
}

impl GradientTarget<'_> {
    pub fn evaluate(&self, scores: &ScoreTable) -> Result<MmiEvaluation, ObjectiveError> {
        match *self {
            GradientTarget::True {
                numerator,
                denominator,
            } => true_mmi(numerator, denominator, scores),
            GradientTarget::Baseline {
                numerator,
                det,
                seed,
            } => baseline_lattice_mmi(numerator, det, scores, seed),
            GradientTarget::Otf {
                numerator,
                raw,
                seed,
            } => otf_mmi(numerator, raw, scores, seed),
        }
    }

    /// Everything that an argmax or a draw selects under `scores`; the
    /// objective is smooth wherever this stays constant.
    pub fn selection(&self, scores: &ScoreTable) -> Result<Vec<Vec<usize>>, ObjectiveError> {
        let resolved = |n: &NumeratorSpec, seed: u64| -> Result<Path, ObjectiveError> {
            resolve_numerator(n, scores, seed)
        };
        Ok(match *self {
            GradientTarget::True { .. } => Vec::new(),
            GradientTarget::Baseline {
                numerator, seed, ..
            } => {
                vec![resolved(numerator, seed)?.arc_ids().to_vec()]
            }
            GradientTarget::Otf {
                numerator,
                raw,
                seed,
            } => {
                let mut sel = vec![resolved(numerator, seed)?.arc_ids().to_vec()];
                for b in best_alignments(raw, scores)? {
                    sel.push(b.path.arc_ids().to_vec());
                }
                sel
            }
        })
    }
}

/// Outcome of a finite-difference sweep over every `(t, p)` entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOutcome {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

pub fn finite_difference_check(
    target: &GradientTarget<'_>,
    scores: &ScoreTable,
    analytic_offset: f64,
) -> Result<FdOutcome, ObjectiveError> {
    let center = target.evaluate(scores)?;
    let sel = target.selection(scores)?;
    let mut out = FdOutcome {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for t in 0..scores.num_frames() {
        for p in 0..scores.num_pdfs() {
            let up = scores.perturbed(t, p, FD_STEP);
            let dn = scores.perturbed(t, p, -FD_STEP);
            if target.selection(&up)? != sel || target.selection(&dn)? != sel {
                out.skipped += 1;
                continue;
            }
            let fd = (target.evaluate(&up)?.loss - target.evaluate(&dn)?.loss) / (2.0 * FD_STEP);
            let mut an = center.grad.get(t, p);
            if t == 0 && p == 0 {
                an += analytic_offset;
            }
            out.max_rel_error = out.max_rel_error.max(relative_error(fd, an, FD_FLOOR));
            out.checked += 1;
        }
    }
    Ok(out)
}

/// Analytic score gradients of the three objectives against central finite
/// differences.
pub fn gradient_suite(
    seed: u64,
    instances: usize,
    corrupt: bool,
) -> Result<VerifyReport, VerifyError> {
    let shape = LatticeShape {
        max_frames: 8,
        max_paths: 2_000,
        ..LatticeShape::default()
    };
    let mut trackers = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for name in ["true_mmi", "baseline_lattice_mmi", "otf_mmi"] {
        trackers.insert(
            name,
            Tracker::new(&format!("gradient-fd {name}"), FD_TOLERANCE, true),
        );
        skipped.insert(name.to_string(), 0usize);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let inst_seed = seed.wrapping_add(i as u64);
        let (raw, ce_scores) = random_instance(inst_seed, &shape);
        // current scores differ from the ones the lattices were built under
        let scores = ScoreTable::from_fn(raw.num_frames(), shape.num_pdfs, |t, p| {
            ce_scores.get(t, p) + 0.5 * rng.sample::<f64, _>(StandardNormal)
        })?;
        let (vpath, _) = viterbi_best_path(&raw, &ce_scores)?;
        let reference = vpath.word_sequence().to_vec();
        let num_lat = restrict_to_word_sequences(&raw, &[reference].into_iter().collect())?;
        let det = determinize_best_alignment(&raw, &ce_scores)?;
        let (fixed, _) = viterbi_best_path(&num_lat, &ce_scores)?;
        let mode = NumeratorMode::ALL[i % 3];
        let spec = NumeratorSpec::from_parts(mode, Some(fixed), Some(num_lat.clone()))?;
        let draw = rng.random();
        let targets = [
            (
                "true_mmi",
                GradientTarget::True {
                    numerator: &num_lat,
                    denominator: &raw,
                },
            ),
            (
                "baseline_lattice_mmi",
                GradientTarget::Baseline {
                    numerator: &spec,
                    det: &det,
                    seed: draw,
                },
            ),
            (
                "otf_mmi",
                GradientTarget::Otf {
                    numerator: &spec,
                    raw: &raw,
                    seed: draw,
                },
            ),
        ];
        for (name, target) in targets {
            let offset = if corrupt && i == 0 { 1e-2 } else { 0.0 };
            let r = finite_difference_check(&target, &scores, offset)?;
            *skipped.get_mut(name).expect("known objective") += r.skipped;
            trackers.get_mut(name).expect("known objective").record(
                r.max_rel_error,
                r.max_rel_error > FD_TOLERANCE,
                || format!("instance seed {inst_seed}, numerator {mode}"),
            );
        }
    }
    Ok(VerifyReport {
        suite: Suite::Gradient,
        seed,
        corrupted: corrupt,
        checks: trackers.into_values().map(Tracker::done).collect(),
        skipped_unstable: skipped,
    })
}

pub fn run_suite(suite: Suite, seed: u64, corrupt: bool) -> Result<VerifyReport, VerifyError> {
    match suite {
        Suite::Oracle => oracle_suite(seed, 200, corrupt),
        Suite::Theorem => theorem_suite(seed, 20, corrupt),
        Suite::Gradient => gradient_suite(seed, 50, corrupt),
    }
}
