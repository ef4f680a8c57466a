//! Shared helpers for the integration suites: a bounded random-DAG
//! generator and a brute-force enumeration oracle for expected loss and
//! arc posteriors. The oracle deliberately avoids the library's
//! forward-backward code path: it enumerates every complete path and sums
//! softmax terms directly, so agreement is evidence, not circularity.
#![allow(dead_code)]

use std::collections::BTreeSet;

use latticelm::config::{ScaleConfig, TrainConfig};
use latticelm::edit::annotate_lattice;
use latticelm::embr::expected_edit_distance;
use latticelm::harness::pipeline::ExperimentConfig;
use latticelm::harness::synth::SynthSpec;
use latticelm::lattice::{enumerate_paths, Lattice, Path};
use latticelm::rnn::NceTrainConfig;
use latticelm::seeds::rng_for;
use rand::Rng;

pub const WORD_POOL: [&str; 6] = ["red", "green", "blue", "cyan", "plum", "teal"];

/// Stable log-sum-exp, kept separate from the library's numerics on
/// purpose.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Complete-path count of an acyclic lattice, exact in u128.
pub fn count_paths(lat: &Lattice) -> u128 {
    let order = lat.topological_order().expect("acyclic");
    let out = lat.out_arcs();
    let mut c = vec![0u128; lat.num_states as usize];
    for &s in order.iter().rev() {
        let si = s as usize;
        let mut v = u128::from(lat.finals.contains(&s));
        for &ai in &out[si] {
            v += c[lat.arcs[ai].dst as usize];
        }
        c[si] = v;
    }
    c[0]
}

/// A random acyclic lattice with at most 200 complete paths, plus a random
/// reference transcript. The shape is a chain 0 → 1 → ... → n−1 with one
/// to three parallel arcs per step, occasional skip arcs, occasional
/// epsilon labels, and sometimes a second final state. Deterministic in
/// `seed`.
pub fn random_lattice(seed: u64) -> (Lattice, Vec<String>) {
    for attempt in 0.. {
        let mut rng = rng_for(seed, "test-dag", attempt);
        let n: u32 = rng.random_range(4..10);
        let mut lat = Lattice::new(format!("dag-{seed:05}"), n).expect("n > 0");
        let pick_label = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            if rng.random_bool(0.15) {
                "<eps>".to_string()
            } else {
                WORD_POOL[rng.random_range(0..WORD_POOL.len())].to_string()
            }
        };
        for i in 0..n - 1 {
            let parallel = rng.random_range(1..=3);
            for _ in 0..parallel {
                let label = pick_label(&mut rng);
                let am = -2.0 * rng.random::<f64>();
                let lm = -1.5 * rng.random::<f64>();
                lat.add_arc(i, i + 1, label, am, lm, None);
            }
            for j in [i + 2, i + 3] {
                if j < n && rng.random_bool(0.3) {
                    let label = pick_label(&mut rng);
                    let am = -2.0 * rng.random::<f64>();
                    let lm = -1.5 * rng.random::<f64>();
                    lat.add_arc(i, j, label, am, lm, None);
                }
            }
        }
        lat.finals.insert(n - 1);
        if n >= 6 && rng.random_bool(0.25) {
            lat.finals.insert(n - 2);
        }
        let ref_len = rng.random_range(2..=6);
        let reference: Vec<String> = (0..ref_len)
            .map(|_| WORD_POOL[rng.random_range(0..WORD_POOL.len())].to_string())
            .collect();
        let paths = count_paths(&lat);
        if paths >= 1 && paths <= 200 {
            assert!(lat.validate().is_empty(), "generator produced a defective lattice");
            return (lat, reference);
        }
    }
    unreachable!("the retry loop always terminates by returning");
}

/// [`random_lattice`] annotated against its reference: every arc carries
/// an exact edit cost and the lattice ends in a single epsilon-reached
/// final state.
pub fn random_costed_lattice(seed: u64) -> (Lattice, Vec<String>) {
    let (lat, reference) = random_lattice(seed);
    let annotated = annotate_lattice(&lat, &reference).expect("generated lattices are valid");
    (annotated.lattice, reference)
}

/// A raw random lattice (possibly multi-final) with arbitrary small edit
/// costs on every arc. The costs are not true edit distances; semiring
/// identities must hold for any costs.
pub fn random_arbitrary_cost_lattice(seed: u64) -> Lattice {
    let (mut lat, _) = random_lattice(seed);
    let mut rng = rng_for(seed, "test-cost", 0);
    for arc in &mut lat.arcs {
        arc.edit_cost = Some(rng.random_range(0..=3));
    }
    lat
}

/// Sum of the per-arc edit costs along a path; the quantity criterion 2
/// pins to the direct Levenshtein distance.
pub fn path_cost(lat: &Lattice, path: &Path) -> u32 {
    path.arcs
        .iter()
        .map(|&ai| lat.arcs[ai].edit_cost.expect("costed lattice"))
        .sum()
}

/// Brute-force expectations from full path enumeration.
pub struct EnumOracle {
    pub expected: f64,
    pub total_logprob: f64,
    /// Posterior mass on each arc.
    pub gamma: Vec<f64>,
    /// d expected / d score(arc), via per-path softmax terms.
    pub grads: Vec<f64>,
    pub paths: Vec<Path>,
}

pub fn enumeration_oracle(lat: &Lattice, scales: &ScaleConfig) -> EnumOracle {
    let paths = enumerate_paths(lat, scales, 100_000).expect("oracle lattices stay enumerable");
    let scores: Vec<f64> = paths.iter().map(|p| p.score).collect();
    let z = logsumexp(&scores);
    let probs: Vec<f64> = scores.iter().map(|s| (s - z).exp()).collect();
    let costs: Vec<f64> = paths.iter().map(|p| f64::from(path_cost(lat, p))).collect();
    let expected: f64 = probs.iter().zip(&costs).map(|(p, c)| p * c).sum();
    let mut gamma = vec![0.0; lat.arcs.len()];
    let mut mass_cost = vec![0.0; lat.arcs.len()];
    for ((path, &p), &c) in paths.iter().zip(&probs).zip(&costs) {
        for &ai in &path.arcs {
            gamma[ai] += p;
            mass_cost[ai] += p * c;
        }
    }
    let grads: Vec<f64> = gamma
        .iter()
        .zip(&mass_cost)
        .map(|(&g, &mc)| mc - g * expected)
        .collect();
    EnumOracle {
        expected,
        total_logprob: z,
        gamma,
        grads,
        paths,
    }
}

/// Central finite difference of the expected loss in one arc's combined
/// score, realised by perturbing the acoustic score.
pub fn fd_arc_gradient(lat: &Lattice, arc: usize, scales: &ScaleConfig, eps: f64) -> f64 {
    let delta = eps / (scales.kappa * scales.am_scale);
    let mut plus = lat.clone();
    plus.arcs[arc].am_logp += delta;
    let mut minus = lat.clone();
    minus.arcs[arc].am_logp -= delta;
    let ep = expected_edit_distance(&plus, scales).expect("valid lattice").expected_loss;
    let em = expected_edit_distance(&minus, scales).expect("valid lattice").expected_loss;
    (ep - em) / (2.0 * eps)
}

/// Relative disagreement with a guard against vanishing denominators:
/// differences below `floor` count as exact agreement.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// The scale configurations the exactness suites cycle through.
pub fn scale_variants() -> Vec<ScaleConfig> {
    vec![
        ScaleConfig::default(),
        ScaleConfig {
            am_scale: 1.0,
            lm_scale: 0.7,
            kappa: 0.5,
        },
        ScaleConfig {
            am_scale: 0.6,
            lm_scale: 1.3,
            kappa: 1.0,
        },
    ]
}

/// A desk-micro experiment: seconds to prepare, large enough for the
/// pipeline mechanics (and finite-difference toy batches) to be real.
pub fn micro_experiment_config() -> ExperimentConfig {
    ExperimentConfig {
        synth: SynthSpec {
            vocab_size: 12,
            mean_len: 4.0,
            preferred_successors: 3,
            preferred_mass: 0.6,
            confusion_size: 3,
            branching: 2,
            ..SynthSpec::default()
        },
        n_lm_train: 60,
        n_lm_valid: 15,
        n_lat_train: 12,
        n_lat_test: 6,
        ngram_order: 2,
        nce: NceTrainConfig {
            dim: 8,
            epochs: 2,
            ..NceTrainConfig::default()
        },
        train: TrainConfig {
            epochs: 1,
            batch_size: 8,
            learning_rate: 0.02,
            ..TrainConfig::default()
        },
    }
    .with_seed(11)
}

/// Topological positions of every state, for positional-cut checks.
pub fn topo_positions(lat: &Lattice) -> Vec<usize> {
    let order = lat.topological_order().expect("acyclic");
    let mut pos = vec![0usize; lat.num_states as usize];
    for (i, &s) in order.iter().enumerate() {
        pos[s as usize] = i;
    }
    pos
}

/// Assert that the posterior mass crossing every positional cut of a
/// single-final lattice sums to one. Requires the (unique) final state to
/// sit last in topological order, which holds for annotated lattices.
pub fn assert_cut_sums(lat: &Lattice, gamma: &[f64], tol: f64) {
    let finals: BTreeSet<_> = lat.finals.iter().cloned().collect();
    assert_eq!(finals.len(), 1, "cut sums only hold for single-final lattices");
    let pos = topo_positions(lat);
    let final_pos = pos[*finals.iter().next().unwrap() as usize];
    assert_eq!(final_pos, lat.num_states as usize - 1, "final must be topologically last");
    for t in 1..lat.num_states as usize {
        let crossing: f64 = lat
            .arcs
            .iter()
            .zip(gamma)
            .filter(|(a, _)| pos[a.src as usize] < t && pos[a.dst as usize] >= t)
            .map(|(_, &g)| g)
            .sum();
        assert!(
            (crossing - 1.0).abs() <= tol,
            "cut {t} of '{}' sums to {crossing}, expected 1",
            lat.utt_id
        );
    }
}
