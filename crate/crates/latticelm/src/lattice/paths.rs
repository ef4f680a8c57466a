//! Path operations on lattices: best path, n-best, sampling, enumeration,
//! and total probability mass.
//!
//! All operations score arcs through a [`ScaleConfig`] and treat scores as
//! natural-log probabilities, higher better. Where scores tie, paths are
//! ordered by their arc-index sequences lexicographically, which makes
//! every operation deterministic. (Two distinct paths between the same
//! states in an acyclic graph can never be arc-sequence prefixes of one
//! another, so the lexicographic order is well defined under extension.)

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use super::{Lattice, StateId};
use crate::config::ScaleConfig;
use crate::numeric::log_add;
use crate::seeds::rng_for;
use crate::{Error, Result};

/// A complete path through a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// Arc indices into `lattice.arcs`, in traversal order.
    pub arcs: Vec<usize>,
    /// Non-epsilon labels along the path.
    pub words: Vec<String>,
    /// Sum of combined arc scores.
    pub score: f64,
}

impl Path {
    fn from_arcs(lattice: &Lattice, scores: &[f64], arcs: Vec<usize>) -> Path {
        let words = arcs
            .iter()
            .filter(|&&ai| !lattice.arcs[ai].is_epsilon())
            .map(|&ai| lattice.arcs[ai].label.clone())
            .collect();
        let score = arcs.iter().map(|&ai| scores[ai]).sum();
        Path { arcs, words, score }
    }
}

fn no_path(lattice: &Lattice) -> Error {
    Error::NoCompletePath {
        utt_id: lattice.utt_id.clone(),
    }
}

/// Highest-scoring complete path; score ties resolved toward the
/// lexicographically smallest arc-index sequence.
pub fn best_path(lattice: &Lattice, scales: &ScaleConfig) -> Result<Path> {
    scales.validate()?;
    let scores = lattice.combined_scores(scales);
    best_path_scored(lattice, &scores)
}

pub(crate) fn best_path_scored(lattice: &Lattice, scores: &[f64]) -> Result<Path> {
    let order = lattice.topological_order()?;
    let out = lattice.out_arcs();
    // Per state: best (score, arc sequence) so far.
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; lattice.num_states as usize];
    best[0] = Some((0.0, Vec::new()));
    for &s in &order {
        let Some((score, seq)) = best[s as usize].clone() else {
            continue;
        };
        for &ai in &out[s as usize] {
            let dst = lattice.arcs[ai].dst as usize;
            let cand_score = score + scores[ai];
            let better = match &best[dst] {
                None => true,
                Some((s2, seq2)) => {
                    cand_score > *s2
                        || (cand_score == *s2 && {
                            let mut cand = seq.clone();
                            cand.push(ai);
                            cand < *seq2
                        })
                }
            };
            if better {
                let mut cand = seq.clone();
                cand.push(ai);
                best[dst] = Some((cand_score, cand));
            }
        }
    }
    let mut winner: Option<(f64, Vec<usize>)> = None;
    for &f in &lattice.finals {
        if let Some((score, seq)) = &best[f as usize] {
            let better = match &winner {
                None => true,
                Some((ws, wseq)) => score > ws || (score == ws && seq < wseq),
            };
            if better {
                winner = Some((*score, seq.clone()));
            }
        }
    }
    match winner {
        Some((_, seq)) => Ok(Path::from_arcs(lattice, scores, seq)),
        None => Err(no_path(lattice)),
    }
}

/// Log of the total probability mass of all complete paths:
/// `log sum over paths of exp(path score)`.
pub fn total_logprob(lattice: &Lattice, scales: &ScaleConfig) -> Result<f64> {
    scales.validate()?;
    let scores = lattice.combined_scores(scales);
    total_logprob_scored(lattice, &scores)
}

pub(crate) fn total_logprob_scored(lattice: &Lattice, scores: &[f64]) -> Result<f64> {
    let order = lattice.topological_order()?;
    let out = lattice.out_arcs();
    let mut alpha = vec![f64::NEG_INFINITY; lattice.num_states as usize];
    alpha[0] = 0.0;
    for &s in &order {
        let a = alpha[s as usize];
        if a == f64::NEG_INFINITY {
            continue;
        }
        for &ai in &out[s as usize] {
            let dst = lattice.arcs[ai].dst as usize;
            alpha[dst] = log_add(alpha[dst], a + scores[ai]);
        }
    }
    let total = lattice
        .finals
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &f| log_add(acc, alpha[f as usize]));
    if total == f64::NEG_INFINITY {
        Err(no_path(lattice))
    } else {
        Ok(total)
    }
}

/// Max-plus backward scores: best completion score from each state
/// (0 at a final state), -inf where no final is reachable.
fn backward_max(lattice: &Lattice, scores: &[f64], order: &[StateId]) -> Vec<f64> {
    let out = lattice.out_arcs();
    let mut beta = vec![f64::NEG_INFINITY; lattice.num_states as usize];
    for &s in order.iter().rev() {
        let mut b = if lattice.finals.contains(&s) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        for &ai in &out[s as usize] {
            let v = scores[ai] + beta[lattice.arcs[ai].dst as usize];
            if v > b {
                b = v;
            }
        }
        beta[s as usize] = b;
    }
    beta
}

/// Log-sum backward scores: log mass of all completions from each state.
fn backward_sum(lattice: &Lattice, scores: &[f64], order: &[StateId]) -> Vec<f64> {
    let out = lattice.out_arcs();
    let mut beta = vec![f64::NEG_INFINITY; lattice.num_states as usize];
    for &s in order.iter().rev() {
        let mut b = if lattice.finals.contains(&s) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        for &ai in &out[s as usize] {
            b = log_add(b, scores[ai] + beta[lattice.arcs[ai].dst as usize]);
        }
        beta[s as usize] = b;
    }
    beta
}

/// Queue entry for n-best search, ordered so the max-heap pops the highest
/// estimate first and, among equal estimates, the lexicographically
/// smallest arc sequence.
struct NBestEntry {
    estimate: f64,
    seq: Vec<usize>,
    state: StateId,
    score: f64,
    complete: bool,
}

impl PartialEq for NBestEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for NBestEntry {}
impl PartialOrd for NBestEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NBestEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.estimate
            .total_cmp(&other.estimate)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// The `n` highest-scoring distinct complete paths, in non-increasing
/// score order, equal scores ordered by arc sequence. Returns fewer than
/// `n` if the lattice has fewer complete paths.
///
/// A* over partial paths with the exact max-plus completion bound as the
/// (consistent, exact) heuristic, so each popped complete path is emitted
/// in order and no pruning is approximate.
pub fn nbest_paths(lattice: &Lattice, n: usize, scales: &ScaleConfig) -> Result<Vec<Path>> {
    scales.validate()?;
    let scores = lattice.combined_scores(scales);
    nbest_paths_scored(lattice, n, &scores)
}

pub(crate) fn nbest_paths_scored(
    lattice: &Lattice,
    n: usize,
    scores: &[f64],
) -> Result<Vec<Path>> {
    let order = lattice.topological_order()?;
    let beta = backward_max(lattice, scores, &order);
    if beta[0] == f64::NEG_INFINITY {
        return Err(no_path(lattice));
    }
    let mut results = Vec::new();
    if n == 0 {
        return Ok(results);
    }
    let out = lattice.out_arcs();
    let mut queue: BinaryHeap<NBestEntry> = BinaryHeap::new();
    queue.push(NBestEntry {
        estimate: beta[0],
        seq: Vec::new(),
        state: 0,
        score: 0.0,
        complete: false,
    });
    while let Some(entry) = queue.pop() {
        if entry.complete {
            results.push(Path::from_arcs(lattice, scores, entry.seq));
            if results.len() == n {
                break;
            }
            continue;
        }
        if lattice.finals.contains(&entry.state) {
            queue.push(NBestEntry {
                estimate: entry.score,
                seq: entry.seq.clone(),
                state: entry.state,
                score: entry.score,
                complete: true,
            });
        }
        for &ai in &out[entry.state as usize] {
            let dst = lattice.arcs[ai].dst;
            if beta[dst as usize] == f64::NEG_INFINITY {
                continue;
            }
            let score = entry.score + scores[ai];
            let mut seq = entry.seq.clone();
            seq.push(ai);
            queue.push(NBestEntry {
                estimate: score + beta[dst as usize],
                seq,
                state: dst,
                score,
                complete: false,
            });
        }
    }
    Ok(results)
}

/// Draw `k` complete paths independently from the posterior implied by the
/// combined scores. Deterministic for a fixed `(lattice, k, scales, seed)`.
pub fn sample_paths(
    lattice: &Lattice,
    k: usize,
    scales: &ScaleConfig,
    seed: u64,
) -> Result<Vec<Path>> {
    scales.validate()?;
    let scores = lattice.combined_scores(scales);
    let order = lattice.topological_order()?;
    let beta = backward_sum(lattice, &scores, &order);
    if beta[0] == f64::NEG_INFINITY {
        return Err(no_path(lattice));
    }
    let out = lattice.out_arcs();
    let mut rng = rng_for(seed, "sample-paths", 0);
    let mut paths = Vec::with_capacity(k);
    for _ in 0..k {
        let mut seq = Vec::new();
        let mut state = 0 as StateId;
        loop {
            // Options at `state`: stop (if final), or take an out-arc; the
            // backward sums make these exact posterior probabilities.
            let beta_s = beta[state as usize];
            let mut u: f64 = rng.random::<f64>();
            if lattice.finals.contains(&state) {
                u -= (-beta_s).exp();
                if u < 0.0 {
                    break;
                }
            }
            let mut chosen = None;
            for &ai in &out[state as usize] {
                let d = lattice.arcs[ai].dst as usize;
                if beta[d] == f64::NEG_INFINITY {
                    continue;
                }
                let p = (scores[ai] + beta[d] - beta_s).exp();
                u -= p;
                chosen = Some(ai);
                if u < 0.0 {
                    break;
                }
            }
            // Rounding can leave a sliver of u; the last viable arc absorbs it.
            let ai = chosen.expect("a state with no stop and no viable arc is unreachable");
            seq.push(ai);
            state = lattice.arcs[ai].dst;
        }
        paths.push(Path::from_arcs(lattice, &scores, seq));
    }
    Ok(paths)
}

/// Every complete path, in lexicographic arc-sequence order. Errors if the
/// lattice holds more than `max_paths` paths.
pub fn enumerate_paths(
    lattice: &Lattice,
    scales: &ScaleConfig,
    max_paths: usize,
) -> Result<Vec<Path>> {
    scales.validate()?;
    let scores = lattice.combined_scores(scales);
    enumerate_paths_scored(lattice, &scores, max_paths)
}

pub(crate) fn enumerate_paths_scored(
    lattice: &Lattice,
    scores: &[f64],
    max_paths: usize,
) -> Result<Vec<Path>> {
    lattice.topological_order()?;
    let out = lattice.out_arcs();
    let mut results = Vec::new();
    let mut stack = Vec::new();
    dfs(lattice, scores, &out, 0, &mut stack, &mut results, max_paths)?;
    if results.is_empty() {
        return Err(no_path(lattice));
    }
    Ok(results)
}

fn dfs(
    lattice: &Lattice,
    scores: &[f64],
    out: &[Vec<usize>],
    state: StateId,
    stack: &mut Vec<usize>,
    results: &mut Vec<Path>,
    max_paths: usize,
) -> Result<()> {
    if lattice.finals.contains(&state) {
        if results.len() >= max_paths {
            return Err(Error::InvalidArgument(format!(
                "lattice '{}' has more than {max_paths} complete paths",
                lattice.utt_id
            )));
        }
        results.push(Path::from_arcs(lattice, scores, stack.clone()));
    }
    for &ai in &out[state as usize] {
        stack.push(ai);
        dfs(lattice, scores, out, lattice.arcs[ai].dst, stack, results, max_paths)?;
        stack.pop();
    }
    Ok(())
}
