//! Expected edit distance over a lattice posterior, and its gradient in
//! arc scores.
//!
//! With combined arc scores `w(a)` defining the path posterior
//! `P(path) = exp(sum w) / Z` and integer per-arc edit costs summing to
//! each path's loss, the expectation `E = sum over paths of P * loss`
//! and all per-arc quantities come from one forward-backward pass in a
//! first-order expectation semiring, carried in normalised (log mass,
//! conditional mean) form for stability:
//!
//! - forward: `alpha(s)` log mass from the start, `m(s)` the expected
//!   cost so far given arrival at `s`;
//! - backward: `beta(s)` log mass to the finals, `n(s)` the expected
//!   remaining cost given departure from `s`;
//! - per arc: posterior `gamma(a)` and conditional full-path cost
//!   `r(a) = m(src) + cost(a) + n(dst)`.
//!
//! The gradient of `E` in the score of arc `a` is
//! `gamma(a) * (r(a) - E)`: raising the score of an arc whose paths are
//! worse than average raises the expected loss in proportion to how much
//! posterior mass the arc carries.

mod train;

pub use train::{
    expected_wer, finetune_embr, history_trees, metrics_to_tsv, prepare_eval_items, prepare_items,
    rescored_counts, rescored_wer, total_loss, total_loss_and_grads, total_loss_frozen, EpochMetrics,
    EvalItem, LossBreakdown, TrainItem,
};

use crate::config::ScaleConfig;
use crate::lattice::Lattice;
use crate::numeric::{log_add, logsumexp};
use crate::{Error, Result};

/// Forward-backward results; vectors are indexed by state or by arc.
#[derive(Debug, Clone)]
pub struct ExpectationStats {
    pub expected_loss: f64,
    pub total_logprob: f64,
    /// Arc posterior probabilities.
    pub gamma: Vec<f64>,
    /// Expected full-path cost conditioned on using each arc.
    pub cond_loss: Vec<f64>,
    pub log_alpha: Vec<f64>,
    pub loss_fwd: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub loss_bwd: Vec<f64>,
}

impl ExpectationStats {
    /// `d expected_loss / d score(a)` for every arc.
    pub fn arc_gradients(&self) -> Vec<f64> {
        self.gamma
            .iter()
            .zip(self.cond_loss.iter())
            .map(|(&g, &r)| g * (r - self.expected_loss))
            .collect()
    }
}

/// Expected edit distance of a fully costed lattice under `scales`.
pub fn expected_edit_distance(lattice: &Lattice, scales: &ScaleConfig) -> Result<ExpectationStats> {
    scales.validate()?;
    lattice.require_valid()?;
    let costs = arc_costs(lattice)?;
    let scores = lattice.combined_scores(scales);
    expected_edit_distance_scored(lattice, &scores, &costs)
}

fn arc_costs(lattice: &Lattice) -> Result<Vec<f64>> {
    lattice
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            a.edit_cost.map(f64::from).ok_or_else(|| {
                Error::invalid_lattice(
                    &lattice.utt_id,
                    format!("arc {i} has no edit cost; annotate the lattice first"),
                )
            })
        })
        .collect()
}

/// Core forward-backward on explicit scores and costs. The lattice must
/// already be valid.
pub(crate) fn expected_edit_distance_scored(
    lattice: &Lattice,
    scores: &[f64],
    costs: &[f64],
) -> Result<ExpectationStats> {
    let order = lattice.topological_order()?;
    let n = lattice.num_states as usize;
    let out = lattice.out_arcs();

    // Forward.
    let mut log_alpha = vec![f64::NEG_INFINITY; n];
    let mut loss_fwd = vec![0.0; n];
    log_alpha[0] = 0.0;
    for &s in &order {
        let si = s as usize;
        if log_alpha[si] == f64::NEG_INFINITY {
            continue;
        }
        for &ai in &out[si] {
            let di = lattice.arcs[ai].dst as usize;
            let lp = log_alpha[si] + scores[ai];
            let value = loss_fwd[si] + costs[ai];
            let merged = log_add(log_alpha[di], lp);
            // Weighted mean of the old mean and the new contribution.
            loss_fwd[di] = loss_fwd[di] * (log_alpha[di] - merged).exp()
                + value * (lp - merged).exp();
            log_alpha[di] = merged;
        }
    }
    let final_logs: Vec<f64> = lattice
        .finals
        .iter()
        .map(|&f| log_alpha[f as usize])
        .collect();
    let total_logprob = logsumexp(&final_logs);
    if total_logprob == f64::NEG_INFINITY {
        return Err(Error::NoCompletePath {
            utt_id: lattice.utt_id.clone(),
        });
    }
    let expected_loss: f64 = lattice
        .finals
        .iter()
        .map(|&f| {
            let fi = f as usize;
            (log_alpha[fi] - total_logprob).exp() * loss_fwd[fi]
        })
        .sum();

    // Backward.
    let mut log_beta = vec![f64::NEG_INFINITY; n];
    let mut loss_bwd = vec![0.0; n];
    for &s in order.iter().rev() {
        let si = s as usize;
        let mut lb = if lattice.finals.contains(&s) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        let mut vb = 0.0;
        for &ai in &out[si] {
            let di = lattice.arcs[ai].dst as usize;
            if log_beta[di] == f64::NEG_INFINITY {
                continue;
            }
            let lp = scores[ai] + log_beta[di];
            let value = costs[ai] + loss_bwd[di];
            let merged = log_add(lb, lp);
            vb = vb * (lb - merged).exp() + value * (lp - merged).exp();
            lb = merged;
        }
        log_beta[si] = lb;
        loss_bwd[si] = vb;
    }

    // Per-arc posterior and conditional loss.
    let mut gamma = Vec::with_capacity(lattice.arcs.len());
    let mut cond_loss = Vec::with_capacity(lattice.arcs.len());
    for (ai, arc) in lattice.arcs.iter().enumerate() {
        let si = arc.src as usize;
        let di = arc.dst as usize;
        let lg = log_alpha[si] + scores[ai] + log_beta[di] - total_logprob;
        if lg == f64::NEG_INFINITY {
            gamma.push(0.0);
            cond_loss.push(0.0);
        } else {
            gamma.push(lg.exp());
            cond_loss.push(loss_fwd[si] + costs[ai] + loss_bwd[di]);
        }
    }

    Ok(ExpectationStats {
        expected_loss,
        total_logprob,
        gamma,
        cond_loss,
        log_alpha,
        loss_fwd,
        log_beta,
        loss_bwd,
    })
}

fn path_cost(lattice: &Lattice, arcs: &[usize]) -> f64 {
    arcs.iter()
        .map(|&ai| f64::from(lattice.arcs[ai].edit_cost.expect("checked costed")))
        .sum()
}

/// Monte-Carlo estimate of the expected edit distance: the mean cost of
/// `k` posterior path samples. Deterministic per seed.
pub fn sampled_expected_loss(
    lattice: &Lattice,
    k: usize,
    scales: &ScaleConfig,
    seed: u64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "a sampled estimate needs at least one path".into(),
        ));
    }
    lattice.require_valid()?;
    arc_costs(lattice)?;
    let paths = crate::lattice::sample_paths(lattice, k, scales, seed)?;
    Ok(paths.iter().map(|p| path_cost(lattice, &p.arcs)).sum::<f64>() / k as f64)
}

/// N-best estimate of the expected edit distance: the posterior
/// renormalised over the `n` best paths.
pub fn nbest_expected_loss(lattice: &Lattice, n: usize, scales: &ScaleConfig) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "an n-best estimate needs at least one path".into(),
        ));
    }
    lattice.require_valid()?;
    arc_costs(lattice)?;
    let paths = crate::lattice::nbest_paths(lattice, n, scales)?;
    let log_scores: Vec<f64> = paths.iter().map(|p| p.score).collect();
    let norm = logsumexp(&log_scores);
    Ok(paths
        .iter()
        .map(|p| (p.score - norm).exp() * path_cost(lattice, &p.arcs))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use approx::assert_relative_eq;

    fn scales() -> ScaleConfig {
        ScaleConfig::default()
    }

    /// Single path with total cost 4.
    fn single_path() -> Lattice {
        let mut l = Lattice::new("one", 3).unwrap();
        l.add_arc(0, 1, "a", -1.0, -0.5, Some(3));
        l.add_arc(1, 2, "b", -0.2, -0.1, Some(1));
        l.finals.insert(2);
        l
    }

    /// Two arcs with explicit posterior p vs 1-p and costs 1 and 3.
    fn two_path(p: f64) -> Lattice {
        let mut l = Lattice::new("two", 2).unwrap();
        l.add_arc(0, 1, "x", p.ln(), 0.0, Some(1));
        l.add_arc(0, 1, "y", (1.0 - p).ln(), 0.0, Some(3));
        l.finals.insert(1);
        l
    }

    #[test]
    fn single_path_expectation_is_its_cost() {
        let stats = expected_edit_distance(&single_path(), &scales()).unwrap();
        assert_relative_eq!(stats.expected_loss, 4.0, epsilon = 1e-12);
        // One path: every arc has posterior 1 and conditional loss 4.
        for (g, r) in stats.gamma.iter().zip(stats.cond_loss.iter()) {
            assert_relative_eq!(*g, 1.0, epsilon = 1e-12);
            assert_relative_eq!(*r, 4.0, epsilon = 1e-12);
        }
        // And the gradient vanishes identically.
        for g in stats.arc_gradients() {
            assert_relative_eq!(g, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn equiprobable_costs_average() {
        let stats = expected_edit_distance(&two_path(0.5), &scales()).unwrap();
        assert_relative_eq!(stats.expected_loss, 2.0, epsilon = 1e-12);
        assert_relative_eq!(stats.total_logprob, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn two_path_gradient_closed_form() {
        // E = p*1 + (1-p)*3; gamma = (p, 1-p), r = (1, 3).
        let p = 0.3;
        let stats = expected_edit_distance(&two_path(p), &scales()).unwrap();
        let e = p * 1.0 + (1.0 - p) * 3.0;
        assert_relative_eq!(stats.expected_loss, e, epsilon = 1e-12);
        let g = stats.arc_gradients();
        assert_relative_eq!(g[0], p * (1.0 - e), epsilon = 1e-12);
        assert_relative_eq!(g[1], (1.0 - p) * (3.0 - e), epsilon = 1e-12);
        // Gradients over any cut sum to zero (here: all arcs).
        assert_relative_eq!(g[0] + g[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_decomposes_expected_loss() {
        let l = two_path(0.25);
        let stats = expected_edit_distance(&l, &scales()).unwrap();
        let via_arcs: f64 = stats
            .gamma
            .iter()
            .zip(l.arcs.iter())
            .map(|(g, a)| g * f64::from(a.edit_cost.unwrap()))
            .sum();
        assert_relative_eq!(via_arcs, stats.expected_loss, epsilon = 1e-12);
    }

    #[test]
    fn uncosted_lattice_rejected() {
        let mut l = single_path();
        l.arcs[1].edit_cost = None;
        assert!(expected_edit_distance(&l, &scales()).is_err());
        assert!(sampled_expected_loss(&l, 5, &scales(), 0).is_err());
        assert!(nbest_expected_loss(&l, 5, &scales()).is_err());
    }

    #[test]
    fn sampled_single_path_is_exact() {
        let v = sampled_expected_loss(&single_path(), 7, &scales(), 3).unwrap();
        assert_relative_eq!(v, 4.0, epsilon = 1e-12);
        assert!(sampled_expected_loss(&single_path(), 0, &scales(), 3).is_err());
    }

    #[test]
    fn sampled_is_deterministic_per_seed() {
        let l = two_path(0.5);
        let a = sampled_expected_loss(&l, 100, &scales(), 5).unwrap();
        let b = sampled_expected_loss(&l, 100, &scales(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nbest_covering_all_paths_is_exact() {
        let l = two_path(0.3);
        let exact = expected_edit_distance(&l, &scales()).unwrap().expected_loss;
        let est = nbest_expected_loss(&l, 10, &scales()).unwrap();
        assert_relative_eq!(est, exact, epsilon = 1e-12);
    }

    #[test]
    fn nbest_one_is_best_path_cost() {
        let l = two_path(0.9);
        // Best path is the cost-1 arc.
        assert_relative_eq!(nbest_expected_loss(&l, 1, &scales()).unwrap(), 1.0);
    }
}
