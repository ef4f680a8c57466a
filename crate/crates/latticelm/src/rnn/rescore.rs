//! Lattice rescoring under the best-score history approximation.
//!
//! An expanded lattice already distinguishes states by their recent word
//! history, but a recurrent model conditions on the unbounded past. The
//! approximation keeps exactly one hidden state per lattice state: the one
//! propagated along the highest-scoring incoming arc (by interpolated
//! combined score, computed incrementally in topological order), ties
//! broken by smallest arc index. Every arc is then scored from its source
//! state's single hidden state.
//!
//! Word arcs get the model score of their word; the epsilon arcs into the
//! single final state stand for the sentence end and get the `</s>` score;
//! other epsilon arcs carry no word and keep a zero language-model score.
//! The recurrent and n-gram scores interpolate in probability space:
//! `new_lm = ln(w_rnn e^rnn + w_ng e^ng)`.

use ndarray::Array1;

use super::{RnnLm, StepTrace};
use crate::config::{InterpWeights, ScaleConfig};
use crate::lattice::{Lattice, StateId};
use crate::vocab::WordId;
use crate::{Error, Result};

/// Which incoming arc supplied each state's hidden state; `None` for the
/// start state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTree {
    pub chosen_arc: Vec<Option<usize>>,
}

/// Result of rescoring: the lattice with interpolated language-model
/// scores, and the history tree that produced the hidden states.
#[derive(Debug, Clone)]
pub struct RescoreOutput {
    pub lattice: Lattice,
    pub tree: HistoryTree,
}

/// Full forward state kept for training.
#[derive(Debug)]
pub(crate) struct RescoreForward {
    /// Hidden state per lattice state.
    pub(crate) hidden: Vec<Array1<f64>>,
    /// GRU trace that produced each state's hidden: `Some` for the start
    /// state (a step over `<s>` from zeros) and for states entered along a
    /// word arc; `None` where the hidden was copied along an epsilon arc.
    pub(crate) traces: Vec<Option<StepTrace>>,
    /// Per arc: the word the model scores on it (`</s>` on end arcs),
    /// or `None` for internal epsilon arcs.
    pub(crate) arc_word: Vec<Option<WordId>>,
    /// Per arc: interpolated language-model score (0 on internal epsilon).
    pub(crate) new_lm: Vec<f64>,
    /// Per arc: d(new_lm)/d(rnn score), in [0, 1]; 0 on internal epsilon.
    pub(crate) rho: Vec<f64>,
    pub(crate) tree: HistoryTree,
}

/// Check the expanded shape: one final state, every arc into it epsilon.
/// Returns the final state.
fn single_epsilon_final(lattice: &Lattice) -> Result<StateId> {
    if lattice.finals.len() != 1 {
        return Err(Error::invalid_lattice(
            &lattice.utt_id,
            format!(
                "rescoring needs an expanded lattice with one final state, found {}",
                lattice.finals.len()
            ),
        ));
    }
    let f = *lattice.finals.iter().next().expect("checked non-empty");
    for a in &lattice.arcs {
        if a.dst == f && !a.is_epsilon() {
            return Err(Error::invalid_lattice(
                &lattice.utt_id,
                "rescoring needs an expanded lattice: a word arc enters the final state",
            ));
        }
    }
    Ok(f)
}

/// Forward pass. With `fixed_tree` the hidden states follow the given
/// history tree (selection frozen); otherwise the best-score tree is
/// built on the fly.
pub(crate) fn rescore_forward(
    lattice: &Lattice,
    model: &RnnLm,
    interp: &InterpWeights,
    scales: &ScaleConfig,
    fixed_tree: Option<&HistoryTree>,
) -> Result<RescoreForward> {
    interp.validate()?;
    scales.validate()?;
    lattice.require_valid()?;
    let final_state = single_epsilon_final(lattice)?;
    let order = lattice.topological_order()?;
    let in_arcs = lattice.in_arcs();
    let n = lattice.num_states as usize;

    if let Some(tree) = fixed_tree {
        if tree.chosen_arc.len() != n {
            return Err(Error::InvalidArgument(
                "history tree does not match the lattice".into(),
            ));
        }
    }

    // Resolve each arc's scored word up front.
    let arc_word: Vec<Option<WordId>> = lattice
        .arcs
        .iter()
        .map(|a| {
            if a.is_epsilon() {
                (a.dst == final_state).then(|| model.eos())
            } else {
                Some(model.vocab.id(&a.label).unwrap_or_else(|| {
                    model.vocab.id(crate::vocab::UNK).expect("validated at construction")
                }))
            }
        })
        .collect();

    let ln_w_rnn = interp.w_rnn.ln(); // -inf at weight 0 is fine below
    let ln_w_ng = interp.w_ng.ln();

    let mut hidden: Vec<Option<Array1<f64>>> = vec![None; n];
    let mut traces: Vec<Option<StepTrace>> = (0..n).map(|_| None).collect();
    let mut new_lm = vec![0.0; lattice.arcs.len()];
    let mut rho = vec![0.0; lattice.arcs.len()];
    let mut chosen: Vec<Option<usize>> = vec![None; n];
    // Best incremental combined score from the start, for live selection.
    let mut fwd = vec![f64::NEG_INFINITY; n];

    for &s in &order {
        let si = s as usize;
        if s == 0 {
            let (h, trace) = model.step_traced(&model.zero_state(), model.bos());
            hidden[si] = Some(h);
            traces[si] = Some(trace);
            fwd[si] = 0.0;
            continue;
        }
        // Score every incoming arc from its (already computed) source.
        let mut best: Option<(f64, usize)> = None;
        for &ai in &in_arcs[si] {
            let arc = &lattice.arcs[ai];
            let src = arc.src as usize;
            let h_src = hidden[src]
                .as_ref()
                .expect("topological order computes sources first");
            let (lm, d) = match arc_word[ai] {
                Some(w) => {
                    let rnn = model.score(h_src, w);
                    let lm = crate::numeric::log_add(ln_w_rnn + rnn, ln_w_ng + arc.lm_logp);
                    (lm, (ln_w_rnn + rnn - lm).exp())
                }
                None => (0.0, 0.0),
            };
            new_lm[ai] = lm;
            rho[ai] = d;
            let cand = fwd[src] + scales.combine(arc.am_logp, lm);
            if best.is_none() || cand > best.expect("just checked").0 {
                best = Some((cand, ai));
            }
        }
        let (best_score, best_arc) = best.expect("valid lattices leave no state without arcs");
        fwd[si] = best_score;
        let pick = match fixed_tree {
            Some(tree) => {
                let ai = tree.chosen_arc[si].ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "history tree misses an arc for state {s}"
                    ))
                })?;
                if lattice.arcs.get(ai).map(|a| a.dst) != Some(s) {
                    return Err(Error::InvalidArgument(format!(
                        "history tree arc {ai} does not enter state {s}"
                    )));
                }
                ai
            }
            None => best_arc,
        };
        chosen[si] = Some(pick);
        let arc = &lattice.arcs[pick];
        let src = arc.src as usize;
        let h_src = hidden[src].as_ref().expect("sources first").clone();
        // End arcs are epsilon: they never extend the history.
        if arc.is_epsilon() {
            hidden[si] = Some(h_src);
        } else {
            let w = arc_word[pick].expect("word arcs carry a word");
            let (h, trace) = model.step_traced(&h_src, w);
            hidden[si] = Some(h);
            traces[si] = Some(trace);
        }
    }

    Ok(RescoreForward {
        hidden: hidden.into_iter().map(|h| h.expect("all states reachable")).collect(),
        traces,
        arc_word,
        new_lm,
        rho,
        tree: HistoryTree { chosen_arc: chosen },
    })
}

/// Rescore an expanded lattice: replace every language-model score with
/// the probability-space interpolation of the recurrent score and the
/// existing n-gram score.
pub fn rescore_lattice(
    lattice: &Lattice,
    model: &RnnLm,
    interp: &InterpWeights,
    scales: &ScaleConfig,
) -> Result<RescoreOutput> {
    let fwd = rescore_forward(lattice, model, interp, scales, None)?;
    let mut out = lattice.clone();
    for (i, arc) in out.arcs.iter_mut().enumerate() {
        arc.lm_logp = fwd.new_lm[i];
    }
    Ok(RescoreOutput {
        lattice: out,
        tree: fwd.tree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_paths;
    use crate::vocab::{Vocab, BOS, EOS, EPSILON, UNK};
    use approx::assert_relative_eq;

    fn model() -> RnnLm {
        let vocab = Vocab::from_words(&[BOS, EOS, UNK, "a", "b", "c"]).unwrap();
        RnnLm::new(vocab, 4, 77).unwrap()
    }

    /// Expanded-shaped linear lattice over the given words.
    fn linear(words: &[&str]) -> Lattice {
        let n = words.len() as StateId + 2;
        let mut l = Lattice::new("lin", n).unwrap();
        for (i, w) in words.iter().enumerate() {
            l.add_arc(i as StateId, i as StateId + 1, *w, -1.0, -0.4, None);
        }
        l.add_arc(n - 2, n - 1, EPSILON, 0.0, -0.6, None);
        l.finals.insert(n - 1);
        l
    }

    /// Model-only sentence score: each word given the running state, then
    /// sentence end.
    fn rnn_sentence_score(m: &RnnLm, words: &[&str]) -> f64 {
        let mut h = m.step(&m.zero_state(), m.bos());
        let mut total = 0.0;
        for w in words {
            let id = m.vocab.id(w).unwrap();
            total += m.score(&h, id);
            h = m.step(&h, id);
        }
        total + m.score(&h, m.eos())
    }

    #[test]
    fn pure_ngram_weights_keep_lm_scores() {
        let m = model();
        let l = linear(&["a", "b"]);
        let interp = InterpWeights::new(0.0, 1.0).unwrap();
        let out = rescore_lattice(&l, &m, &interp, &ScaleConfig::default()).unwrap();
        for (a, b) in l.arcs.iter().zip(out.lattice.arcs.iter()) {
            assert_relative_eq!(a.lm_logp, b.lm_logp, epsilon = 1e-12);
        }
    }

    #[test]
    fn pure_rnn_weights_give_model_sentence_score() {
        let m = model();
        let l = linear(&["a", "b"]);
        let interp = InterpWeights::new(1.0, 0.0).unwrap();
        let out = rescore_lattice(&l, &m, &interp, &ScaleConfig::default()).unwrap();
        let lm_only = ScaleConfig {
            am_scale: 0.0,
            lm_scale: 1.0,
            kappa: 1.0,
        };
        let paths = enumerate_paths(&out.lattice, &lm_only, 10).unwrap();
        assert_eq!(paths.len(), 1);
        assert_relative_eq!(
            paths[0].score,
            rnn_sentence_score(&m, &["a", "b"]),
            epsilon = 1e-10
        );
    }

    #[test]
    fn interpolated_score_lies_between_components() {
        let m = model();
        let l = linear(&["a", "b", "c"]);
        let ng = rescore_lattice(&l, &m, &InterpWeights::new(0.0, 1.0).unwrap(), &ScaleConfig::default()).unwrap();
        let rn = rescore_lattice(&l, &m, &InterpWeights::new(1.0, 0.0).unwrap(), &ScaleConfig::default()).unwrap();
        let mix = rescore_lattice(&l, &m, &InterpWeights::default(), &ScaleConfig::default()).unwrap();
        for i in 0..l.arcs.len() {
            let lo = ng.lattice.arcs[i].lm_logp.min(rn.lattice.arcs[i].lm_logp);
            let hi = ng.lattice.arcs[i].lm_logp.max(rn.lattice.arcs[i].lm_logp);
            let v = mix.lattice.arcs[i].lm_logp;
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "arc {i}: {v} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn merge_state_follows_best_scoring_predecessor() {
        // Two prefixes ("a", "b") merge into state 3, then a shared word
        // arc and the end arc. The am gap makes one side clearly better.
        let m = model();
        let mut l = Lattice::new("m", 5).unwrap();
        l.add_arc(0, 1, "a", -0.1, -0.5, None);
        l.add_arc(0, 2, "b", -9.0, -0.5, None);
        l.add_arc(1, 3, "c", -0.1, -0.5, None);
        l.add_arc(2, 3, "c", -0.1, -0.5, None);
        l.add_arc(3, 4, EPSILON, 0.0, -0.5, None);
        l.finals.insert(4);
        let fwd = rescore_forward(&l, &m, &InterpWeights::default(), &ScaleConfig::default(), None).unwrap();
        // State 3's hidden must equal stepping "a" then "c" from scratch.
        assert_eq!(fwd.tree.chosen_arc[3], Some(2));
        let h = m.step(&m.step(&m.step(&m.zero_state(), m.bos()), 3), 5);
        for (x, y) in fwd.hidden[3].iter().zip(h.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        // The end state copies its hidden along the epsilon arc.
        assert!(fwd.traces[4].is_none());
        for (x, y) in fwd.hidden[4].iter().zip(fwd.hidden[3].iter()) {
            assert_relative_eq!(x, y);
        }
    }

    #[test]
    fn equal_scores_choose_smallest_arc_index() {
        let m = model();
        let mut l = Lattice::new("tie", 3).unwrap();
        // Identical label and scores: a genuine tie.
        l.add_arc(0, 1, "a", -1.0, -0.5, None);
        l.add_arc(0, 1, "a", -1.0, -0.5, None);
        l.add_arc(1, 2, EPSILON, 0.0, -0.5, None);
        l.finals.insert(2);
        let fwd = rescore_forward(&l, &m, &InterpWeights::default(), &ScaleConfig::default(), None).unwrap();
        assert_eq!(fwd.tree.chosen_arc[1], Some(0));
    }

    #[test]
    fn fixed_tree_overrides_selection() {
        let m = model();
        let mut l = Lattice::new("m", 3).unwrap();
        l.add_arc(0, 1, "a", -0.1, -0.5, None);
        l.add_arc(0, 1, "b", -9.0, -0.5, None);
        l.add_arc(1, 2, EPSILON, 0.0, -0.5, None);
        l.finals.insert(2);
        let live = rescore_forward(&l, &m, &InterpWeights::default(), &ScaleConfig::default(), None).unwrap();
        assert_eq!(live.tree.chosen_arc[1], Some(0));
        let forced = HistoryTree {
            chosen_arc: vec![None, Some(1), Some(2)],
        };
        let fwd = rescore_forward(&l, &m, &InterpWeights::default(), &ScaleConfig::default(), Some(&forced)).unwrap();
        assert_eq!(fwd.tree.chosen_arc[1], Some(1));
        // Hidden at state 1 now reflects word "b".
        let hb = m.step(&m.step(&m.zero_state(), m.bos()), 4);
        for (x, y) in fwd.hidden[1].iter().zip(hb.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn word_arc_into_final_rejected() {
        let m = model();
        let mut l = Lattice::new("bad", 2).unwrap();
        l.add_arc(0, 1, "a", -1.0, -0.5, None);
        l.finals.insert(1);
        assert!(rescore_lattice(&l, &m, &InterpWeights::default(), &ScaleConfig::default()).is_err());
    }

    #[test]
    fn two_finals_rejected() {
        let m = model();
        let mut l = Lattice::new("bad", 3).unwrap();
        l.add_arc(0, 1, EPSILON, 0.0, 0.0, None);
        l.add_arc(0, 2, EPSILON, 0.0, 0.0, None);
        l.finals.insert(1);
        l.finals.insert(2);
        assert!(rescore_lattice(&l, &m, &InterpWeights::default(), &ScaleConfig::default()).is_err());
    }

    #[test]
    fn oov_labels_score_as_unk() {
        let m = model();
        let l = linear(&["zzz"]);
        let out = rescore_lattice(&l, &m, &InterpWeights::new(1.0, 0.0).unwrap(), &ScaleConfig::default()).unwrap();
        let h = m.step(&m.zero_state(), m.bos());
        let unk = m.vocab.id(UNK).unwrap();
        assert_relative_eq!(out.lattice.arcs[0].lm_logp, m.score(&h, unk), epsilon = 1e-12);
    }
}
