//! Lattice expansion against a backoff n-gram model.
//!
//! Expansion splits every state by the last `n-1` words of the paths
//! reaching it, so each word arc can carry the exact conditional
//! probability of its word given the model. Histories are seeded with
//! `<s>` at the start state; every original final state gets an epsilon
//! arc to a fresh super-final state carrying the `</s>` probability for
//! its history. Acoustic scores and edit costs pass through unchanged;
//! internal epsilon arcs carry no word and get a zero language-model
//! score. Paths are preserved one-to-one, and the language-model scores
//! along any path now sum to the model's sentence log probability of the
//! path's words.

use std::collections::{HashMap, VecDeque};

use super::NGramModel;
use crate::lattice::{Lattice, StateId};
use crate::vocab::{WordId, BOS, EOS, EPSILON};
use crate::Result;

pub fn expand_lattice(lattice: &Lattice, model: &NGramModel) -> Result<Lattice> {
    lattice.require_valid()?;
    let cap = model.order() - 1;
    let out = lattice.out_arcs();
    // Costs pass through; brand-new end arcs stay consistent with the rest
    // of the lattice (zero cost when costed, absent otherwise).
    let end_cost = if lattice.is_fully_costed() { Some(0) } else { None };

    let truncate = |mut h: Vec<WordId>| -> Vec<WordId> {
        if h.len() > cap {
            let drop = h.len() - cap;
            h.drain(..drop);
        }
        h
    };

    let mut index: HashMap<(StateId, Vec<WordId>), StateId> = HashMap::new();
    let mut states: Vec<(StateId, Vec<WordId>)> = Vec::new();
    let mut queue: VecDeque<StateId> = VecDeque::new();

    let start = (0, truncate(vec![model.resolve(BOS)]));
    index.insert(start.clone(), 0);
    states.push(start);
    queue.push_back(0);

    let mut expanded = Lattice::new(&lattice.utt_id, 1)?;

    while let Some(id) = queue.pop_front() {
        let (orig, hist) = states[id as usize].clone();
        for &ai in &out[orig as usize] {
            let arc = &lattice.arcs[ai];
            let (lm_logp, next_hist) = if arc.is_epsilon() {
                (0.0, hist.clone())
            } else {
                let w = model.resolve(&arc.label);
                let lm = model.logprob_ids(w, &hist);
                let mut h = hist.clone();
                h.push(w);
                (lm, truncate(h))
            };
            let key = (arc.dst, next_hist);
            let dst_id = match index.get(&key) {
                Some(&existing) => existing,
                None => {
                    let new_id = states.len() as StateId;
                    states.push(key.clone());
                    index.insert(key, new_id);
                    queue.push_back(new_id);
                    new_id
                }
            };
            expanded.add_arc(id, dst_id, arc.label.clone(), arc.am_logp, lm_logp, arc.edit_cost);
        }
    }

    let super_final = states.len() as StateId;
    expanded.num_states = super_final + 1;
    let eos = model.resolve(EOS);
    for (id, (orig, hist)) in states.iter().enumerate() {
        if lattice.finals.contains(orig) {
            let lm = model.logprob_ids(eos, hist);
            expanded.add_arc(id as StateId, super_final, EPSILON, 0.0, lm, end_cost);
        }
    }
    expanded.finals.insert(super_final);

    debug_assert!(expanded.validate().is_empty());
    Ok(expanded)
}
