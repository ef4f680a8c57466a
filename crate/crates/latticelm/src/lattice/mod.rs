//! Word lattices: acyclic weighted word graphs.
//!
//! A lattice has states `0..num_states` with state `0` the unique start
//! state and a non-empty set of final states. Arcs carry a word label (or
//! the reserved epsilon label `<eps>`), an acoustic and a language-model
//! score as natural-log probabilities (higher is better), and optionally an
//! integer edit cost attached by annotation. A complete path runs from the
//! start state to a final state; its word sequence is its non-epsilon
//! labels in order.

mod paths;
mod text;

pub use paths::{
    best_path, enumerate_paths, nbest_paths, sample_paths, total_logprob, Path,
};
pub(crate) use paths::best_path_scored;
pub use text::{
    load_lattices, parse_lattice, parse_lattices, parse_refs, save_lattices, write_lattice,
    write_lattices, write_refs,
};

use std::collections::BTreeSet;

use crate::config::ScaleConfig;
use crate::vocab::EPSILON;
use crate::{Error, Result};

pub type StateId = u32;

/// A single lattice arc.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub label: String,
    /// Acoustic score, natural log, higher is better.
    pub am_logp: f64,
    /// Language-model score, natural log, higher is better.
    pub lm_logp: f64,
    /// Exact edit cost of traversing this arc, set by annotation.
    pub edit_cost: Option<u32>,
}

impl Arc {
    pub fn is_epsilon(&self) -> bool {
        self.label == EPSILON
    }
}

/// A word lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub utt_id: String,
    pub num_states: StateId,
    pub arcs: Vec<Arc>,
    pub finals: BTreeSet<StateId>,
}

/// A structural problem reported by [`Lattice::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Defect {
    /// An arc endpoint lies outside `0..num_states`.
    ArcOutOfRange { arc: usize },
    /// A final state lies outside `0..num_states`.
    FinalOutOfRange { state: StateId },
    /// The lattice has no final state.
    NoFinalState,
    /// The arc set contains a directed cycle.
    Cycle,
    /// `state` is not reachable from the start state.
    Unreachable { state: StateId },
    /// No final state is reachable from `state`.
    NotCoaccessible { state: StateId },
}

impl std::fmt::Display for Defect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Defect::ArcOutOfRange { arc } => write!(f, "arc {arc} has an out-of-range endpoint"),
            Defect::FinalOutOfRange { state } => write!(f, "final state {state} is out of range"),
            Defect::NoFinalState => write!(f, "no final state"),
            Defect::Cycle => write!(f, "contains a cycle"),
            Defect::Unreachable { state } => {
                write!(f, "state {state} is unreachable from the start state")
            }
            Defect::NotCoaccessible { state } => {
                write!(f, "no final state is reachable from state {state}")
            }
        }
    }
}

impl Lattice {
    /// An empty lattice with `num_states` states and no arcs or finals.
    pub fn new(utt_id: impl Into<String>, num_states: StateId) -> Result<Lattice> {
        if num_states == 0 {
            return Err(Error::InvalidArgument(
                "a lattice needs at least one state".into(),
            ));
        }
        Ok(Lattice {
            utt_id: utt_id.into(),
            num_states,
            arcs: Vec::new(),
            finals: BTreeSet::new(),
        })
    }

    pub fn add_arc(
        &mut self,
        src: StateId,
        dst: StateId,
        label: impl Into<String>,
        am_logp: f64,
        lm_logp: f64,
        edit_cost: Option<u32>,
    ) {
        self.arcs.push(Arc {
            src,
            dst,
            label: label.into(),
            am_logp,
            lm_logp,
            edit_cost,
        });
    }

    /// Outgoing arc indices per state, in arc order.
    pub fn out_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_states as usize];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.src as usize].push(i);
        }
        out
    }

    /// Incoming arc indices per state, in arc order.
    pub fn in_arcs(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_states as usize];
        for (i, a) in self.arcs.iter().enumerate() {
            inc[a.dst as usize].push(i);
        }
        inc
    }

    /// Combined per-arc scores under `scales`.
    pub fn combined_scores(&self, scales: &ScaleConfig) -> Vec<f64> {
        self.arcs
            .iter()
            .map(|a| scales.combine(a.am_logp, a.lm_logp))
            .collect()
    }

    /// True if every arc carries an edit cost (and at least one arc exists).
    pub fn is_fully_costed(&self) -> bool {
        !self.arcs.is_empty() && self.arcs.iter().all(|a| a.edit_cost.is_some())
    }

    /// List every structural defect: out-of-range endpoints, missing finals,
    /// cycles, states unreachable from the start, states from which no final
    /// can be reached. An empty list means the lattice is well-formed.
    pub fn validate(&self) -> Vec<Defect> {
        let mut defects = Vec::new();
        let n = self.num_states as usize;
        for (i, a) in self.arcs.iter().enumerate() {
            if a.src >= self.num_states || a.dst >= self.num_states {
                defects.push(Defect::ArcOutOfRange { arc: i });
            }
        }
        for &f in &self.finals {
            if f >= self.num_states {
                defects.push(Defect::FinalOutOfRange { state: f });
            }
        }
        if self.finals.is_empty() {
            defects.push(Defect::NoFinalState);
        }
        if !defects.is_empty() {
            // Graph traversals below assume in-range endpoints.
            return defects;
        }

        if self.topological_order().is_err() {
            defects.push(Defect::Cycle);
        }

        // Forward reachability from the start state.
        let out = self.out_arcs();
        let mut reach = vec![false; n];
        let mut stack = vec![0 as StateId];
        reach[0] = true;
        while let Some(s) = stack.pop() {
            for &ai in &out[s as usize] {
                let d = self.arcs[ai].dst;
                if !reach[d as usize] {
                    reach[d as usize] = true;
                    stack.push(d);
                }
            }
        }
        // Backward reachability from the finals.
        let inc = self.in_arcs();
        let mut coacc = vec![false; n];
        let mut stack: Vec<StateId> = self.finals.iter().copied().collect();
        for &f in &self.finals {
            coacc[f as usize] = true;
        }
        while let Some(s) = stack.pop() {
            for &ai in &inc[s as usize] {
                let p = self.arcs[ai].src;
                if !coacc[p as usize] {
                    coacc[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        for s in 0..n {
            if !reach[s] {
                defects.push(Defect::Unreachable { state: s as StateId });
            }
            if !coacc[s] {
                defects.push(Defect::NotCoaccessible { state: s as StateId });
            }
        }
        defects
    }

    /// Error unless [`Lattice::validate`] reports no defects.
    pub fn require_valid(&self) -> Result<()> {
        let defects = self.validate();
        if defects.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = defects.iter().map(|d| d.to_string()).collect();
            Err(Error::invalid_lattice(&self.utt_id, msgs.join("; ")))
        }
    }

    /// Topological order of all states by Kahn's algorithm, smallest id
    /// first among ready states. Errors if the arc set has a cycle.
    pub fn topological_order(&self) -> Result<Vec<StateId>> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let n = self.num_states as usize;
        let mut indegree = vec![0usize; n];
        for a in &self.arcs {
            indegree[a.dst as usize] += 1;
        }
        let out = self.out_arcs();
        let mut ready: BinaryHeap<Reverse<StateId>> = (0..self.num_states)
            .filter(|&s| indegree[s as usize] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(s)) = ready.pop() {
            order.push(s);
            for &ai in &out[s as usize] {
                let d = self.arcs[ai].dst as usize;
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(Reverse(d as StateId));
                }
            }
        }
        if order.len() == n {
            Ok(order)
        } else {
            Err(Error::Cycle {
                utt_id: self.utt_id.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_path_lattice() -> Lattice {
        // 0 -a-> 1 -b-> 2(final), plus 0 -c-> 2.
        let mut l = Lattice::new("t", 3).unwrap();
        l.add_arc(0, 1, "a", -1.0, -0.5, None);
        l.add_arc(1, 2, "b", -0.2, -0.3, None);
        l.add_arc(0, 2, "c", -2.0, -0.1, None);
        l.finals.insert(2);
        l
    }

    #[test]
    fn zero_states_rejected() {
        assert!(Lattice::new("x", 0).is_err());
    }

    #[test]
    fn well_formed_lattice_has_no_defects() {
        assert!(two_path_lattice().validate().is_empty());
    }

    #[test]
    fn single_state_final_lattice_is_valid() {
        let mut l = Lattice::new("s", 1).unwrap();
        l.finals.insert(0);
        assert!(l.validate().is_empty());
        assert_eq!(l.topological_order().unwrap(), vec![0]);
    }

    #[test]
    fn missing_final_reported() {
        let mut l = two_path_lattice();
        l.finals.clear();
        assert!(l.validate().contains(&Defect::NoFinalState));
    }

    #[test]
    fn cycle_reported() {
        let mut l = two_path_lattice();
        l.add_arc(2, 0, "z", 0.0, 0.0, None);
        let d = l.validate();
        assert!(d.contains(&Defect::Cycle));
        assert!(l.topological_order().is_err());
    }

    #[test]
    fn unreachable_and_dead_states_reported() {
        // State 3 floats free: unreachable and not co-accessible.
        let mut l = Lattice::new("t", 4).unwrap();
        l.add_arc(0, 1, "a", 0.0, 0.0, None);
        l.finals.insert(1);
        let d = l.validate();
        assert!(d.contains(&Defect::Unreachable { state: 3 }));
        assert!(d.contains(&Defect::NotCoaccessible { state: 3 }));
    }

    #[test]
    fn out_of_range_arc_reported() {
        let mut l = Lattice::new("t", 2).unwrap();
        l.add_arc(0, 5, "a", 0.0, 0.0, None);
        l.finals.insert(1);
        assert_eq!(l.validate(), vec![Defect::ArcOutOfRange { arc: 0 }]);
    }

    #[test]
    fn topological_order_breaks_ties_by_smallest_id() {
        // Diamond: 0 -> {1, 2} -> 3; 1 and 2 become ready together.
        let mut l = Lattice::new("d", 4).unwrap();
        l.add_arc(0, 1, "a", 0.0, 0.0, None);
        l.add_arc(0, 2, "b", 0.0, 0.0, None);
        l.add_arc(1, 3, "c", 0.0, 0.0, None);
        l.add_arc(2, 3, "d", 0.0, 0.0, None);
        l.finals.insert(3);
        assert_eq!(l.topological_order().unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn combined_scores_use_scales() {
        let l = two_path_lattice();
        let s = ScaleConfig {
            am_scale: 2.0,
            lm_scale: 1.0,
            kappa: 10.0,
        };
        let scores = l.combined_scores(&s);
        assert_eq!(scores[0], 10.0 * (2.0 * -1.0 + -0.5));
    }
}
