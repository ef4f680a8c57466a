//! Exact per-arc edit-cost annotation.
//!
//! Annotation expands a lattice so that every arc carries an integer
//! `edit_cost` and the costs along any complete path sum exactly to the
//! Levenshtein distance between the path's words and the reference.
//!
//! Each expanded state pairs an original state with a normalised
//! Levenshtein DP row: entry `j` is the minimal cost of aligning the words
//! consumed so far against the first `j` reference words, shifted so the
//! row minimum is zero. Traversing a word arc advances the row one DP step
//! and charges the increase in the row minimum to that arc; epsilon arcs
//! copy the row at zero cost. States agreeing on (original state, row)
//! merge, which keeps the expansion small. Every original final state gets
//! an epsilon arc to a fresh super-final state charging the leftover cost
//! of completing the alignment, so the charges telescope to the exact
//! distance.

use std::collections::{HashMap, VecDeque};

use super::{edit_distance, EditCounts};
use crate::lattice::{best_path_scored, Lattice, StateId};
use crate::Result;

/// An annotated lattice plus bookkeeping linking it to its source.
#[derive(Debug, Clone)]
pub struct AnnotatedLattice {
    /// Every arc carries `edit_cost`; the single final state is
    /// `super_final`.
    pub lattice: Lattice,
    /// Per annotated arc: index of the source arc it copies, or `None` for
    /// the epsilon arcs added into the super-final state.
    pub source_arcs: Vec<Option<usize>>,
    pub super_final: StateId,
    /// Reference length the costs are measured against.
    pub ref_len: usize,
}

/// One Levenshtein DP step: advance `row` over `word`, given `reference`.
fn advance_row(row: &[u32], word: &str, reference: &[&str]) -> Vec<u32> {
    let mut next = Vec::with_capacity(row.len());
    next.push(row[0] + 1);
    for j in 1..row.len() {
        let sub = row[j - 1] + u32::from(word != reference[j - 1]);
        let del = next[j - 1] + 1;
        let ins = row[j] + 1;
        next.push(sub.min(del).min(ins));
    }
    next
}

fn normalise(mut row: Vec<u32>) -> (Vec<u32>, u32) {
    let min = *row.iter().min().expect("rows are non-empty");
    for v in &mut row {
        *v -= min;
    }
    (row, min)
}

/// Annotate `lattice` against `reference`. The input must validate
/// cleanly; the output validates cleanly, has exactly one final state, and
/// satisfies the exact path-sum property.
pub fn annotate_lattice<S: AsRef<str>>(
    lattice: &Lattice,
    reference: &[S],
) -> Result<AnnotatedLattice> {
    lattice.require_valid()?;
    let reference: Vec<&str> = reference.iter().map(|w| w.as_ref()).collect();
    let r = reference.len();
    let out = lattice.out_arcs();

    // Expanded states in discovery order; key -> new id.
    let mut index: HashMap<(StateId, Vec<u32>), StateId> = HashMap::new();
    let mut states: Vec<(StateId, Vec<u32>)> = Vec::new();
    let mut queue: VecDeque<StateId> = VecDeque::new();

    let initial_row: Vec<u32> = (0..=r as u32).collect();
    index.insert((0, initial_row.clone()), 0);
    states.push((0, initial_row));
    queue.push_back(0);

    let mut annotated = Lattice::new(&lattice.utt_id, 1)?;
    let mut source_arcs: Vec<Option<usize>> = Vec::new();

    while let Some(id) = queue.pop_front() {
        let (orig, row) = states[id as usize].clone();
        for &ai in &out[orig as usize] {
            let arc = &lattice.arcs[ai];
            let (next_row, cost) = if arc.is_epsilon() {
                (row.clone(), 0)
            } else {
                normalise(advance_row(&row, &arc.label, &reference))
            };
            let key = (arc.dst, next_row);
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
            annotated.add_arc(id, dst_id, arc.label.clone(), arc.am_logp, arc.lm_logp, Some(cost));
            source_arcs.push(Some(ai));
        }
    }

    // Alignment-completion arcs from every expansion of an original final
    // state into one fresh super-final state.
    let super_final = states.len() as StateId;
    annotated.num_states = super_final + 1;
    for (id, (orig, row)) in states.iter().enumerate() {
        if lattice.finals.contains(orig) {
            annotated.add_arc(
                id as StateId,
                super_final,
                crate::vocab::EPSILON,
                0.0,
                0.0,
                Some(row[r]),
            );
            source_arcs.push(None);
        }
    }
    annotated.finals.insert(super_final);

    debug_assert!(annotated.validate().is_empty());
    Ok(AnnotatedLattice {
        lattice: annotated,
        source_arcs,
        super_final,
        ref_len: r,
    })
}

/// The oracle (lowest edit distance achievable by any complete path) and
/// the word sequence achieving it.
#[derive(Debug, Clone)]
pub struct OracleAlignment {
    pub counts: EditCounts,
    pub words: Vec<String>,
    /// Total edit cost of the oracle path; equals `counts.total_errors()`.
    pub cost: u32,
}

/// Best achievable alignment of any complete lattice path against
/// `reference`. Cost ties resolve to the lexicographically smallest arc
/// sequence of the annotated lattice, so the result is deterministic.
pub fn oracle_path<S: AsRef<str>>(lattice: &Lattice, reference: &[S]) -> Result<OracleAlignment> {
    let annotated = annotate_lattice(lattice, reference)?;
    // Minimising an integer cost sum is maximising its negation; costs this
    // small are exact in f64.
    let neg_costs: Vec<f64> = annotated
        .lattice
        .arcs
        .iter()
        .map(|a| -f64::from(a.edit_cost.expect("annotated arcs are costed")))
        .collect();
    let path = best_path_scored(&annotated.lattice, &neg_costs)?;
    let cost = (-path.score) as u32;
    let reference: Vec<&str> = reference.iter().map(|w| w.as_ref()).collect();
    let counts = edit_distance(&path.words, &reference);
    debug_assert_eq!(counts.total_errors(), cost);
    Ok(OracleAlignment {
        counts,
        words: path.words,
        cost,
    })
}

/// Error counts of the oracle path; see [`oracle_path`].
pub fn oracle_counts<S: AsRef<str>>(lattice: &Lattice, reference: &[S]) -> Result<EditCounts> {
    Ok(oracle_path(lattice, reference)?.counts)
}
