//! Word-level edit distances, error counts, and word error rate.

mod annotate;

pub use annotate::{annotate_lattice, oracle_counts, oracle_path, AnnotatedLattice, OracleAlignment};

use std::ops::{Add, AddAssign};

use crate::{Error, Result};

/// Alignment outcome counts between a hypothesis and a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub matches: u32,
    pub insertions: u32,
    pub deletions: u32,
    pub substitutions: u32,
}

impl EditCounts {
    /// Total edit distance: insertions + deletions + substitutions.
    pub fn total_errors(&self) -> u32 {
        self.insertions + self.deletions + self.substitutions
    }

    /// Reference length recovered from the alignment.
    pub fn ref_words(&self) -> u32 {
        self.matches + self.deletions + self.substitutions
    }

    /// Hypothesis length recovered from the alignment.
    pub fn hyp_words(&self) -> u32 {
        self.matches + self.insertions + self.substitutions
    }
}

impl Add for EditCounts {
    type Output = EditCounts;
    fn add(self, rhs: EditCounts) -> EditCounts {
        EditCounts {
            matches: self.matches + rhs.matches,
            insertions: self.insertions + rhs.insertions,
            deletions: self.deletions + rhs.deletions,
            substitutions: self.substitutions + rhs.substitutions,
        }
    }
}

impl AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: EditCounts) {
        *self = *self + rhs;
    }
}

/// Word error rate in percent: `100 * (I + D + S) / reference length`.
/// Errors on an empty reference.
pub fn wer(counts: &EditCounts) -> Result<f64> {
    let n = counts.ref_words();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "word error rate is undefined for an empty reference".into(),
        ));
    }
    Ok(100.0 * f64::from(counts.total_errors()) / f64::from(n))
}

/// Levenshtein alignment of `hyp` against `reference` at the word level,
/// unit costs. Among minimal alignments the backtrace prefers match, then
/// substitution, then deletion, then insertion, making the counts
/// deterministic.
pub fn edit_distance<H: AsRef<str>, R: AsRef<str>>(hyp: &[H], reference: &[R]) -> EditCounts {
    let h = hyp.len();
    let r = reference.len();
    // dp[i][j]: distance between hyp[..i] and reference[..j].
    let mut dp = vec![vec![0u32; r + 1]; h + 1];
    for (j, row) in dp[0].iter_mut().enumerate() {
        *row = j as u32;
    }
    for i in 1..=h {
        dp[i][0] = i as u32;
        for j in 1..=r {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            let diag = dp[i - 1][j - 1] + u32::from(!same);
            let ins = dp[i - 1][j] + 1;
            let del = dp[i][j - 1] + 1;
            dp[i][j] = diag.min(ins).min(del);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (h, r);
    while i > 0 || j > 0 {
        let cur = dp[i][j];
        let same = i > 0 && j > 0 && hyp[i - 1].as_ref() == reference[j - 1].as_ref();
        if same && cur == dp[i - 1][j - 1] {
            counts.matches += 1;
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && !same && cur == dp[i - 1][j - 1] + 1 {
            counts.substitutions += 1;
            i -= 1;
            j -= 1;
        } else if j > 0 && cur == dp[i][j - 1] + 1 {
            counts.deletions += 1;
            j -= 1;
        } else {
            debug_assert!(i > 0 && cur == dp[i - 1][j] + 1);
            counts.insertions += 1;
            i -= 1;
        }
    }
    debug_assert_eq!(counts.ref_words() as usize, r);
    debug_assert_eq!(counts.hyp_words() as usize, h);
    debug_assert_eq!(counts.total_errors(), dp[h][r]);
    counts
}
