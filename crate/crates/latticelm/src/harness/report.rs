//! Scoring reports: per-utterance and corpus error counts, oracle
//! bounds, and comparisons against a named baseline.

use crate::config::ScaleConfig;
use crate::edit::{edit_distance, oracle_counts, wer, EditCounts};
use crate::lattice::{best_path, Lattice};
use crate::{Error, Result};
use std::collections::HashMap;

/// Scores of one utterance.
#[derive(Debug, Clone)]
pub struct UttScore {
    pub utt_id: String,
    pub counts: EditCounts,
    pub oracle: EditCounts,
}

/// Corpus-level scoring result. The corpus counts are, by construction,
/// the sums of the per-utterance counts.
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub per_utt: Vec<UttScore>,
    pub counts: EditCounts,
    pub oracle_counts: EditCounts,
}

impl ScoreReport {
    pub fn wer(&self) -> Result<f64> {
        wer(&self.counts)
    }

    pub fn oracle_wer(&self) -> Result<f64> {
        wer(&self.oracle_counts)
    }

    /// Multi-line human-readable summary.
    pub fn render(&self, label: &str) -> Result<String> {
        let c = &self.counts;
        let mut out = String::new();
        out.push_str(&format!(
            "{label}: WER {:.3}% (ins {} del {} sub {} / {} ref words), oracle WER {:.3}%\n",
            self.wer()?,
            c.insertions,
            c.deletions,
            c.substitutions,
            c.ref_words(),
            self.oracle_wer()?,
        ));
        Ok(out)
    }

    /// Summary plus the relative improvement over a named baseline.
    pub fn render_vs(&self, label: &str, base_label: &str, base: &ScoreReport) -> Result<String> {
        let mut out = self.render(label)?;
        out.push_str(&format!(
            "{label} vs {base_label}: {:.1}% relative\n",
            relative_improvement(base.wer()?, self.wer()?)
        ));
        Ok(out)
    }
}

/// Relative improvement in percent: positive when `candidate` is lower.
pub fn relative_improvement(baseline: f64, candidate: f64) -> f64 {
    100.0 * (baseline - candidate) / baseline
}

/// Score lattices against references: one-best WER counts via the best
/// path under `scales`, oracle counts via exact annotation. References
/// are looked up by utterance id.
pub fn score_run(
    lattices: &[Lattice],
    refs: &[(String, Vec<String>)],
    scales: &ScaleConfig,
) -> Result<ScoreReport> {
    let map: HashMap<&str, &[String]> = refs
        .iter()
        .map(|(id, words)| (id.as_str(), words.as_slice()))
        .collect();
    let mut per_utt = Vec::with_capacity(lattices.len());
    let mut counts = EditCounts::default();
    let mut oracle = EditCounts::default();
    for lat in lattices {
        let reference = map.get(lat.utt_id.as_str()).copied().ok_or_else(|| {
            Error::InvalidArgument(format!("no reference for utterance {}", lat.utt_id))
        })?;
        let best = best_path(lat, scales)?;
        let c = edit_distance(&best.words, reference);
        let o = oracle_counts(lat, reference)?;
        counts += c;
        oracle += o;
        per_utt.push(UttScore {
            utt_id: lat.utt_id.clone(),
            counts: c,
            oracle: o,
        });
    }
    Ok(ScoreReport {
        per_utt,
        counts,
        oracle_counts: oracle,
    })
}
