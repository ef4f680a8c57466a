//! Backoff n-gram estimation for the synthetic harness.
//!
//! Desk-scale only: add-one unigrams and absolute discounting (D = 0.5)
//! for the higher orders, in the standard backoff (not interpolated)
//! form. The sentence-start token gets the conventional dummy
//! probability (log10 -99) but a real backoff weight, so histories
//! beginning a sentence behave normally.

use crate::ngram::NGramModel;
use crate::vocab::{Vocab, WordId, BOS, EOS};
use crate::{Error, Result};
use std::collections::HashMap;

const DISCOUNT: f64 = 0.5;

/// Estimate a backoff model of the given order from id sentences over
/// `vocab`. Sentences are implicitly wrapped in `<s>`/`</s>`.
pub fn estimate_ngram(
    vocab: &Vocab,
    sentences: &[Vec<WordId>],
    order: usize,
) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if sentences.is_empty() {
        return Err(Error::InvalidArgument(
            "n-gram estimation needs at least one sentence".into(),
        ));
    }
    let bos = vocab
        .id(BOS)
        .ok_or_else(|| Error::InvalidArgument(format!("vocabulary must contain {BOS}")))?;
    let eos = vocab
        .id(EOS)
        .ok_or_else(|| Error::InvalidArgument(format!("vocabulary must contain {EOS}")))?;
    for (i, s) in sentences.iter().enumerate() {
        if let Some(&w) = s.iter().find(|&&w| w as usize >= vocab.len()) {
            return Err(Error::InvalidArgument(format!(
                "sentence {i} contains id {w} outside the vocabulary"
            )));
        }
    }

    // gram_counts[k-1]: k-gram counts; hist_counts[k-1]: times each
    // (k-1)-length history preceded a predicted token.
    let mut gram_counts: Vec<HashMap<Vec<WordId>, u64>> = vec![HashMap::new(); order];
    let mut hist_counts: Vec<HashMap<Vec<WordId>, u64>> = vec![HashMap::new(); order];
    for s in sentences {
        let mut seq = Vec::with_capacity(s.len() + 2);
        seq.push(bos);
        seq.extend_from_slice(s);
        seq.push(eos);
        // Predicted positions start at 1: <s> is never predicted.
        for i in 1..seq.len() {
            for k in 1..=order.min(i + 1) {
                let gram = seq[i + 1 - k..=i].to_vec();
                if k >= 2 {
                    *hist_counts[k - 1]
                        .entry(gram[..k - 1].to_vec())
                        .or_insert(0) += 1;
                }
                *gram_counts[k - 1].entry(gram).or_insert(0) += 1;
            }
        }
    }

    // Unigrams: add-one over every vocabulary word except <s>.
    let token_total: u64 = gram_counts[0].values().sum();
    let types = (vocab.len() - 1) as f64;
    let mut probs: Vec<HashMap<Vec<WordId>, f64>> = vec![HashMap::new(); order];
    for w in 0..vocab.len() as WordId {
        if w == bos {
            continue;
        }
        let c = gram_counts[0].get([w].as_slice()).copied().unwrap_or(0);
        let p = (c as f64 + 1.0) / (token_total as f64 + types);
        probs[0].insert(vec![w], p);
    }

    // Backoff probability of `w` after `hist` using the orders built so
    // far, mirroring the model's own floor-free recursion (the full
    // vocabulary is covered at the unigram level).
    fn prob_so_far(
        probs: &[HashMap<Vec<WordId>, f64>],
        bows: &[HashMap<Vec<WordId>, f64>],
        hist: &[WordId],
        w: WordId,
    ) -> f64 {
        let mut key = hist.to_vec();
        key.push(w);
        if let Some(&p) = probs[hist.len()].get(&key) {
            return p;
        }
        if hist.is_empty() {
            // Only <s> lacks a unigram entry; it is never predicted.
            return 0.0;
        }
        let bow = bows[hist.len() - 1].get(hist).copied().unwrap_or(1.0);
        bow * prob_so_far(probs, bows, &hist[1..], w)
    }

    // bows[len]: backoff weight of each history of that length.
    let mut bows: Vec<HashMap<Vec<WordId>, f64>> = vec![HashMap::new(); order.max(1) - 1];
    for k in 2..=order {
        // Group k-gram counts by history.
        let mut by_hist: HashMap<&[WordId], Vec<(&[WordId], u64)>> = HashMap::new();
        for (gram, &c) in &gram_counts[k - 1] {
            by_hist.entry(&gram[..k - 1]).or_default().push((gram, c));
        }
        for (hist, mut grams) in by_hist {
            // Fix the accumulation order: the map iterates in arbitrary
            // order, and the mass sums below must not depend on it.
            grams.sort_by(|a, b| a.0.cmp(b.0));
            let total = hist_counts[k - 1][hist] as f64;
            let mut kept_mass = 0.0;
            let mut lower_mass = 0.0;
            for &(gram, c) in &grams {
                let p = (c as f64 - DISCOUNT) / total;
                debug_assert!(p > 0.0);
                probs[k - 1].insert(gram.to_vec(), p);
                kept_mass += p;
                lower_mass += prob_so_far(&probs, &bows, &hist[1..], gram[k - 1]);
            }
            let denom = 1.0 - lower_mass;
            let bow = if denom.abs() < 1e-12 {
                // The history precedes every word the lower order can
                // name; no mass is left to redistribute.
                0.0
            } else {
                (1.0 - kept_mass) / denom
            };
            bows[k - 2].insert(hist.to_vec(), bow);
        }
    }

    // Assemble the (ids, logp10, bow10) tables.
    let mut grams: Vec<Vec<(Vec<WordId>, f64, f64)>> = vec![Vec::new(); order];
    let bow10_of = |bows: &[HashMap<Vec<WordId>, f64>], key: &[WordId]| -> f64 {
        match bows.get(key.len() - 1).and_then(|m| m.get(key)) {
            Some(&b) if b > 0.0 => b.log10(),
            Some(_) => -99.0,
            None => 0.0,
        }
    };
    // The <s> unigram: dummy probability, real backoff weight.
    grams[0].push((vec![bos], -99.0, bow10_of(&bows, &[bos])));
    for (gram, &p) in &probs[0] {
        grams[0].push((gram.clone(), p.log10(), bow10_of(&bows, gram)));
    }
    for k in 2..=order {
        for (gram, &p) in &probs[k - 1] {
            let bow10 = if k < order { bow10_of(&bows, gram) } else { 0.0 };
            grams[k - 1].push((gram.clone(), p.log10(), bow10));
        }
    }
    NGramModel::from_tables(vocab.clone(), grams)
}
