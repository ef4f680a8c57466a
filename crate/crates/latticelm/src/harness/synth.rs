//! Synthetic task generation: a bigram sentence generator with known
//! analytic perplexity, and confusion lattices derived from its output.
//!
//! The generator gives language-model training an absolute quality
//! reference: a model that learns the task perfectly attains the
//! generator's own perplexity, computable in closed form from the chain's
//! expected state visits. Lattices are sausage-shaped confusion networks
//! around each reference sentence — per slot, the reference word competes
//! with acoustically confusable alternatives, optional deletions, and
//! optional insertion slots, with noisy acoustic scores that leave the
//! reference beatable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::lattice::Lattice;
use crate::seeds::rng_for;
use crate::vocab::{Vocab, BOS, EOS, EPSILON, UNK};
use crate::{Error, Result};
use std::collections::HashSet;

/// Parameters of the synthetic task.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Content words in the vocabulary (excluding the special tokens).
    pub vocab_size: usize,
    /// Mean sentence length; the end probability per step is its inverse.
    pub mean_len: f64,
    /// Hard cap on sentence length, in words. Exact per-arc edit-cost
    /// annotation grows exponentially with the reference length in the
    /// worst case, so the synthetic task keeps transcripts bounded; the
    /// generator's analytic statistics account for the cap exactly.
    pub max_len: usize,
    /// High-probability successors per word.
    pub preferred_successors: usize,
    /// Probability mass shared by the preferred successors.
    pub preferred_mass: f64,
    /// Probability that a slot carries substitution competitors.
    pub sub_prob: f64,
    /// Probability that a slot carries a deletion (epsilon) arc.
    pub del_prob: f64,
    /// Probability of an insertion slot after each reference word.
    pub ins_rate: f64,
    /// Confusable words tracked per vocabulary word.
    pub confusion_size: usize,
    /// Competitor arcs drawn from the confusion set per substituted slot.
    pub branching: usize,
    /// Probability that the reference word's own arc is present.
    pub ref_keep_prob: f64,
    /// Mean acoustic penalty of competitor arcs relative to the reference.
    pub sub_margin: f64,
    /// Mean acoustic penalty of deletion arcs.
    pub del_margin: f64,
    /// Mean acoustic penalty of inserted-word arcs.
    pub ins_margin: f64,
    /// Standard deviation of the Gaussian noise on acoustic scores.
    pub am_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 100,
            mean_len: 8.0,
            max_len: 12,
            preferred_successors: 4,
            preferred_mass: 0.7,
            sub_prob: 0.9,
            del_prob: 0.15,
            ins_rate: 0.1,
            confusion_size: 4,
            branching: 3,
            ref_keep_prob: 0.9,
            sub_margin: 1.0,
            del_margin: 2.0,
            ins_margin: 2.0,
            am_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 {
            return Err(Error::InvalidArgument(
                "synthetic vocabulary needs at least 3 words".into(),
            ));
        }
        if !(self.mean_len > 1.0 && self.mean_len <= 1000.0) {
            return Err(Error::InvalidArgument(
                "mean sentence length must lie in (1, 1000]".into(),
            ));
        }
        if self.max_len == 0 || self.max_len > 1000 {
            return Err(Error::InvalidArgument(
                "the sentence length cap must lie in [1, 1000]".into(),
            ));
        }
        for (name, p) in [
            ("preferred_mass", self.preferred_mass),
            ("sub_prob", self.sub_prob),
            ("del_prob", self.del_prob),
            ("ins_rate", self.ins_rate),
            ("ref_keep_prob", self.ref_keep_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.preferred_mass + 1.0 / self.mean_len > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(
                "preferred mass plus end probability exceeds 1".into(),
            ));
        }
        if self.preferred_successors == 0 || self.preferred_successors > self.vocab_size {
            return Err(Error::InvalidArgument(
                "preferred successor count must lie in [1, vocabulary size]".into(),
            ));
        }
        if self.confusion_size == 0 || self.confusion_size >= self.vocab_size {
            return Err(Error::InvalidArgument(
                "confusion set size must lie in [1, vocabulary size)".into(),
            ));
        }
        if self.branching == 0 || self.branching > self.confusion_size {
            return Err(Error::InvalidArgument(
                "branching must lie in [1, confusion set size]".into(),
            ));
        }
        if !(self.am_noise >= 0.0 && self.am_noise.is_finite()) {
            return Err(Error::InvalidArgument(
                "acoustic noise must be finite and non-negative".into(),
            ));
        }
        for (name, m) in [
            ("sub_margin", self.sub_margin),
            ("del_margin", self.del_margin),
            ("ins_margin", self.ins_margin),
        ] {
            if !m.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// The model vocabulary for a spec: the special tokens followed by the
/// content words `w000`, `w001`, ...
pub fn task_vocab(spec: &SynthSpec) -> Result<Vocab> {
    let mut words = vec![BOS.to_string(), EOS.to_string(), UNK.to_string()];
    words.extend((0..spec.vocab_size).map(content_word));
    Vocab::from_words(&words)
}

fn content_word(i: usize) -> String {
    format!("w{i:03}")
}

/// The true sentence distribution: a first-order chain over content
/// words with an explicit start distribution and a per-step end
/// probability folded into each transition row.
#[derive(Debug, Clone)]
pub struct BigramGenerator {
    /// Content words; generator word index = position here.
    pub words: Vec<String>,
    /// Start-word distribution, length V.
    pub start: Vec<f64>,
    /// Transition rows, V rows of length V+1; the last column ends the
    /// sentence.
    pub trans: Vec<Vec<f64>>,
    /// Confusable words per word, each of the spec's confusion size.
    pub confusions: Vec<Vec<usize>>,
    /// Sentences are cut off at this many words; the end becomes certain
    /// there, so the truncated step carries no entropy.
    pub max_len: usize,
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.random();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample `count` distinct values from `0..n`, excluding `skip`.
fn sample_distinct(
    n: usize,
    count: usize,
    skip: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).filter(|&i| Some(i) != skip).collect();
    for i in 0..count {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Build the generator for a spec, deterministically from its seed.
pub fn build_generator(spec: &SynthSpec) -> Result<BigramGenerator> {
    spec.validate()?;
    let v = spec.vocab_size;
    let p_end = 1.0 / spec.mean_len;
    let mut rng = rng_for(spec.seed, "generator", 0);

    let mut start: Vec<f64> = (0..v).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = start.iter().sum();
    for p in &mut start {
        *p /= total;
    }

    let mut trans = Vec::with_capacity(v);
    for _ in 0..v {
        let mut row = vec![0.0; v + 1];
        let preferred = sample_distinct(v, spec.preferred_successors, None, &mut rng);
        let weights: Vec<f64> = preferred
            .iter()
            .map(|_| rng.random_range(0.5..1.5))
            .collect();
        let wsum: f64 = weights.iter().sum();
        for (&w, &u) in preferred.iter().zip(weights.iter()) {
            row[w] = spec.preferred_mass * u / wsum;
        }
        let rest = v - spec.preferred_successors;
        let residual = 1.0 - p_end - spec.preferred_mass;
        if rest > 0 {
            let share = residual / rest as f64;
            for (w, p) in row.iter_mut().take(v).enumerate() {
                if !preferred.contains(&w) {
                    *p = share;
                }
            }
        } else {
            // Every word is preferred: fold the residual back in.
            for p in row.iter_mut().take(v) {
                *p *= (spec.preferred_mass + residual) / spec.preferred_mass;
            }
        }
        row[v] = p_end;
        debug_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        trans.push(row);
    }

    let mut conf_rng = rng_for(spec.seed, "confusion", 0);
    let confusions = (0..v)
        .map(|w| sample_distinct(v, spec.confusion_size, Some(w), &mut conf_rng))
        .collect();

    Ok(BigramGenerator {
        words: (0..v).map(content_word).collect(),
        start,
        trans,
        confusions,
        max_len: spec.max_len,
    })
}

impl BigramGenerator {
    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// One sentence of generator word indices; never empty, never longer
    /// than `max_len`.
    pub fn sample_sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let v = self.vocab_size();
        let mut out = vec![sample_categorical(&self.start, rng)];
        while out.len() < self.max_len {
            let next = sample_categorical(&self.trans[*out.last().expect("non-empty")], rng);
            if next == v {
                break;
            }
            out.push(next);
        }
        out
    }

    /// Joint probabilities `P(length >= t, word at t = w)` for every
    /// position `t = 1..=max_len`; the exact occupancy of the capped
    /// chain, and the basis for every analytic statistic below.
    fn position_marginals(&self) -> Vec<Vec<f64>> {
        let v = self.vocab_size();
        let mut out = Vec::with_capacity(self.max_len);
        out.push(self.start.clone());
        for _ in 1..self.max_len {
            let prev = out.last().expect("non-empty");
            let mut next = vec![0.0; v];
            for (w, &p) in prev.iter().enumerate() {
                if p > 0.0 {
                    for (w2, x) in next.iter_mut().enumerate() {
                        *x += p * self.trans[w][w2];
                    }
                }
            }
            out.push(next);
        }
        out
    }

    /// Expected number of times each word is emitted per sentence, by
    /// unrolling the chain over the at most `max_len` positions.
    pub fn expected_visits(&self) -> Vec<f64> {
        let v = self.vocab_size();
        let mut visits = vec![0.0; v];
        for m in self.position_marginals() {
            for (w, &p) in m.iter().enumerate() {
                visits[w] += p;
            }
        }
        visits
    }

    /// Marginal distribution of an emitted word: expected visits,
    /// normalised.
    pub fn unigram_marginal(&self) -> Vec<f64> {
        let mut v = self.expected_visits();
        let total: f64 = v.iter().sum();
        for p in &mut v {
            *p /= total;
        }
        v
    }

    /// The generator's own perplexity in closed form: entropy of the
    /// start choice plus the expected transition entropies, per expected
    /// token (words plus the sentence end). A transition is only chosen
    /// while the sentence is alive and uncapped, so the final position's
    /// forced end adds a token but no entropy.
    pub fn analytic_perplexity(&self) -> f64 {
        fn entropy(probs: &[f64]) -> f64 {
            probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum()
        }
        let marginals = self.position_marginals();
        let mut total_entropy = entropy(&self.start);
        let mut expected_words = 0.0;
        for (t, m) in marginals.iter().enumerate() {
            expected_words += m.iter().sum::<f64>();
            if t + 1 < self.max_len {
                total_entropy += m
                    .iter()
                    .zip(self.trans.iter())
                    .map(|(&p, row)| p * entropy(row))
                    .sum::<f64>();
            }
        }
        (total_entropy / (expected_words + 1.0)).exp()
    }

    pub fn to_words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.words[i].clone()).collect()
    }
}

/// Train/validation/test sentences; the held-out splits contain no
/// sentence that appears verbatim in an earlier split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

/// Sample the three splits deterministically from `seed`. Requesting 0
/// sentences for any split is allowed.
pub fn gen_corpus(
    generator: &BigramGenerator,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut sample_split = |n: usize, stream: u64, exclude_seen: bool| -> Result<Vec<Vec<usize>>> {
        let mut rng = rng_for(seed, "corpus", stream);
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::InvalidArgument(
                    "could not sample enough distinct held-out sentences".into(),
                ));
            }
            let s = generator.sample_sentence(&mut rng);
            if exclude_seen && seen.contains(&s) {
                continue;
            }
            out.push(s);
        }
        for s in &out {
            seen.insert(s.clone());
        }
        Ok(out)
    };
    let train = sample_split(n_train, 0, false)?;
    let valid = sample_split(n_valid, 1, true)?;
    let test = sample_split(n_test, 2, true)?;
    Ok(Corpus { train, valid, test })
}

/// Build the confusion lattice of one reference sentence. `utt_index`
/// selects the per-utterance noise stream.
pub fn gen_lattice(
    generator: &BigramGenerator,
    spec: &SynthSpec,
    utt_id: &str,
    utt_index: u64,
    reference: &[usize],
    ln_marginal: &[f64],
) -> Result<Lattice> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, "lattice", utt_index);
    let noise = Normal::new(0.0, spec.am_noise)
        .map_err(|e| Error::InvalidArgument(format!("acoustic noise: {e}")))?;
    let marginal: Vec<f64> = ln_marginal.iter().map(|l| l.exp()).collect();
    // Upper bound on states: one per slot plus one insertion slot each.
    let max_states = 2 * reference.len() as u32 + 2;
    let mut lat = Lattice::new(utt_id, max_states)?;
    let mut cur: u32 = 0;
    for &w in reference {
        let ref_present = rng.random::<f64>() < spec.ref_keep_prob;
        let mut subs_present = rng.random::<f64>() < spec.sub_prob;
        let del_present = rng.random::<f64>() < spec.del_prob;
        // Every slot must stay passable.
        if !ref_present && !subs_present {
            subs_present = true;
        }
        if ref_present {
            let am = noise.sample(&mut rng);
            lat.add_arc(cur, cur + 1, &generator.words[w], am, ln_marginal[w], None);
        }
        if subs_present {
            for &c in generator.confusions[w].iter().take(spec.branching) {
                let am = -spec.sub_margin + noise.sample(&mut rng);
                lat.add_arc(cur, cur + 1, &generator.words[c], am, ln_marginal[c], None);
            }
        }
        if del_present {
            let am = -spec.del_margin + noise.sample(&mut rng);
            lat.add_arc(cur, cur + 1, EPSILON, am, 0.0, None);
        }
        cur += 1;
        if rng.random::<f64>() < spec.ins_rate {
            let iw = sample_categorical(&marginal, &mut rng);
            let am = -spec.ins_margin + noise.sample(&mut rng);
            lat.add_arc(cur, cur + 1, &generator.words[iw], am, ln_marginal[iw], None);
            let bypass = noise.sample(&mut rng);
            lat.add_arc(cur, cur + 1, EPSILON, bypass, 0.0, None);
            cur += 1;
        }
    }
    lat.num_states = cur + 1;
    lat.finals.insert(cur);
    debug_assert!(lat.validate().is_empty());
    Ok(lat)
}

/// Generate lattices and the matching reference list for a whole split.
/// Utterance ids are `{prefix}-{index:05}`; indices offset the noise
/// stream so splits never share it.
pub fn gen_lattices(
    generator: &BigramGenerator,
    spec: &SynthSpec,
    prefix: &str,
    index_offset: u64,
    references: &[Vec<usize>],
) -> Result<(Vec<Lattice>, Vec<(String, Vec<String>)>)> {
    let ln_marginal: Vec<f64> = generator
        .unigram_marginal()
        .iter()
        .map(|&p| p.ln())
        .collect();
    let mut lattices = Vec::with_capacity(references.len());
    let mut refs = Vec::with_capacity(references.len());
    for (i, sentence) in references.iter().enumerate() {
        let utt_id = format!("{prefix}-{i:05}");
        let lat = gen_lattice(
            generator,
            spec,
            &utt_id,
            index_offset + i as u64,
            sentence,
            &ln_marginal,
        )?;
        lattices.push(lat);
        refs.push((utt_id, generator.to_words(sentence)));
    }
    Ok((lattices, refs))
}
