//! Backoff n-gram language models in the ARPA text format.
//!
//! Probabilities and backoff weights are stored in log base 10 exactly as
//! the format specifies; every query converts to natural log at the
//! boundary, so the rest of the toolkit deals in natural-log scores only.

mod expand;

pub use expand::expand_lattice;

use std::collections::HashMap;

use crate::vocab::{Vocab, WordId, BOS, EOS, UNK};
use crate::{Error, Result};

/// Log10 probability floor for words with no usable entry: 1e-10.
const FLOOR_LOG10: f64 = -10.0;

/// Sentinel id for out-of-vocabulary tokens when the model has no `<unk>`
/// entry; never appears as a table key.
const OOV: WordId = WordId::MAX;

const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy)]
struct Entry {
    logp10: f64,
    bow10: f64,
}

/// A backoff n-gram model.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    /// `tables[k]` maps (k+1)-gram id sequences to entries.
    tables: Vec<HashMap<Vec<WordId>, Entry>>,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Map a token to an id for queries: vocabulary id, else `<unk>`'s id,
    /// else the out-of-vocabulary sentinel.
    pub(crate) fn resolve(&self, word: &str) -> WordId {
        self.vocab
            .id(word)
            .or_else(|| self.vocab.id(UNK))
            .unwrap_or(OOV)
    }

    /// Natural-log conditional probability of `word` after `history`
    /// (most recent last). History is truncated to the model order; words
    /// without a usable unigram fall back to a fixed floor.
    pub fn logprob(&self, word: &str, history: &[&str]) -> f64 {
        let w = self.resolve(word);
        let h: Vec<WordId> = history.iter().map(|t| self.resolve(t)).collect();
        self.logprob_ids(w, &h)
    }

    /// Id-level variant of [`NGramModel::logprob`].
    pub fn logprob_ids(&self, word: WordId, history: &[WordId]) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        self.lp10(word, &history[start..]) * LN_10
    }

    fn lp10(&self, word: WordId, hist: &[WordId]) -> f64 {
        if hist.is_empty() {
            return match self.tables[0].get([word].as_slice()) {
                Some(e) => e.logp10,
                None => FLOOR_LOG10,
            };
        }
        let mut key = Vec::with_capacity(hist.len() + 1);
        key.extend_from_slice(hist);
        key.push(word);
        if let Some(e) = self.tables[hist.len()].get(&key) {
            return e.logp10;
        }
        let bow = self.tables[hist.len() - 1]
            .get(hist)
            .map_or(0.0, |e| e.bow10);
        bow + self.lp10(word, &hist[1..])
    }

    /// Natural-log probability of a whole sentence: every word in order
    /// given its history seeded with `<s>`, plus `</s>` at the end.
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut hist: Vec<WordId> = vec![self.resolve(BOS)];
        let cap = self.order.saturating_sub(1);
        let mut total = 0.0;
        for w in words
            .iter()
            .map(|w| self.resolve(w.as_ref()))
            .chain(std::iter::once(self.resolve(EOS)))
        {
            total += self.logprob_ids(w, &hist);
            hist.push(w);
            if hist.len() > cap {
                let drop = hist.len() - cap;
                hist.drain(..drop);
            }
        }
        total
    }

    /// Sum of conditional probabilities over the entire vocabulary for a
    /// fixed history; at most 1 for a proper model (sentence starts carry
    /// negligible mass by convention).
    pub fn prob_sum(&self, history: &[&str]) -> f64 {
        let h: Vec<WordId> = history.iter().map(|t| self.resolve(t)).collect();
        (0..self.vocab.len() as WordId)
            .map(|w| self.logprob_ids(w, &h).exp())
            .sum()
    }

    /// Build a model directly from tables in log10; used by estimation.
    /// `grams[k]` lists ((k+1)-gram ids, logp10, bow10).
    pub(crate) fn from_tables(
        vocab: Vocab,
        grams: Vec<Vec<(Vec<WordId>, f64, f64)>>,
    ) -> Result<NGramModel> {
        if grams.is_empty() {
            return Err(Error::InvalidArgument(
                "an n-gram model needs at least unigrams".into(),
            ));
        }
        let order = grams.len();
        let mut tables = Vec::with_capacity(order);
        for (k, entries) in grams.into_iter().enumerate() {
            let mut table = HashMap::with_capacity(entries.len());
            for (key, logp10, bow10) in entries {
                debug_assert_eq!(key.len(), k + 1);
                table.insert(key, Entry { logp10, bow10 });
            }
            tables.push(table);
        }
        Ok(NGramModel {
            order,
            vocab,
            tables,
        })
    }

    /// Render in the ARPA format, entries sorted by id sequence.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for k in 0..self.order {
            out.push_str(&format!("ngram {}={}\n", k + 1, self.tables[k].len()));
        }
        for k in 0..self.order {
            out.push_str(&format!("\n\\{}-grams:\n", k + 1));
            let mut keys: Vec<&Vec<WordId>> = self.tables[k].keys().collect();
            keys.sort();
            for key in keys {
                let e = &self.tables[k][key];
                let words: Vec<&str> = key.iter().map(|&w| self.vocab.word(w)).collect();
                out.push_str(&format!("{:.12}\t{}", e.logp10, words.join(" ")));
                if k + 1 < self.order && e.bow10 != 0.0 {
                    out.push_str(&format!("\t{:.12}", e.bow10));
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_arpa())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<NGramModel> {
        parse_arpa(&std::fs::read_to_string(path)?)
    }
}

/// Parse an ARPA model. Errors carry 1-based line numbers and cover
/// malformed headers and entries, count mismatches, and higher-order
/// entries over words missing from the unigram table.
pub fn parse_arpa(text: &str) -> Result<NGramModel> {
    enum Phase {
        Preamble,
        Counts,
        Section(usize),
        Done,
    }

    let mut phase = Phase::Preamble;
    let mut declared: Vec<(usize, usize)> = Vec::new();
    let mut order = 0usize;
    let mut vocab_words: Vec<String> = Vec::new();
    let mut index: HashMap<String, WordId> = HashMap::new();
    // Raw rows per order: (ids, logp10, bow10).
    let mut grams: Vec<Vec<(Vec<WordId>, f64, f64)>> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match phase {
            Phase::Preamble => {
                if line == "\\data\\" {
                    phase = Phase::Counts;
                }
                // Anything before \data\ is header text; ignored.
            }
            Phase::Counts => {
                if let Some(rest) = line.strip_prefix("ngram ") {
                    let (k, n) = rest.split_once('=').ok_or_else(|| {
                        Error::parse(lineno, format!("malformed count line {line:?}"))
                    })?;
                    let k: usize = k.trim().parse().map_err(|_| {
                        Error::parse(lineno, format!("bad n-gram order {k:?}"))
                    })?;
                    let n: usize = n.trim().parse().map_err(|_| {
                        Error::parse(lineno, format!("bad n-gram count {n:?}"))
                    })?;
                    if k == 0 {
                        return Err(Error::parse(lineno, "n-gram order 0 is invalid"));
                    }
                    declared.push((k, n));
                } else if let Some(k) = parse_section_header(line) {
                    // Counts done; validate that orders are 1..=n.
                    order = declared.len();
                    if order == 0 {
                        return Err(Error::parse(lineno, "no ngram count lines before sections"));
                    }
                    for (pos, &(k2, _)) in declared.iter().enumerate() {
                        if k2 != pos + 1 {
                            return Err(Error::parse(
                                lineno,
                                format!("n-gram orders must be contiguous from 1, got {k2}"),
                            ));
                        }
                    }
                    grams = vec![Vec::new(); order];
                    if k != 1 {
                        return Err(Error::parse(lineno, "sections must start with \\1-grams:"));
                    }
                    phase = Phase::Section(k);
                } else {
                    return Err(Error::parse(
                        lineno,
                        format!("expected ngram count line or section header, found {line:?}"),
                    ));
                }
            }
            Phase::Section(k) => {
                if let Some(k2) = parse_section_header(line) {
                    if k2 > order {
                        return Err(Error::parse(
                            lineno,
                            format!("section order {k2} exceeds declared maximum {order}"),
                        ));
                    }
                    if k2 <= k {
                        return Err(Error::parse(lineno, "sections must appear in rising order"));
                    }
                    phase = Phase::Section(k2);
                } else if line == "\\end\\" {
                    phase = Phase::Done;
                } else {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    let has_bow = match fields.len() {
                        n if n == k + 1 => false,
                        n if n == k + 2 && k < order => true,
                        _ => {
                            return Err(Error::parse(
                                lineno,
                                format!("malformed {k}-gram entry {line:?}"),
                            ))
                        }
                    };
                    let logp10: f64 = fields[0].parse().map_err(|_| {
                        Error::parse(lineno, format!("bad log probability {:?}", fields[0]))
                    })?;
                    let bow10: f64 = if has_bow {
                        fields[k + 1].parse().map_err(|_| {
                            Error::parse(lineno, format!("bad backoff weight {:?}", fields[k + 1]))
                        })?
                    } else {
                        0.0
                    };
                    let mut ids = Vec::with_capacity(k);
                    for &w in &fields[1..=k] {
                        match index.get(w) {
                            Some(&id) => ids.push(id),
                            None if k == 1 => {
                                let id = vocab_words.len() as WordId;
                                vocab_words.push(w.to_string());
                                index.insert(w.to_string(), id);
                                ids.push(id);
                            }
                            None => {
                                return Err(Error::parse(
                                    lineno,
                                    format!("{k}-gram uses word {w:?} with no unigram entry"),
                                ));
                            }
                        }
                    }
                    grams[k - 1].push((ids, logp10, bow10));
                }
            }
            Phase::Done => {
                return Err(Error::parse(lineno, "content after \\end\\"));
            }
        }
    }
    if !matches!(phase, Phase::Done) {
        return Err(Error::InvalidArgument("ARPA text has no \\end\\".into()));
    }
    for &(k, n) in &declared {
        let got = grams[k - 1].len();
        if got != n {
            return Err(Error::InvalidArgument(format!(
                "ARPA declares {n} {k}-grams but lists {got}"
            )));
        }
    }
    let vocab = Vocab::from_words(&vocab_words)?;
    NGramModel::from_tables(vocab, grams)
}

fn parse_section_header(line: &str) -> Option<usize> {
    line.strip_prefix('\\')?
        .strip_suffix("-grams:")?
        .parse()
        .ok()
}
