//! Word vocabulary with stable integer ids.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

/// Sentence-start token (context only; never predicted).
pub const BOS: &str = "<s>";
/// Sentence-end token.
pub const EOS: &str = "</s>";
/// Unknown-word token.
pub const UNK: &str = "<unk>";
/// Reserved epsilon label on lattice arcs; not a vocabulary word.
pub const EPSILON: &str = "<eps>";

pub type WordId = u32;

/// A bidirectional word <-> id map. Ids are dense and equal to insertion
/// order, which for files is the 0-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocab {
    /// Build from a word list. Duplicate or empty words are rejected, as is
    /// the reserved epsilon label.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Vocab> {
        let mut v = Vocab {
            words: Vec::with_capacity(words.len()),
            index: HashMap::with_capacity(words.len()),
        };
        for w in words {
            v.push(w.as_ref())?;
        }
        Ok(v)
    }

    fn push(&mut self, word: &str) -> Result<WordId> {
        if word.is_empty() || word.split_whitespace().count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary word {word:?} must be a single non-empty token"
            )));
        }
        if word == EPSILON {
            return Err(Error::InvalidArgument(format!(
                "reserved label {EPSILON:?} cannot be a vocabulary word"
            )));
        }
        if self.index.contains_key(word) {
            return Err(Error::InvalidArgument(format!(
                "duplicate vocabulary word {word:?}"
            )));
        }
        let id = self.words.len() as WordId;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    /// Id of `word`, falling back to `<unk>`. Errors if neither is present.
    pub fn id_or_unk(&self, word: &str) -> Result<WordId> {
        self.id(word).or_else(|| self.id(UNK)).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "word {word:?} not in vocabulary and no {UNK} entry"
            ))
        })
    }

    pub fn word(&self, id: WordId) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Map a sentence to ids with `<unk>` fallback.
    pub fn ids_or_unk<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<WordId>> {
        words.iter().map(|w| self.id_or_unk(w.as_ref())).collect()
    }

    /// Parse a vocabulary from text: one word per line, id = line number.
    /// Blank lines are rejected (ids must stay dense).
    pub fn parse(text: &str) -> Result<Vocab> {
        let mut v = Vocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let word = line.trim();
            if word.is_empty() {
                return Err(Error::parse(i + 1, "blank line in vocabulary file"));
            }
            v.push(word).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        Vocab::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
