//! Versioned binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "LMRNNCKP"
//! version u32      currently 1
//! dim     u32
//! vocab   u32 count, then per word: u32 byte length + UTF-8 bytes
//! tensors f64 x N  row-major, in declared tensor order
//! ```
//!
//! Floats round-trip bit-exactly. Loading rejects bad magic, unsupported
//! versions, truncated or oversized payloads, and malformed vocabularies.

use std::path::Path;

use super::{RnnLm, Tensors};
use crate::vocab::Vocab;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LMRNNCKP";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &RnnLm, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(model.vocab.len() as u32).to_le_bytes());
    for w in model.vocab.words() {
        let bytes = w.as_bytes();
        buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(bytes);
    }
    for x in model.tensors.flatten() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<RnnLm> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic: not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let dim = r.u32()? as usize;
    let vocab_len = r.u32()? as usize;
    let mut words = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        let n = r.u32()? as usize;
        let bytes = r.take(n)?;
        let w = std::str::from_utf8(bytes)
            .map_err(|_| Error::Checkpoint("vocabulary entry is not UTF-8".into()))?;
        words.push(w.to_string());
    }
    let vocab =
        Vocab::from_words(&words).map_err(|e| Error::Checkpoint(format!("bad vocabulary: {e}")))?;
    let mut tensors = Tensors::zeros(vocab_len, dim);
    let n = tensors.num_params();
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        flat.push(r.f64()?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after tensors",
            buf.len() - r.pos
        )));
    }
    tensors.set_from_flat(&flat)?;
    let model = RnnLm { vocab, dim, tensors };
    // Rebuilding guarantees the special tokens; reject checkpoints without.
    for tok in [crate::vocab::BOS, crate::vocab::EOS, crate::vocab::UNK] {
        if model.vocab.id(tok).is_none() {
            return Err(Error::Checkpoint(format!("vocabulary lacks {tok}")));
        }
    }
    Ok(model)
}
