//! Toolkit for discriminative fine-tuning of a recurrent language model on
//! word lattices.
//!
//! The pipeline implemented here takes word lattices produced by a
//! first-pass recognizer, annotates every arc with an exact word-level edit
//! cost against a reference transcript, expands the lattices with a backoff
//! n-gram model so that arc language-model scores become exact conditional
//! probabilities, rescores them with a self-normalised GRU language model
//! under a best-score history approximation, and then fine-tunes the GRU by
//! gradient descent on the expected edit distance of the lattice posterior
//! (minimum Bayes risk over word errors), interpolated with a
//! noise-contrastive estimation loss on the reference transcripts.
//!
//! Modules:
//!
//! - [`lattice`]: lattice data model, text format, path operations
//! - [`edit`]: edit distances, error counts, exact per-arc cost annotation
//! - [`ngram`]: backoff n-gram models (ARPA format) and lattice expansion
//! - [`rnn`]: GRU language model, NCE training, checkpointing, rescoring
//! - [`embr`]: expected-edit-distance computation, gradients, fine-tuning
//! - [`harness`]: synthetic experiment harness (corpus and lattice
//!   generation, n-gram estimation, scoring reports, parameter sweeps)

pub mod config;
pub mod edit;
pub mod embr;
mod error;
pub mod harness;
pub mod lattice;
pub mod ngram;
mod numeric;
pub mod rnn;
pub mod seeds;
pub mod vocab;

pub use error::{Error, Result};
