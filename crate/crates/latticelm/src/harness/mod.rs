//! Synthetic desk-scale experiment harness.

pub mod ngram_est;
pub mod pipeline;
pub mod report;
pub mod synth;
