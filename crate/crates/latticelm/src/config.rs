//! Shared configuration types.

use crate::{Error, Result};

/// Score scaling applied when combining arc scores.
///
/// The combined score of an arc is
/// `kappa * (am_scale * am_logp + lm_scale * lm_logp)`; all scores are
/// natural-log probabilities (higher is better).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConfig {
    pub am_scale: f64,
    pub lm_scale: f64,
    /// Posterior sharpness: scales the whole combined score.
    pub kappa: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            am_scale: 1.0,
            lm_scale: 1.0,
            kappa: 1.0,
        }
    }
}

impl ScaleConfig {
    pub fn combine(&self, am_logp: f64, lm_logp: f64) -> f64 {
        self.kappa * (self.am_scale * am_logp + self.lm_scale * lm_logp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("am_scale", self.am_scale),
            ("lm_scale", self.lm_scale),
            ("kappa", self.kappa),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Interpolation weights for combining recurrent and n-gram language-model
/// probabilities in probability space:
/// `p = w_rnn * p_rnn + w_ng * p_ng`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpWeights {
    pub w_rnn: f64,
    pub w_ng: f64,
}

impl Default for InterpWeights {
    fn default() -> Self {
        InterpWeights {
            w_rnn: 0.9,
            w_ng: 0.1,
        }
    }
}

impl InterpWeights {
    pub fn new(w_rnn: f64, w_ng: f64) -> Result<Self> {
        let w = InterpWeights { w_rnn, w_ng };
        w.validate()?;
        Ok(w)
    }

    /// Weights must be non-negative and sum to one (tolerance 1e-9).
    pub fn validate(&self) -> Result<()> {
        if !(self.w_rnn >= 0.0 && self.w_ng >= 0.0) {
            return Err(Error::InvalidArgument(
                "interpolation weights must be non-negative".into(),
            ));
        }
        if (self.w_rnn + self.w_ng - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "interpolation weights must sum to 1, got {}",
                self.w_rnn + self.w_ng
            )));
        }
        Ok(())
    }
}

/// Configuration for fine-tuning on expected edit distance.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the NCE loss on reference transcripts added to the
    /// expected-edit-distance loss.
    pub alpha: f64,
    /// SGD learning rate.
    pub learning_rate: f64,
    /// Number of lattices per batch when `batch_state_budget` is `None`.
    pub batch_size: usize,
    /// If set, lattices are batched by total state count instead: a batch
    /// closes once its states exceed this budget.
    pub batch_state_budget: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub scales: ScaleConfig,
    pub interp: InterpWeights,
    /// Noise samples per position for the NCE term.
    pub nce_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.25,
            learning_rate: 0.01,
            batch_size: 32,
            batch_state_budget: None,
            epochs: 3,
            seed: 0,
            scales: ScaleConfig::default(),
            interp: InterpWeights::default(),
            nce_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scales.validate()?;
        self.interp.validate()?;
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument(
                "alpha must be finite and non-negative".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.batch_state_budget == Some(0) {
            return Err(Error::InvalidArgument(
                "batch state budget must be positive".into(),
            ));
        }
        Ok(())
    }
}
