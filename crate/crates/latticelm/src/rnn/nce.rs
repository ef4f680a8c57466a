//! Noise-contrastive estimation training.
//!
//! Each predicted token (every word of a sentence plus `</s>`) is scored
//! against `k` noise words drawn from a floored unigram distribution. With
//! `s(w)` the model score and `q` the noise distribution, the per-position
//! loss is
//!
//! ```text
//! -log sigmoid(s(w) - log(k q(w)))
//!     - sum over noise draws of log sigmoid(-(s(w') - log(k q(w'))))
//! ```
//!
//! whose minimiser scores `s(w) = log P(w|h)` with an implicit normaliser
//! of 1: this is what makes the scores usable directly as log
//! probabilities. Gradients run through full backpropagation through time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{RnnLm, StepTrace, Tensors};
use crate::numeric::{logsumexp, sigmoid, softplus};
use crate::seeds::rng_for;
use crate::vocab::{Vocab, WordId, EOS};
use crate::{Error, Result};

/// Floored, renormalised unigram noise distribution.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    /// Unigram distribution of the training corpus over the whole
    /// vocabulary (every sentence counts its words plus one `</s>`),
    /// floored at `floor` and renormalised.
    pub fn from_corpus(
        vocab: &Vocab,
        sentences: &[Vec<WordId>],
        floor: f64,
    ) -> Result<NoiseDistribution> {
        if !(floor > 0.0) {
            return Err(Error::InvalidArgument(
                "noise floor must be positive".into(),
            ));
        }
        let eos = vocab
            .id(EOS)
            .ok_or_else(|| Error::InvalidArgument(format!("vocabulary must contain {EOS}")))?;
        let mut counts = vec![0u64; vocab.len()];
        for sent in sentences {
            for &w in sent {
                if w as usize >= counts.len() {
                    return Err(Error::InvalidArgument(format!(
                        "word id {w} outside vocabulary of {} entries",
                        counts.len()
                    )));
                }
                counts[w as usize] += 1;
            }
            counts[eos as usize] += 1;
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::InvalidArgument(
                "cannot build a noise distribution from an empty corpus".into(),
            ));
        }
        let mut probs: Vec<f64> = counts
            .iter()
            .map(|&c| (c as f64 / total as f64).max(floor))
            .collect();
        let mass: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= mass;
        }
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        debug_assert!((acc - 1.0).abs() < 1e-12);
        Ok(NoiseDistribution { probs, cumulative })
    }

    pub fn prob(&self, w: WordId) -> f64 {
        self.probs[w as usize]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> WordId {
        let u: f64 = rng.random();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).expect("finite"))
        {
            Ok(i) | Err(i) => (i.min(self.probs.len() - 1)) as WordId,
        }
    }
}

/// NCE loss and parameter gradients over `sentences`, with noise words
/// drawn deterministically from `seed`. Returns (loss, gradients,
/// positions); the loss is summed, not averaged.
pub fn nce_loss_and_grads(
    model: &RnnLm,
    sentences: &[Vec<WordId>],
    noise: &NoiseDistribution,
    k: usize,
    seed: u64,
) -> Result<(f64, Tensors, usize)> {
    let mut rng = rng_for(seed, "nce-noise", 0);
    let mut grads = Tensors::zeros(model.vocab.len(), model.dim);
    let mut loss = 0.0;
    let mut positions = 0;
    for sent in sentences {
        loss += sentence_nce(model, sent, noise, k, &mut rng, &mut grads)?;
        positions += sent.len() + 1;
    }
    Ok((loss, grads, positions))
}

/// One sentence of NCE with full backpropagation through time,
/// accumulating into `grads`.
pub(crate) fn sentence_nce(
    model: &RnnLm,
    sentence: &[WordId],
    noise: &NoiseDistribution,
    k: usize,
    rng: &mut ChaCha8Rng,
    grads: &mut Tensors,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "NCE needs at least one noise sample".into(),
        ));
    }
    let v = model.vocab.len();
    for &w in sentence {
        if w as usize >= v {
            return Err(Error::InvalidArgument(format!(
                "word id {w} outside vocabulary of {v} entries"
            )));
        }
    }
    let bos = model.bos();
    let eos = model.eos();
    let kf = k as f64;

    // Forward: inputs are <s> then the words; position t predicts
    // targets[t] from the state after inputs[t].
    let inputs: Vec<WordId> = std::iter::once(bos).chain(sentence.iter().copied()).collect();
    let targets: Vec<WordId> = sentence.iter().copied().chain(std::iter::once(eos)).collect();
    let mut traces: Vec<StepTrace> = Vec::with_capacity(inputs.len());
    let mut hiddens = Vec::with_capacity(inputs.len());
    let mut h = model.zero_state();
    for &w in &inputs {
        let (h_next, trace) = model.step_traced(&h, w);
        traces.push(trace);
        hiddens.push(h_next.clone());
        h = h_next;
    }

    // Score terms and their gradients; collect dL/dh per position.
    let mut loss = 0.0;
    let mut dhs: Vec<ndarray::Array1<f64>> = Vec::with_capacity(targets.len());
    for (t, &target) in targets.iter().enumerate() {
        let h_t = &hiddens[t];
        let mut dh = ndarray::Array1::zeros(model.dim);
        let mut touch = |word: WordId, g: f64, dh: &mut ndarray::Array1<f64>| {
            grads.out_w.row_mut(word as usize).scaled_add(g, h_t);
            grads.out_b[word as usize] += g;
            dh.scaled_add(g, &model.tensors.out_w.row(word as usize).to_owned());
        };
        let u = model.score(h_t, target) - (kf * noise.prob(target)).ln();
        loss += softplus(-u);
        touch(target, sigmoid(u) - 1.0, &mut dh);
        for _ in 0..k {
            let w = noise.sample(rng);
            let vterm = model.score(h_t, w) - (kf * noise.prob(w)).ln();
            loss += softplus(vterm);
            touch(w, sigmoid(vterm), &mut dh);
        }
        dhs.push(dh);
    }

    // Backward through time.
    let mut carry = ndarray::Array1::zeros(model.dim);
    for t in (0..inputs.len()).rev() {
        carry += &dhs[t];
        carry = model.backprop_step(&traces[t], &carry, grads);
    }
    Ok(loss)
}

/// True-softmax perplexity over a corpus: every word of every sentence
/// plus `</s>` counts as one token. Errors on an empty corpus.
pub fn perplexity(model: &RnnLm, sentences: &[Vec<WordId>]) -> Result<f64> {
    let bos = model.bos();
    let eos = model.eos();
    let mut log_sum = 0.0;
    let mut tokens = 0usize;
    for sent in sentences {
        let mut h = model.step(&model.zero_state(), bos);
        for &w in sent.iter().chain(std::iter::once(&eos)) {
            let scores = model.all_scores(&h);
            let norm = logsumexp(scores.as_slice().expect("standard layout"));
            log_sum += scores[w as usize] - norm;
            tokens += 1;
            if w != eos {
                h = model.step(&h, w);
            }
        }
    }
    if tokens == 0 {
        return Err(Error::InvalidArgument(
            "perplexity of an empty corpus is undefined".into(),
        ));
    }
    Ok((-log_sum / tokens as f64).exp())
}

/// Configuration for NCE pretraining.
#[derive(Debug, Clone)]
pub struct NceTrainConfig {
    pub dim: usize,
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_sentences: usize,
    pub noise_floor: f64,
    pub seed: u64,
    /// Learning rate divides by `lr_decay` when the relative validation
    /// perplexity improvement over an epoch falls below this.
    pub decay_threshold: f64,
    pub lr_decay: f64,
}

impl Default for NceTrainConfig {
    fn default() -> Self {
        NceTrainConfig {
            dim: 32,
            k: 10,
            learning_rate: 0.1,
            epochs: 15,
            batch_sentences: 8,
            noise_floor: 1e-6,
            seed: 0,
            decay_threshold: 0.005,
            lr_decay: 4.0,
        }
    }
}

/// One epoch of training statistics.
#[derive(Debug, Clone)]
pub struct NceEpochStats {
    pub epoch: usize,
    /// Mean NCE loss per prediction over the epoch's updates.
    pub train_loss: f64,
    pub valid_ppl: f64,
    /// Learning rate in force during this epoch.
    pub learning_rate: f64,
}

/// Train a fresh model by NCE with SGD. Keeps the checkpoint with the
/// best validation perplexity. Deterministic for a fixed config.
pub fn train_nce(
    vocab: Vocab,
    train: &[Vec<WordId>],
    valid: &[Vec<WordId>],
    cfg: &NceTrainConfig,
) -> Result<(RnnLm, Vec<NceEpochStats>)> {
    let model = RnnLm::new(vocab, cfg.dim, cfg.seed)?;
    continue_nce(model, train, valid, cfg)
}

/// Continue NCE training from an existing model, e.g. to adapt it to new
/// text. The noise distribution is rebuilt from `train`, and `cfg.dim` is
/// ignored in favour of the model's own. Because the best-validation
/// checkpoint is kept and the starting model is a candidate, the returned
/// model's validation perplexity never exceeds the input's; zero epochs
/// return the input unchanged.
pub fn continue_nce(
    mut model: RnnLm,
    train: &[Vec<WordId>],
    valid: &[Vec<WordId>],
    cfg: &NceTrainConfig,
) -> Result<(RnnLm, Vec<NceEpochStats>)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if valid.is_empty() {
        return Err(Error::InvalidArgument("validation corpus is empty".into()));
    }
    if cfg.k == 0 {
        return Err(Error::InvalidArgument(
            "NCE needs at least one noise sample".into(),
        ));
    }
    if cfg.batch_sentences == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let noise = NoiseDistribution::from_corpus(&model.vocab, train, cfg.noise_floor)?;

    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut lr = cfg.learning_rate;
    let mut prev_ppl = perplexity(&model, valid)?;
    let mut best_ppl = prev_ppl;
    let mut best = model.clone();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle(&mut order, &mut rng_for(cfg.seed, "nce-epoch-order", epoch as u64));
        let mut noise_rng = rng_for(cfg.seed, "nce-epoch-noise", epoch as u64);

        let mut epoch_loss = 0.0;
        let mut epoch_positions = 0usize;
        for batch in order.chunks(cfg.batch_sentences) {
            let mut grads = Tensors::zeros(model.vocab.len(), model.dim);
            for &i in batch {
                epoch_loss +=
                    sentence_nce(&model, &train[i], &noise, cfg.k, &mut noise_rng, &mut grads)?;
                epoch_positions += train[i].len() + 1;
            }
            model.tensors.axpy(-lr, &grads);
        }

        let valid_ppl = perplexity(&model, valid)?;
        stats.push(NceEpochStats {
            epoch,
            train_loss: epoch_loss / epoch_positions.max(1) as f64,
            valid_ppl,
            learning_rate: lr,
        });
        if valid_ppl < best_ppl {
            best_ppl = valid_ppl;
            best = model.clone();
        }
        if prev_ppl - valid_ppl < cfg.decay_threshold * prev_ppl {
            lr /= cfg.lr_decay;
        }
        prev_ppl = valid_ppl;
    }
    Ok((best, stats))
}

/// Fisher-Yates shuffle driven by our deterministic RNG.
pub(crate) fn shuffle<T>(xs: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..xs.len()).rev() {
        let j = rng.random_range(0..=i);
        xs.swap(i, j);
    }
}
