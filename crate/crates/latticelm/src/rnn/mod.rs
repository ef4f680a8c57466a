//! Self-normalised GRU recurrent language model.
//!
//! A single-layer GRU with tied embedding and hidden sizes. The output
//! score of a word is `out_w[w] . h + out_b[w]`, used *directly* as a
//! natural-log probability without softmax normalisation: training by
//! noise-contrastive estimation drives the implicit normaliser towards 1.
//! Perplexity evaluation, by contrast, always uses the true softmax.
//!
//! Gate convention, with `x` the embedding of the input word:
//!
//! ```text
//! z  = sigmoid(Wz_in x + Wz_rec h + bz)
//! r  = sigmoid(Wr_in x + Wr_rec h + br)
//! hc = tanh(Wh_in x + Wh_rec (r * h) + bh)
//! h' = (1 - z) * h + z * hc
//! ```

mod checkpoint;
mod nce;
mod rescore;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use nce::{
    continue_nce, nce_loss_and_grads, perplexity, train_nce, NceEpochStats, NceTrainConfig,
    NoiseDistribution,
};
pub use rescore::{rescore_lattice, HistoryTree, RescoreOutput};
pub(crate) use nce::{sentence_nce, shuffle};
pub(crate) use rescore::rescore_forward;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numeric::logsumexp;
use crate::seeds::rng_for;
use crate::vocab::{Vocab, WordId, BOS, EOS, UNK};
use crate::{Error, Result};

/// All trainable tensors; doubles as the gradient accumulator type.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub emb: Array2<f64>,    // V x d
    pub wz_in: Array2<f64>,  // d x d
    pub wz_rec: Array2<f64>, // d x d
    pub wr_in: Array2<f64>,
    pub wr_rec: Array2<f64>,
    pub wh_in: Array2<f64>,
    pub wh_rec: Array2<f64>,
    pub bz: Array1<f64>, // d
    pub br: Array1<f64>,
    pub bh: Array1<f64>,
    pub out_w: Array2<f64>, // V x d
    pub out_b: Array1<f64>, // V
}

impl Tensors {
    pub fn zeros(vocab_len: usize, dim: usize) -> Tensors {
        Tensors {
            emb: Array2::zeros((vocab_len, dim)),
            wz_in: Array2::zeros((dim, dim)),
            wz_rec: Array2::zeros((dim, dim)),
            wr_in: Array2::zeros((dim, dim)),
            wr_rec: Array2::zeros((dim, dim)),
            wh_in: Array2::zeros((dim, dim)),
            wh_rec: Array2::zeros((dim, dim)),
            bz: Array1::zeros(dim),
            br: Array1::zeros(dim),
            bh: Array1::zeros(dim),
            out_w: Array2::zeros((vocab_len, dim)),
            out_b: Array1::zeros(vocab_len),
        }
    }

    fn views(&self) -> [&dyn TensorView; 12] {
        [
            &self.emb, &self.wz_in, &self.wz_rec, &self.wr_in, &self.wr_rec, &self.wh_in,
            &self.wh_rec, &self.bz, &self.br, &self.bh, &self.out_w, &self.out_b,
        ]
    }

    fn views_mut(&mut self) -> [&mut dyn TensorView; 12] {
        [
            &mut self.emb,
            &mut self.wz_in,
            &mut self.wz_rec,
            &mut self.wr_in,
            &mut self.wr_rec,
            &mut self.wh_in,
            &mut self.wh_rec,
            &mut self.bz,
            &mut self.br,
            &mut self.bh,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.views().iter().map(|v| v.len()).sum()
    }

    /// Concatenate all tensors, in declared order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for v in self.views() {
            v.extend_into(&mut out);
        }
        out
    }

    /// Inverse of [`Tensors::flatten`]; errors on length mismatch.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for v in self.views_mut() {
            let n = v.len();
            v.copy_from_slice_at(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Tensors) {
        self.emb.scaled_add(c, &other.emb);
        self.wz_in.scaled_add(c, &other.wz_in);
        self.wz_rec.scaled_add(c, &other.wz_rec);
        self.wr_in.scaled_add(c, &other.wr_in);
        self.wr_rec.scaled_add(c, &other.wr_rec);
        self.wh_in.scaled_add(c, &other.wh_in);
        self.wh_rec.scaled_add(c, &other.wh_rec);
        self.bz.scaled_add(c, &other.bz);
        self.br.scaled_add(c, &other.br);
        self.bh.scaled_add(c, &other.bh);
        self.out_w.scaled_add(c, &other.out_w);
        self.out_b.scaled_add(c, &other.out_b);
    }
}

/// Row-major access shared by 1- and 2-d tensors for (un)flattening.
trait TensorView {
    fn len(&self) -> usize;
    fn extend_into(&self, out: &mut Vec<f64>);
    fn copy_from_slice_at(&mut self, src: &[f64]);
}

impl TensorView for Array1<f64> {
    fn len(&self) -> usize {
        Array1::len(self)
    }
    fn extend_into(&self, out: &mut Vec<f64>) {
        out.extend(self.iter());
    }
    fn copy_from_slice_at(&mut self, src: &[f64]) {
        for (dst, &s) in self.iter_mut().zip(src) {
            *dst = s;
        }
    }
}

impl TensorView for Array2<f64> {
    fn len(&self) -> usize {
        Array2::len(self)
    }
    fn extend_into(&self, out: &mut Vec<f64>) {
        out.extend(self.iter());
    }
    fn copy_from_slice_at(&mut self, src: &[f64]) {
        for (dst, &s) in self.iter_mut().zip(src) {
            *dst = s;
        }
    }
}

/// The GRU language model: vocabulary, sizes, and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    pub vocab: Vocab,
    pub dim: usize,
    pub tensors: Tensors,
}

/// Saved intermediates of one GRU step, enough to backpropagate it.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub(crate) word: WordId,
    pub(crate) h_prev: Array1<f64>,
    pub(crate) z: Array1<f64>,
    pub(crate) r: Array1<f64>,
    pub(crate) hc: Array1<f64>,
}

impl RnnLm {
    /// Random initialisation. The vocabulary must contain `<s>`, `</s>`,
    /// and `<unk>`. Weights start uniform in [-0.1, 0.1]; output biases
    /// start at `ln(1/V)` so initial scores are roughly self-normalised.
    pub fn new(vocab: Vocab, dim: usize, seed: u64) -> Result<RnnLm> {
        if dim == 0 {
            return Err(Error::InvalidArgument("hidden size must be positive".into()));
        }
        for tok in [BOS, EOS, UNK] {
            if vocab.id(tok).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "model vocabulary must contain {tok}"
                )));
            }
        }
        let v = vocab.len();
        let mut rng = rng_for(seed, "rnn-init", 0);
        let mut t = Tensors::zeros(v, dim);
        let fill = |m: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
            for x in m.iter_mut() {
                *x = rng.random_range(-0.1..0.1);
            }
        };
        fill(&mut t.emb, &mut rng);
        fill(&mut t.wz_in, &mut rng);
        fill(&mut t.wz_rec, &mut rng);
        fill(&mut t.wr_in, &mut rng);
        fill(&mut t.wr_rec, &mut rng);
        fill(&mut t.wh_in, &mut rng);
        fill(&mut t.wh_rec, &mut rng);
        fill(&mut t.out_w, &mut rng);
        t.out_b.fill(-(v as f64).ln());
        Ok(RnnLm {
            vocab,
            dim,
            tensors: t,
        })
    }

    pub fn bos(&self) -> WordId {
        self.vocab.id(BOS).expect("validated at construction")
    }

    pub fn eos(&self) -> WordId {
        self.vocab.id(EOS).expect("validated at construction")
    }

    pub fn zero_state(&self) -> Array1<f64> {
        Array1::zeros(self.dim)
    }

    /// Advance the hidden state over one input word.
    pub fn step(&self, h: &Array1<f64>, word: WordId) -> Array1<f64> {
        self.step_traced(h, word).0
    }

    pub(crate) fn step_traced(&self, h: &Array1<f64>, word: WordId) -> (Array1<f64>, StepTrace) {
        let t = &self.tensors;
        let x = t.emb.row(word as usize);
        let mut az = t.wz_in.dot(&x);
        az += &t.wz_rec.dot(h);
        az += &t.bz;
        let z = az.mapv(crate::numeric::sigmoid);
        let mut ar = t.wr_in.dot(&x);
        ar += &t.wr_rec.dot(h);
        ar += &t.br;
        let r = ar.mapv(crate::numeric::sigmoid);
        let rh = &r * h;
        let mut ah = t.wh_in.dot(&x);
        ah += &t.wh_rec.dot(&rh);
        ah += &t.bh;
        let hc = ah.mapv(f64::tanh);
        let h_next = (1.0 - &z) * h + &z * &hc;
        let trace = StepTrace {
            word,
            h_prev: h.clone(),
            z,
            r,
            hc,
        };
        (h_next, trace)
    }

    /// Backpropagate one GRU step. `dh_next` is the loss gradient at the
    /// step's output; gradients accumulate into `grads` and the gradient
    /// at the step's input state is returned.
    pub(crate) fn backprop_step(
        &self,
        trace: &StepTrace,
        dh_next: &Array1<f64>,
        grads: &mut Tensors,
    ) -> Array1<f64> {
        let t = &self.tensors;
        let StepTrace {
            word,
            h_prev,
            z,
            r,
            hc,
        } = trace;
        let x = t.emb.row(*word as usize).to_owned();

        // h' = (1-z) h + z hc
        let dz = dh_next * &(hc - h_prev);
        let dhc = dh_next * z;
        let mut dh = dh_next * &(1.0 - z);

        // hc = tanh(ah), ah = Wh_in x + Wh_rec (r h) + bh
        let dah = &dhc * &(1.0 - hc * hc);
        outer_acc(&mut grads.wh_in, &dah, &x);
        outer_acc(&mut grads.wh_rec, &dah, &(r * h_prev));
        grads.bh += &dah;
        let drh = t.wh_rec.t().dot(&dah);
        let dr = &drh * h_prev;
        dh += &(&drh * r);
        let mut dx = t.wh_in.t().dot(&dah);

        // z = sigmoid(az)
        let daz = &dz * z * &(1.0 - z);
        outer_acc(&mut grads.wz_in, &daz, &x);
        outer_acc(&mut grads.wz_rec, &daz, h_prev);
        grads.bz += &daz;
        dh += &t.wz_rec.t().dot(&daz);
        dx += &t.wz_in.t().dot(&daz);

        // r = sigmoid(ar)
        let dar = &dr * r * &(1.0 - r);
        outer_acc(&mut grads.wr_in, &dar, &x);
        outer_acc(&mut grads.wr_rec, &dar, h_prev);
        grads.br += &dar;
        dh += &t.wr_rec.t().dot(&dar);
        dx += &t.wr_in.t().dot(&dar);

        grads
            .emb
            .row_mut(*word as usize)
            .scaled_add(1.0, &dx);
        dh
    }

    /// Self-normalised score of one word: used directly as a natural-log
    /// probability.
    pub fn score(&self, h: &Array1<f64>, word: WordId) -> f64 {
        self.tensors.out_w.row(word as usize).dot(h) + self.tensors.out_b[word as usize]
    }

    /// Scores of every vocabulary word.
    pub fn all_scores(&self, h: &Array1<f64>) -> Array1<f64> {
        let mut s = self.tensors.out_w.dot(h);
        s += &self.tensors.out_b;
        s
    }

    /// `ln sum_w exp(score(w))`: 0 for perfect self-normalisation.
    pub fn log_norm(&self, h: &Array1<f64>) -> f64 {
        logsumexp(self.all_scores(h).as_slice().expect("standard layout"))
    }

    /// |log-normaliser| at every prediction point of every sentence:
    /// after `<s>` and after each word. Fuel for self-normalisation
    /// diagnostics.
    pub fn log_norm_abs(&self, sentences: &[Vec<WordId>]) -> Vec<f64> {
        let bos = self.bos();
        let mut vals = Vec::new();
        for sent in sentences {
            let mut h = self.step(&self.zero_state(), bos);
            vals.push(self.log_norm(&h).abs());
            for &w in sent {
                h = self.step(&h, w);
                vals.push(self.log_norm(&h).abs());
            }
        }
        vals
    }
}

/// `m += outer(a, b)`, i.e. `m[i][j] += a[i] * b[j]`.
fn outer_acc(m: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            m.row_mut(i).scaled_add(ai, b);
        }
    }
}
