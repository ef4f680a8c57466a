//! Discriminative fine-tuning of the recurrent model on lattices.
//!
//! The training objective per utterance is the expected edit distance of
//! the rescored lattice plus `alpha` times the NCE loss of the reference
//! transcript; the latter anchors the scores to stay self-normalised
//! while the former pushes posterior mass towards low-error paths.
//!
//! Gradients flow from the expectation into each arc's interpolated
//! score, through the recurrent score's share of the interpolation, into
//! the output layer and the hidden state of the arc's source, and from
//! there back along the history tree. The tree itself (which incoming
//! arc supplied each state's hidden) is treated as a constant of the
//! forward pass: reselection under perturbed parameters is not
//! differentiated.

use ndarray::Array1;

use super::expected_edit_distance_scored;
use crate::config::TrainConfig;
use crate::edit::{edit_distance, wer, EditCounts};
use crate::lattice::{best_path, Lattice};
use crate::rnn::{
    rescore_forward, rescore_lattice, sentence_nce, HistoryTree, NoiseDistribution, RnnLm, Tensors,
};
use crate::seeds::rng_for;
use crate::vocab::{Vocab, WordId};
use crate::{Error, Result};
use std::collections::HashMap;

/// Unigram noise floor for the fine-tuning NCE term, matching the
/// pre-training default.
const NOISE_FLOOR: f64 = 1e-6;

/// One training utterance: an annotated, expanded lattice plus its
/// reference transcript.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub utt_id: String,
    pub lattice: Lattice,
    pub ref_words: Vec<String>,
    pub ref_ids: Vec<WordId>,
}

/// One evaluation utterance: an expanded lattice (costs not needed) plus
/// its reference transcript.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub utt_id: String,
    pub lattice: Lattice,
    pub ref_words: Vec<String>,
}

fn ref_map<'a>(refs: &'a [(String, Vec<String>)]) -> Result<HashMap<&'a str, &'a [String]>> {
    let mut map = HashMap::new();
    for (id, words) in refs {
        if map.insert(id.as_str(), words.as_slice()).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate reference for utterance {id}"
            )));
        }
    }
    Ok(map)
}

fn lookup_ref<'a>(
    map: &HashMap<&str, &'a [String]>,
    utt_id: &str,
) -> Result<&'a [String]> {
    let words = map
        .get(utt_id)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("no reference for utterance {utt_id}")))?;
    if words.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "empty reference for utterance {utt_id}"
        )));
    }
    Ok(words)
}

/// Pair fully costed lattices with their references for training.
pub fn prepare_items(
    lattices: Vec<Lattice>,
    refs: &[(String, Vec<String>)],
    vocab: &Vocab,
) -> Result<Vec<TrainItem>> {
    let map = ref_map(refs)?;
    lattices
        .into_iter()
        .map(|lattice| {
            if !lattice.is_fully_costed() {
                return Err(Error::invalid_lattice(
                    &lattice.utt_id,
                    "training needs edit costs on every arc; annotate before expanding",
                ));
            }
            let words = lookup_ref(&map, &lattice.utt_id)?;
            Ok(TrainItem {
                utt_id: lattice.utt_id.clone(),
                ref_words: words.to_vec(),
                ref_ids: vocab.ids_or_unk(words)?,
                lattice,
            })
        })
        .collect()
}

/// Pair lattices with references for evaluation only.
pub fn prepare_eval_items(
    lattices: Vec<Lattice>,
    refs: &[(String, Vec<String>)],
) -> Result<Vec<EvalItem>> {
    let map = ref_map(refs)?;
    lattices
        .into_iter()
        .map(|lattice| {
            let words = lookup_ref(&map, &lattice.utt_id)?;
            Ok(EvalItem {
                utt_id: lattice.utt_id.clone(),
                ref_words: words.to_vec(),
                lattice,
            })
        })
        .collect()
}

/// The two loss terms, both summed over utterances and unweighted; the
/// optimised objective is `embr + alpha * nce`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub embr: f64,
    pub nce: f64,
}

impl LossBreakdown {
    pub fn total(&self, alpha: f64) -> f64 {
        self.embr + alpha * self.nce
    }
}

/// Expected edit distance of one item; with `grads` the parameter
/// gradient of that expectation accumulates too. Returns the loss and
/// the history tree used.
fn embr_item(
    model: &RnnLm,
    item: &TrainItem,
    cfg: &TrainConfig,
    fixed: Option<&HistoryTree>,
    grads: Option<&mut Tensors>,
) -> Result<(f64, HistoryTree)> {
    let lattice = &item.lattice;
    let fwd = rescore_forward(lattice, model, &cfg.interp, &cfg.scales, fixed)?;
    let scores: Vec<f64> = lattice
        .arcs
        .iter()
        .enumerate()
        .map(|(ai, a)| cfg.scales.combine(a.am_logp, fwd.new_lm[ai]))
        .collect();
    let costs = super::arc_costs(lattice)?;
    let stats = expected_edit_distance_scored(lattice, &scores, &costs)?;

    if let Some(grads) = grads {
        let arc_grads = stats.arc_gradients();
        let n = lattice.num_states as usize;
        let mut dh: Vec<Array1<f64>> = vec![Array1::zeros(model.dim); n];
        // d combined / d rnn score = kappa * lm_scale * rho.
        let chain = cfg.scales.kappa * cfg.scales.lm_scale;
        for (ai, arc) in lattice.arcs.iter().enumerate() {
            let Some(w) = fwd.arc_word[ai] else { continue };
            let g = arc_grads[ai] * chain * fwd.rho[ai];
            if g == 0.0 {
                continue;
            }
            let wi = w as usize;
            let src = arc.src as usize;
            grads.out_w.row_mut(wi).scaled_add(g, &fwd.hidden[src]);
            grads.out_b[wi] += g;
            dh[src].scaled_add(g, &model.tensors.out_w.row(wi));
        }
        // Push hidden-state gradients back along the history tree.
        let order = lattice.topological_order()?;
        for &s in order.iter().rev() {
            let si = s as usize;
            let d = std::mem::take(&mut dh[si]);
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            if si == 0 {
                // The start hidden came from stepping <s> out of zeros.
                let trace = fwd.traces[0].as_ref().expect("start state is traced");
                model.backprop_step(trace, &d, grads);
                continue;
            }
            let ai = fwd.tree.chosen_arc[si].expect("non-start states have a chosen arc");
            let src = lattice.arcs[ai].src as usize;
            match &fwd.traces[si] {
                Some(trace) => {
                    let d_prev = model.backprop_step(trace, &d, grads);
                    dh[src] += &d_prev;
                }
                // Epsilon copy: the gradient passes through unchanged.
                None => dh[src] += &d,
            }
        }
    }

    Ok((stats.expected_loss, fwd.tree))
}

/// Losses and gradients over a set of items. `trees` freezes the history
/// selection; `grads` may be omitted to skip backpropagation.
fn run_items(
    model: &RnnLm,
    items: &[&TrainItem],
    noise: &NoiseDistribution,
    cfg: &TrainConfig,
    noise_stream: u64,
    trees: Option<&[HistoryTree]>,
    mut grads: Option<&mut Tensors>,
) -> Result<(LossBreakdown, Vec<HistoryTree>)> {
    if let Some(trees) = trees {
        if trees.len() != items.len() {
            return Err(Error::InvalidArgument(
                "one history tree per item is required".into(),
            ));
        }
    }
    let mut loss = LossBreakdown { embr: 0.0, nce: 0.0 };
    let mut out_trees = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let fixed = trees.map(|t| &t[i]);
        let (e, tree) = embr_item(model, item, cfg, fixed, grads.as_deref_mut())?;
        loss.embr += e;
        out_trees.push(tree);
    }
    // The NCE term, with one noise stream shared across the items.
    let mut rng = rng_for(cfg.seed, "embr-nce-noise", noise_stream);
    let mut nce_grads = Tensors::zeros(model.vocab.len(), model.dim);
    for item in items {
        loss.nce +=
            sentence_nce(model, &item.ref_ids, noise, cfg.nce_k, &mut rng, &mut nce_grads)?;
    }
    if let Some(grads) = grads {
        if cfg.alpha != 0.0 {
            grads.axpy(cfg.alpha, &nce_grads);
        }
    }
    Ok((loss, out_trees))
}

fn noise_from_items(vocab: &Vocab, items: &[TrainItem]) -> Result<NoiseDistribution> {
    let sentences: Vec<Vec<WordId>> = items.iter().map(|i| i.ref_ids.clone()).collect();
    NoiseDistribution::from_corpus(vocab, &sentences, NOISE_FLOOR)
}

fn borrow_all(items: &[TrainItem]) -> Vec<&TrainItem> {
    items.iter().collect()
}

/// Objective value over `items` under live history selection.
pub fn total_loss(
    model: &RnnLm,
    items: &[TrainItem],
    cfg: &TrainConfig,
    noise_stream: u64,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let noise = noise_from_items(&model.vocab, items)?;
    let (loss, _) = run_items(model, &borrow_all(items), &noise, cfg, noise_stream, None, None)?;
    Ok(loss)
}

/// Objective value and parameter gradient under live history selection.
pub fn total_loss_and_grads(
    model: &RnnLm,
    items: &[TrainItem],
    cfg: &TrainConfig,
    noise_stream: u64,
) -> Result<(LossBreakdown, Tensors)> {
    cfg.validate()?;
    let noise = noise_from_items(&model.vocab, items)?;
    let mut grads = Tensors::zeros(model.vocab.len(), model.dim);
    let (loss, _) = run_items(
        model,
        &borrow_all(items),
        &noise,
        cfg,
        noise_stream,
        None,
        Some(&mut grads),
    )?;
    Ok((loss, grads))
}

/// The history trees the model currently selects, one per item.
pub fn history_trees(model: &RnnLm, items: &[TrainItem], cfg: &TrainConfig) -> Result<Vec<HistoryTree>> {
    cfg.validate()?;
    items
        .iter()
        .map(|it| rescore_forward(&it.lattice, model, &cfg.interp, &cfg.scales, None).map(|f| f.tree))
        .collect()
}

/// Objective value and gradient with the history selection frozen to
/// `trees`. With the same `noise_stream`, repeated calls see identical
/// noise samples, making the objective a deterministic function of the
/// parameters.
pub fn total_loss_frozen(
    model: &RnnLm,
    items: &[TrainItem],
    trees: &[HistoryTree],
    cfg: &TrainConfig,
    noise_stream: u64,
) -> Result<(LossBreakdown, Tensors)> {
    cfg.validate()?;
    let noise = noise_from_items(&model.vocab, items)?;
    let mut grads = Tensors::zeros(model.vocab.len(), model.dim);
    let (loss, _) = run_items(
        model,
        &borrow_all(items),
        &noise,
        cfg,
        noise_stream,
        Some(trees),
        Some(&mut grads),
    )?;
    Ok((loss, grads))
}

/// Expected word error rate over the items: total expected edit distance
/// against total reference length, as a percentage.
pub fn expected_wer(model: &RnnLm, items: &[TrainItem], cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    let mut num = 0.0;
    let mut den = 0usize;
    for item in items {
        let (e, _) = embr_item(model, item, cfg, None, None)?;
        num += e;
        den += item.ref_words.len();
    }
    if den == 0 {
        return Err(Error::InvalidArgument(
            "expected error rate needs a non-empty item set".into(),
        ));
    }
    Ok(100.0 * num / den as f64)
}

/// Aggregate edit counts of the rescored one-best hypotheses.
pub fn rescored_counts(model: &RnnLm, items: &[EvalItem], cfg: &TrainConfig) -> Result<EditCounts> {
    cfg.validate()?;
    let mut counts = EditCounts::default();
    for item in items {
        let out = rescore_lattice(&item.lattice, model, &cfg.interp, &cfg.scales)?;
        let best = best_path(&out.lattice, &cfg.scales)?;
        counts += edit_distance(&best.words, &item.ref_words);
    }
    Ok(counts)
}

/// Word error rate of the rescored one-best hypotheses.
pub fn rescored_wer(model: &RnnLm, items: &[EvalItem], cfg: &TrainConfig) -> Result<f64> {
    wer(&rescored_counts(model, items, cfg)?)
}

/// One metrics row; row 0 describes the model before any update.
#[derive(Debug, Clone, Copy)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Parameter updates taken so far.
    pub step: usize,
    /// Mean expected edit distance per utterance.
    pub loss_embr: f64,
    /// Mean NCE loss per utterance, unweighted by alpha.
    pub loss_nce: f64,
    pub train_expected_wer: f64,
    /// NaN when no test items were given.
    pub test_wer: f64,
}

/// Render metrics as a tab-separated table with a header row.
pub fn metrics_to_tsv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch\tstep\tloss_embr\tloss_nce\ttrain_expected_wer\ttest_wer\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            r.epoch, r.step, r.loss_embr, r.loss_nce, r.train_expected_wer, r.test_wer
        ));
    }
    out
}

/// Group item indices into batches. Items are ordered by lattice size so
/// batches are even; a state budget, when set, caps the summed state
/// count per batch instead of the item count.
pub(crate) fn make_batches(items: &[TrainItem], cfg: &TrainConfig) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        (items[a].lattice.num_states, &items[a].utt_id)
            .cmp(&(items[b].lattice.num_states, &items[b].utt_id))
    });
    let mut batches = Vec::new();
    match cfg.batch_state_budget {
        Some(budget) => {
            let mut cur: Vec<usize> = Vec::new();
            let mut cur_states = 0usize;
            for i in idx {
                let s = items[i].lattice.num_states as usize;
                if !cur.is_empty() && cur_states + s > budget {
                    batches.push(std::mem::take(&mut cur));
                    cur_states = 0;
                }
                cur.push(i);
                cur_states += s;
            }
            if !cur.is_empty() {
                batches.push(cur);
            }
        }
        None => {
            for chunk in idx.chunks(cfg.batch_size) {
                batches.push(chunk.to_vec());
            }
        }
    }
    batches
}

/// Fine-tune `model` on the training items, reporting one metrics row
/// before training and one after each epoch. Fully deterministic in the
/// configured seed.
pub fn finetune_embr(
    model: &RnnLm,
    train: &[TrainItem],
    test: &[EvalItem],
    cfg: &TrainConfig,
) -> Result<(RnnLm, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("no training items".into()));
    }
    let mut m = model.clone();
    let noise = noise_from_items(&m.vocab, train)?;
    let batches = make_batches(train, cfg);
    let n_items = train.len() as f64;

    let eval_stream = |epoch: usize| ((epoch as u64) << 32) | 0xffff_ffff;
    let test_wer_now = |m: &RnnLm| -> Result<f64> {
        if test.is_empty() {
            Ok(f64::NAN)
        } else {
            rescored_wer(m, test, cfg)
        }
    };

    let mut metrics = Vec::with_capacity(cfg.epochs + 1);
    let (loss0, _) = run_items(
        &m,
        &borrow_all(train),
        &noise,
        cfg,
        eval_stream(0),
        None,
        None,
    )?;
    metrics.push(EpochMetrics {
        epoch: 0,
        step: 0,
        loss_embr: loss0.embr / n_items,
        loss_nce: loss0.nce / n_items,
        train_expected_wer: expected_wer(&m, train, cfg)?,
        test_wer: test_wer_now(&m)?,
    });

    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..batches.len()).collect();
        crate::rnn::shuffle(&mut order, &mut rng_for(cfg.seed, "embr-epoch", epoch as u64));
        let mut embr_sum = 0.0;
        let mut nce_sum = 0.0;
        for (bi, &b) in order.iter().enumerate() {
            let batch: Vec<&TrainItem> = batches[b].iter().map(|&i| &train[i]).collect();
            let mut grads = Tensors::zeros(m.vocab.len(), m.dim);
            let stream = ((epoch as u64) << 32) | bi as u64;
            let (loss, _) = run_items(&m, &batch, &noise, cfg, stream, None, Some(&mut grads))?;
            embr_sum += loss.embr;
            nce_sum += loss.nce;
            m.tensors.axpy(-cfg.learning_rate, &grads);
            step += 1;
        }
        metrics.push(EpochMetrics {
            epoch,
            step,
            loss_embr: embr_sum / n_items,
            loss_nce: nce_sum / n_items,
            train_expected_wer: expected_wer(&m, train, cfg)?,
            test_wer: test_wer_now(&m)?,
        });
    }
    Ok((m, metrics))
}
