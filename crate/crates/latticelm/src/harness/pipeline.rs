//! End-to-end experiment pipelines on the synthetic task: pretrain an
//! n-gram and a recurrent model on generated text, build annotated and
//! expanded lattices, fine-tune on expected edit distance, and score
//! every stage against the references.

use crate::config::TrainConfig;
use crate::edit::annotate_lattice;
use crate::embr::{finetune_embr, EpochMetrics, EvalItem, TrainItem};
use crate::harness::ngram_est::estimate_ngram;
use crate::harness::report::{score_run, ScoreReport};
use crate::harness::synth::{
    build_generator, gen_corpus, gen_lattices, task_vocab, BigramGenerator, SynthSpec,
};
use crate::lattice::Lattice;
use crate::ngram::NGramModel;
use crate::rnn::{
    continue_nce, rescore_lattice, train_nce, NceEpochStats, NceTrainConfig, RnnLm,
};
use crate::vocab::{Vocab, WordId};
use crate::{Error, Result};

/// Everything one experiment run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    /// Language-model pretraining sentences.
    pub n_lm_train: usize,
    /// Validation sentences for pretraining and adaptation.
    pub n_lm_valid: usize,
    /// Fine-tuning lattices; their references are the first sentences of
    /// the pretraining split (in-domain transcripts).
    pub n_lat_train: usize,
    /// Held-out evaluation lattices over sentences absent from training.
    pub n_lat_test: usize,
    pub ngram_order: usize,
    pub nce: NceTrainConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthSpec::default(),
            n_lm_train: 4000,
            n_lm_valid: 400,
            n_lat_train: 1000,
            n_lat_test: 200,
            ngram_order: 2,
            nce: NceTrainConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Derive every stage's seed from one master seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.nce.seed = seed.wrapping_add(1);
        self.train.seed = seed.wrapping_add(2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.n_lm_train == 0 || self.n_lm_valid == 0 {
            return Err(Error::InvalidArgument(
                "pretraining needs at least one training and one validation sentence".into(),
            ));
        }
        if self.n_lat_train == 0 || self.n_lat_test == 0 {
            return Err(Error::InvalidArgument(
                "the experiment needs at least one training and one test lattice".into(),
            ));
        }
        if self.n_lat_train > self.n_lm_train {
            return Err(Error::InvalidArgument(format!(
                "training lattices ({}) cannot outnumber pretraining sentences ({})",
                self.n_lat_train, self.n_lm_train
            )));
        }
        if self.ngram_order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
        }
        Ok(())
    }
}

/// The pretrained state shared by fine-tuning runs: models, lattices, and
/// reference transcripts, ready for `finetune_embr` at any alpha.
#[derive(Debug)]
pub struct PreparedExperiment {
    pub vocab: Vocab,
    /// The generator's own perplexity, the floor for any model.
    pub generator_ppl: f64,
    pub ngram: NGramModel,
    /// NCE-pretrained recurrent model.
    pub model: RnnLm,
    pub nce_stats: Vec<NceEpochStats>,
    pub lm_train: Vec<Vec<WordId>>,
    pub lm_valid: Vec<Vec<WordId>>,
    /// Annotated, expanded fine-tuning lattices with their references.
    pub train_items: Vec<TrainItem>,
    pub test_items: Vec<EvalItem>,
    /// Expanded held-out lattices for baseline scoring.
    pub test_lattices: Vec<Lattice>,
    pub train_refs: Vec<(String, Vec<String>)>,
    pub test_refs: Vec<(String, Vec<String>)>,
}

fn to_word_ids(
    generator: &BigramGenerator,
    vocab: &Vocab,
    sentences: &[Vec<usize>],
) -> Vec<Vec<WordId>> {
    let ids: Vec<WordId> = generator
        .words
        .iter()
        .map(|w| vocab.id(w).expect("task vocabulary covers generator words"))
        .collect();
    sentences
        .iter()
        .map(|s| s.iter().map(|&w| ids[w]).collect())
        .collect()
}

/// Run every stage up to (but not including) fine-tuning.
pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let generator = build_generator(&cfg.synth)?;
    let vocab = task_vocab(&cfg.synth)?;
    let corpus = gen_corpus(
        &generator,
        cfg.n_lm_train,
        cfg.n_lm_valid,
        cfg.n_lat_test,
        cfg.synth.seed,
    )?;
    let lm_train = to_word_ids(&generator, &vocab, &corpus.train);
    let lm_valid = to_word_ids(&generator, &vocab, &corpus.valid);

    let ngram = estimate_ngram(&vocab, &lm_train, cfg.ngram_order)?;
    let (model, nce_stats) = train_nce(vocab.clone(), &lm_train, &lm_valid, &cfg.nce)?;

    let (train_lats, train_refs) = gen_lattices(
        &generator,
        &cfg.synth,
        "train",
        0,
        &corpus.train[..cfg.n_lat_train],
    )?;
    let (test_lats, test_refs) =
        gen_lattices(&generator, &cfg.synth, "test", 1u64 << 32, &corpus.test)?;

    // Training lattices: exact edit costs first, then n-gram expansion
    // (which preserves them); held-out lattices only need expansion.
    let mut train_expanded = Vec::with_capacity(train_lats.len());
    for (lat, (_, words)) in train_lats.iter().zip(train_refs.iter()) {
        let annotated = annotate_lattice(lat, words)?;
        train_expanded.push(crate::ngram::expand_lattice(&annotated.lattice, &ngram)?);
    }
    let test_lattices: Vec<Lattice> = test_lats
        .iter()
        .map(|lat| crate::ngram::expand_lattice(lat, &ngram))
        .collect::<Result<_>>()?;

    let train_items = crate::embr::prepare_items(train_expanded, &train_refs, &vocab)?;
    let test_items = crate::embr::prepare_eval_items(test_lattices.clone(), &test_refs)?;

    Ok(PreparedExperiment {
        vocab,
        generator_ppl: generator.analytic_perplexity(),
        ngram,
        model,
        nce_stats,
        lm_train,
        lm_valid,
        train_items,
        test_items,
        test_lattices,
        train_refs,
        test_refs,
    })
}

/// Score the held-out lattices after interpolated rescoring with `model`.
pub fn rescored_report(
    prepared: &PreparedExperiment,
    model: &RnnLm,
    cfg: &TrainConfig,
) -> Result<ScoreReport> {
    let rescored: Vec<Lattice> = prepared
        .test_lattices
        .iter()
        .map(|lat| rescore_lattice(lat, model, &cfg.interp, &cfg.scales).map(|o| o.lattice))
        .collect::<Result<_>>()?;
    score_run(&rescored, &prepared.test_refs, &cfg.scales)
}

/// A full run: prepared stages, fine-tuned model, per-epoch metrics, and
/// held-out reports for the n-gram baseline, the pretrained model, and
/// the fine-tuned model.
#[derive(Debug)]
pub struct ExperimentResult {
    pub prepared: PreparedExperiment,
    pub tuned: RnnLm,
    pub metrics: Vec<EpochMetrics>,
    pub report_ngram: ScoreReport,
    pub report_nce: ScoreReport,
    pub report_embr: ScoreReport,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prepared = prepare_experiment(cfg)?;
    let report_ngram = score_run(&prepared.test_lattices, &prepared.test_refs, &cfg.train.scales)?;
    let report_nce = rescored_report(&prepared, &prepared.model, &cfg.train)?;
    let (tuned, metrics) =
        finetune_embr(&prepared.model, &prepared.train_items, &prepared.test_items, &cfg.train)?;
    let report_embr = rescored_report(&prepared, &tuned, &cfg.train)?;
    Ok(ExperimentResult {
        prepared,
        tuned,
        metrics,
        report_ngram,
        report_nce,
        report_embr,
    })
}

/// Fine-tune once per alpha from the same pretrained model and report the
/// final held-out WER and training expected WER as TSV.
pub fn sweep_alpha(
    model: &RnnLm,
    train_items: &[TrainItem],
    test_items: &[EvalItem],
    train_cfg: &TrainConfig,
    alphas: &[f64],
) -> Result<String> {
    let mut out = String::from("alpha\tfinal_test_wer\tfinal_train_expected_wer\n");
    for &alpha in alphas {
        let cfg = TrainConfig { alpha, ..train_cfg.clone() };
        let (_, metrics) = finetune_embr(model, train_items, test_items, &cfg)?;
        let last = metrics.last().expect("metrics always include the initial row");
        out.push_str(&format!(
            "{alpha}\t{:.6}\t{:.6}\n",
            last.test_wer, last.train_expected_wer
        ));
    }
    Ok(out)
}

/// Plain NCE adaptation on raw text, the control experiment for
/// discriminative fine-tuning. The adaptation text doubles as the
/// validation set, and the best checkpoint is kept, so perplexity on that
/// text never increases; zero epochs return the model unchanged.
pub fn adapt_baseline(
    model: RnnLm,
    text: &[Vec<String>],
    cfg: &NceTrainConfig,
) -> Result<(RnnLm, Vec<NceEpochStats>)> {
    let ids: Vec<Vec<WordId>> = text
        .iter()
        .map(|s| model.vocab.ids_or_unk(s))
        .collect::<Result<_>>()?;
    continue_nce(model, &ids, &ids, cfg)
}

/// Oracle-decoded transcripts: per lattice, the words of the complete
/// path closest to the reference. With the reference path present in the
/// lattice this recovers the reference exactly.
pub fn oracle_transcripts(
    lattices: &[Lattice],
    refs: &[(String, Vec<String>)],
) -> Result<Vec<Vec<String>>> {
    let map: std::collections::HashMap<&str, &[String]> = refs
        .iter()
        .map(|(id, words)| (id.as_str(), words.as_slice()))
        .collect();
    lattices
        .iter()
        .map(|lat| {
            let reference = map.get(lat.utt_id.as_str()).copied().ok_or_else(|| {
                Error::InvalidArgument(format!("no reference for utterance {}", lat.utt_id))
            })?;
            Ok(crate::edit::oracle_path(lat, reference)?.words)
        })
        .collect()
}
