//! Command-line driver for the lattice fine-tuning toolkit.
//!
//! Subcommands cover the full pipeline: synthetic data generation,
//! NCE pretraining, edit-cost annotation, n-gram expansion, rescoring,
//! expected-edit-distance fine-tuning, adaptation baselines, and
//! reporting. Tables go to stdout; progress notes go to stderr.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

use latticelm::config::{InterpWeights, ScaleConfig, TrainConfig};
use latticelm::edit::annotate_lattice;
use latticelm::embr::{
    expected_edit_distance, finetune_embr, metrics_to_tsv, prepare_eval_items, prepare_items,
};
use latticelm::harness::ngram_est::estimate_ngram;
use latticelm::harness::pipeline::{adapt_baseline, oracle_transcripts, sweep_alpha};
use latticelm::harness::report::score_run;
use latticelm::harness::synth::{build_generator, gen_corpus, gen_lattices, task_vocab, SynthSpec};
use latticelm::lattice::{load_lattices, nbest_paths, save_lattices, write_refs};
use latticelm::ngram::parse_arpa;
use latticelm::rnn::{
    load_checkpoint, rescore_lattice, save_checkpoint, train_nce, NceEpochStats, NceTrainConfig,
};
use latticelm::vocab::{Vocab, WordId};

#[derive(Parser)]
#[command(
    name = "latticelm",
    version,
    about = "Word-lattice toolkit: annotation, expansion, rescoring, and \
             discriminative fine-tuning of a recurrent language model"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic task: corpus splits, lattices, references,
    /// vocabulary, and an estimated backoff n-gram model.
    Gen(GenArgs),
    /// Pretrain the recurrent model with noise-contrastive estimation.
    TrainNce(TrainNceArgs),
    /// Attach exact per-arc edit costs against reference transcripts.
    Annotate(AnnotateArgs),
    /// Expand lattices against a backoff n-gram model (exact arc scores).
    Expand(ExpandArgs),
    /// Replace lattice LM scores with the interpolated recurrent scores.
    Rescore(RescoreArgs),
    /// Fine-tune the recurrent model on expected word edit distance.
    FinetuneEmbr(FinetuneArgs),
    /// Adaptation baseline: plain NCE continuation on text or on
    /// oracle-decoded transcripts.
    Adapt(AdaptArgs),
    /// List the n best paths of each lattice.
    Nbest(NbestArgs),
    /// Expected edit distance of each lattice under its posterior.
    ExpectedWer(ExpectedWerArgs),
    /// Score lattices against references: WER, error breakdown, oracle.
    Score(ScoreArgs),
    /// Fine-tune once per alpha and tabulate final WERs.
    SweepAlpha(SweepArgs),
}

#[derive(Args)]
struct ScaleArgs {
    /// Acoustic score scale.
    #[arg(long, default_value_t = 1.0)]
    am_scale: f64,
    /// Language-model score scale.
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    /// Posterior sharpness: scales the whole combined score.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
}

impl ScaleArgs {
    fn config(&self) -> ScaleConfig {
        ScaleConfig {
            am_scale: self.am_scale,
            lm_scale: self.lm_scale,
            kappa: self.kappa,
        }
    }
}

#[derive(Args)]
struct InterpArgs {
    /// Interpolation weight of the recurrent model.
    #[arg(long, default_value_t = 0.9)]
    w_rnn: f64,
    /// Interpolation weight of the n-gram scores already on the arcs.
    #[arg(long, default_value_t = 0.1)]
    w_ng: f64,
}

impl InterpArgs {
    fn config(&self) -> Result<InterpWeights> {
        Ok(InterpWeights::new(self.w_rnn, self.w_ng)?)
    }
}

/// Fine-tuning options shared by `finetune-embr` and `sweep-alpha`.
#[derive(Args)]
struct TuneArgs {
    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    /// Lattices per batch.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Batch by total lattice states instead: a batch closes once its
    /// states exceed this budget.
    #[arg(long)]
    batch_states: Option<usize>,
    /// Noise samples per position for the NCE term.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    scales: ScaleArgs,
    #[command(flatten)]
    interp: InterpArgs,
}

impl TuneArgs {
    fn config(&self, alpha: f64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            alpha,
            learning_rate: self.lr,
            batch_size: self.batch,
            batch_state_budget: self.batch_states,
            epochs: self.epochs,
            seed: self.seed,
            scales: self.scales.config(),
            interp: self.interp.config()?,
            nce_k: self.k,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Directory the generated files are written into.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Content words in the vocabulary.
    #[arg(long, default_value_t = 100)]
    vocab_size: usize,
    /// Mean sentence length.
    #[arg(long, default_value_t = 8.0)]
    mean_len: f64,
    /// Hard cap on sentence length.
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    /// Pretraining sentences.
    #[arg(long, default_value_t = 4000)]
    n_lm_train: usize,
    /// Validation sentences.
    #[arg(long, default_value_t = 400)]
    n_lm_valid: usize,
    /// Fine-tuning lattices (references taken from the pretraining split).
    #[arg(long, default_value_t = 1000)]
    n_lat_train: usize,
    /// Held-out evaluation lattices.
    #[arg(long, default_value_t = 200)]
    n_lat_test: usize,
    /// Order of the estimated backoff n-gram model.
    #[arg(long, default_value_t = 2)]
    order: usize,
}

#[derive(Args)]
struct TrainNceArgs {
    /// Vocabulary file, one word per line.
    #[arg(long)]
    vocab: PathBuf,
    /// Training text, one sentence per line.
    #[arg(long)]
    train: PathBuf,
    /// Validation text, one sentence per line.
    #[arg(long)]
    valid: PathBuf,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Hidden dimension of the recurrent model.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Noise samples per position.
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Sentences per batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    lattices: PathBuf,
    /// Reference transcripts, `utt_id<TAB>words` per line.
    #[arg(long)]
    refs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    lattices: PathBuf,
    /// Backoff model in ARPA format.
    #[arg(long)]
    arpa: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RescoreArgs {
    /// Expanded lattices (one final state, epsilon end arcs).
    #[arg(long)]
    lattices: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scales: ScaleArgs,
    #[command(flatten)]
    interp: InterpArgs,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Annotated, expanded training lattices.
    #[arg(long)]
    lattices: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Starting model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Held-out lattices scored after every epoch.
    #[arg(long)]
    test_lattices: Option<PathBuf>,
    #[arg(long, requires = "test_lattices")]
    test_refs: Option<PathBuf>,
    /// Write the per-epoch metrics table here instead of stdout.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Weight of the auxiliary NCE loss on the references.
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Args)]
struct AdaptArgs {
    /// Starting model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Output model checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Adaptation text, one sentence per line.
    #[arg(long, conflicts_with_all = ["lattices", "refs"])]
    text: Option<PathBuf>,
    /// Adapt on oracle-decoded transcripts of these lattices instead.
    #[arg(long, requires = "refs")]
    lattices: Option<PathBuf>,
    /// References used to pick each lattice's oracle path.
    #[arg(long)]
    refs: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    /// Sentences per batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NbestArgs {
    #[arg(long)]
    lattices: PathBuf,
    /// Paths listed per lattice.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[command(flatten)]
    scales: ScaleArgs,
}

#[derive(Args)]
struct ExpectedWerArgs {
    /// Annotated lattices (every arc carries an edit cost).
    #[arg(long)]
    lattices: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    #[command(flatten)]
    scales: ScaleArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    lattices: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Label used for this run in the report.
    #[arg(long, default_value = "candidate")]
    label: String,
    /// Another lattice file to score as the comparison baseline.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "baseline")]
    baseline_label: String,
    #[command(flatten)]
    scales: ScaleArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Annotated, expanded training lattices.
    #[arg(long)]
    lattices: PathBuf,
    #[arg(long)]
    refs: PathBuf,
    /// Pretrained model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Held-out lattices for the final-WER column.
    #[arg(long)]
    test_lattices: PathBuf,
    #[arg(long)]
    test_refs: PathBuf,
    /// Alpha value to run; repeat the flag for each value.
    #[arg(long = "alpha", required = true)]
    alphas: Vec<f64>,
    #[command(flatten)]
    tune: TuneArgs,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_refs(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    Ok(latticelm::lattice::parse_refs(&read_text(path)?)?)
}

/// One sentence per line, whitespace-separated words; blank lines skipped.
fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

fn sentences_to_ids(vocab: &Vocab, sentences: &[Vec<String>]) -> Result<Vec<Vec<WordId>>> {
    sentences
        .iter()
        .map(|s| Ok(vocab.ids_or_unk(s)?))
        .collect()
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn nce_stats_tsv(stats: &[NceEpochStats]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tvalid_ppl\tlearning_rate\n");
    for s in stats {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\n",
            s.epoch, s.train_loss, s.valid_ppl, s.learning_rate
        ));
    }
    out
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = SynthSpec {
        vocab_size: a.vocab_size,
        mean_len: a.mean_len,
        max_len: a.max_len,
        seed: a.seed,
        ..SynthSpec::default()
    };
    if a.n_lat_train > a.n_lm_train {
        bail!(
            "training lattices ({}) cannot outnumber pretraining sentences ({})",
            a.n_lat_train,
            a.n_lm_train
        );
    }
    let generator = build_generator(&spec)?;
    let vocab = task_vocab(&spec)?;
    let corpus = gen_corpus(&generator, a.n_lm_train, a.n_lm_valid, a.n_lat_test, a.seed)?;

    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);

    write_file(&out("vocab.txt"), &format!("{}\n", vocab.words().join("\n")))?;
    let text_of = |split: &[Vec<usize>]| {
        split
            .iter()
            .map(|s| generator.to_words(s).join(" "))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    };
    write_file(&out("lm_train.txt"), &text_of(&corpus.train))?;
    write_file(&out("lm_valid.txt"), &text_of(&corpus.valid))?;

    let lm_train_ids: Vec<Vec<WordId>> = corpus
        .train
        .iter()
        .map(|s| vocab.ids_or_unk(&generator.to_words(s)))
        .collect::<latticelm::Result<_>>()?;
    let ngram = estimate_ngram(&vocab, &lm_train_ids, a.order)?;
    ngram.save(&out("ngram.arpa"))?;

    let (train_lats, train_refs) =
        gen_lattices(&generator, &spec, "train", 0, &corpus.train[..a.n_lat_train])?;
    let (test_lats, test_refs) =
        gen_lattices(&generator, &spec, "test", 1u64 << 32, &corpus.test)?;
    save_lattices(&out("train.lat"), &train_lats)?;
    save_lattices(&out("test.lat"), &test_lats)?;
    write_file(&out("train.ref"), &write_refs(&train_refs))?;
    write_file(&out("test.ref"), &write_refs(&test_refs))?;

    eprintln!(
        "wrote {} train and {} test lattices, {} + {} sentences, vocabulary {} \
         (generator perplexity {:.3}) to {}",
        train_lats.len(),
        test_lats.len(),
        corpus.train.len(),
        corpus.valid.len(),
        vocab.len(),
        generator.analytic_perplexity(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_train_nce(a: TrainNceArgs) -> Result<()> {
    let vocab = Vocab::parse(&read_text(&a.vocab)?)?;
    let train = sentences_to_ids(&vocab, &read_sentences(&a.train)?)?;
    let valid = sentences_to_ids(&vocab, &read_sentences(&a.valid)?)?;
    let cfg = NceTrainConfig {
        dim: a.dim,
        k: a.k,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_sentences: a.batch,
        seed: a.seed,
        ..NceTrainConfig::default()
    };
    let (model, stats) = train_nce(vocab, &train, &valid, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    print!("{}", nce_stats_tsv(&stats));
    eprintln!("saved checkpoint to {}", a.out.display());
    Ok(())
}

fn cmd_annotate(a: AnnotateArgs) -> Result<()> {
    let lattices = load_lattices(&a.lattices)?;
    let refs = load_refs(&a.refs)?;
    let map: std::collections::HashMap<&str, &[String]> = refs
        .iter()
        .map(|(id, words)| (id.as_str(), words.as_slice()))
        .collect();
    let mut annotated = Vec::with_capacity(lattices.len());
    for lat in &lattices {
        let reference = map
            .get(lat.utt_id.as_str())
            .copied()
            .with_context(|| format!("no reference for utterance {}", lat.utt_id))?;
        annotated.push(annotate_lattice(lat, reference)?.lattice);
    }
    save_lattices(&a.out, &annotated)?;
    eprintln!("annotated {} lattices into {}", annotated.len(), a.out.display());
    Ok(())
}

fn cmd_expand(a: ExpandArgs) -> Result<()> {
    let lattices = load_lattices(&a.lattices)?;
    let model = parse_arpa(&read_text(&a.arpa)?)?;
    let expanded: Vec<_> = lattices
        .iter()
        .map(|l| latticelm::ngram::expand_lattice(l, &model))
        .collect::<latticelm::Result<_>>()?;
    save_lattices(&a.out, &expanded)?;
    eprintln!("expanded {} lattices into {}", expanded.len(), a.out.display());
    Ok(())
}

fn cmd_rescore(a: RescoreArgs) -> Result<()> {
    let lattices = load_lattices(&a.lattices)?;
    let model = load_checkpoint(&a.model)?;
    let interp = a.interp.config()?;
    let scales = a.scales.config();
    let rescored: Vec<_> = lattices
        .iter()
        .map(|l| rescore_lattice(l, &model, &interp, &scales).map(|o| o.lattice))
        .collect::<latticelm::Result<_>>()?;
    save_lattices(&a.out, &rescored)?;
    eprintln!("rescored {} lattices into {}", rescored.len(), a.out.display());
    Ok(())
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let cfg = a.tune.config(a.alpha)?;
    let train_items = prepare_items(
        load_lattices(&a.lattices)?,
        &load_refs(&a.refs)?,
        &model.vocab,
    )?;
    let test_items = match (&a.test_lattices, &a.test_refs) {
        (Some(lats), Some(refs)) => prepare_eval_items(load_lattices(lats)?, &load_refs(refs)?)?,
        (Some(_), None) => bail!("--test-lattices needs --test-refs"),
        _ => Vec::new(),
    };
    let (tuned, metrics) = finetune_embr(&model, &train_items, &test_items, &cfg)?;
    save_checkpoint(&tuned, &a.out)?;
    let table = metrics_to_tsv(&metrics);
    match &a.metrics {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    eprintln!("saved fine-tuned checkpoint to {}", a.out.display());
    Ok(())
}

fn cmd_adapt(a: AdaptArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let text = match (&a.text, &a.lattices, &a.refs) {
        (Some(path), None, None) => read_sentences(path)?,
        (None, Some(lats), Some(refs)) => {
            oracle_transcripts(&load_lattices(lats)?, &load_refs(refs)?)?
        }
        _ => bail!("pass either --text, or --lattices with --refs"),
    };
    if text.is_empty() {
        bail!("adaptation text is empty");
    }
    let cfg = NceTrainConfig {
        k: a.k,
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_sentences: a.batch,
        seed: a.seed,
        ..NceTrainConfig::default()
    };
    let (adapted, stats) = adapt_baseline(model, &text, &cfg)?;
    save_checkpoint(&adapted, &a.out)?;
    print!("{}", nce_stats_tsv(&stats));
    eprintln!("saved adapted checkpoint to {}", a.out.display());
    Ok(())
}

fn cmd_nbest(a: NbestArgs) -> Result<()> {
    if a.n == 0 {
        bail!("--n must be at least 1");
    }
    let lattices = load_lattices(&a.lattices)?;
    let scales = a.scales.config();
    println!("utt_id\trank\tscore\twords");
    for lat in &lattices {
        for (rank, path) in nbest_paths(lat, a.n, &scales)?.iter().enumerate() {
            println!(
                "{}\t{}\t{:.6}\t{}",
                lat.utt_id,
                rank + 1,
                path.score,
                path.words.join(" ")
            );
        }
    }
    Ok(())
}

fn cmd_expected_wer(a: ExpectedWerArgs) -> Result<()> {
    let lattices = load_lattices(&a.lattices)?;
    let refs = load_refs(&a.refs)?;
    let map: std::collections::HashMap<&str, usize> =
        refs.iter().map(|(id, words)| (id.as_str(), words.len())).collect();
    let scales = a.scales.config();
    let mut total_expected = 0.0;
    let mut total_words = 0usize;
    println!("utt_id\texpected_errors\tref_words");
    for lat in &lattices {
        let n = *map
            .get(lat.utt_id.as_str())
            .with_context(|| format!("no reference for utterance {}", lat.utt_id))?;
        let e = expected_edit_distance(lat, &scales)?.expected_loss;
        total_expected += e;
        total_words += n;
        println!("{}\t{:.6}\t{}", lat.utt_id, e, n);
    }
    if total_words == 0 {
        bail!("references are empty");
    }
    println!("# corpus expected WER: {:.6}", 100.0 * total_expected / total_words as f64);
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let refs = load_refs(&a.refs)?;
    let scales = a.scales.config();
    let report = score_run(&load_lattices(&a.lattices)?, &refs, &scales)?;
    match &a.baseline {
        Some(path) => {
            let base = score_run(&load_lattices(path)?, &refs, &scales)?;
            print!("{}", base.render(&a.baseline_label)?);
            print!("{}", report.render_vs(&a.label, &a.baseline_label, &base)?);
        }
        None => print!("{}", report.render(&a.label)?),
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let train_items = prepare_items(
        load_lattices(&a.lattices)?,
        &load_refs(&a.refs)?,
        &model.vocab,
    )?;
    let test_items = prepare_eval_items(load_lattices(&a.test_lattices)?, &load_refs(&a.test_refs)?)?;
    let cfg = a.tune.config(0.0)?;
    print!("{}", sweep_alpha(&model, &train_items, &test_items, &cfg, &a.alphas)?);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::TrainNce(a) => cmd_train_nce(a),
        Cmd::Annotate(a) => cmd_annotate(a),
        Cmd::Expand(a) => cmd_expand(a),
        Cmd::Rescore(a) => cmd_rescore(a),
        Cmd::FinetuneEmbr(a) => cmd_finetune(a),
        Cmd::Adapt(a) => cmd_adapt(a),
        Cmd::Nbest(a) => cmd_nbest(a),
        Cmd::ExpectedWer(a) => cmd_expected_wer(a),
        Cmd::Score(a) => cmd_score(a),
        Cmd::SweepAlpha(a) => cmd_sweep(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
