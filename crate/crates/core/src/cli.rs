//! Command-line entry points.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors (unreadable
//! or malformed inputs, failed checks).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    generate_pairs, load_stance_corpus, read_pairs, resolve_topic, split_dataset, write_pairs,
    DatasetSplit, UtterancePair,
};
use crate::model::{encode_pair, Architecture};
use crate::synthetic::{
    desk_config, desk_gradient_check, keyword_corpus, random_embeddings, SyntheticSpec,
};
use crate::text::{tokenize, EmbeddingTable, Vocabulary};
use crate::training::{
    encode_dataset, evaluate, multi_run, multi_run_ttest, summarize, train, Checkpoint, RunMetrics,
    TrainConfig,
};
use crate::viz::{export_heatmap, format_ranking, top_reason_words};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Parser)]
#[command(
    name = "rcn",
    version,
    about = "Reason comparing network for stance (dis)agreement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample labelled utterance pairs from a stance corpus.
    Pairgen(PairgenArgs),
    /// Train one model and write a checkpoint plus per-epoch metrics.
    Train(TrainArgs),
    /// Score a checkpoint on its test split, optionally with the multi-run
    /// comparison against the BiLSTM baseline.
    Eval(EvalArgs),
    /// Write attention heatmaps for test-split pairs.
    Visualize(VisualizeArgs),
    /// Rank the words receiving the largest attention weights.
    Reasons(ReasonsArgs),
    /// Finite-difference check of the full network at desk scale.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Tab-separated stance corpus with ID, Target, Tweet and Stance columns.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Pair file written by `pairgen`.
    #[arg(long, conflicts_with = "corpus")]
    pairs: Option<PathBuf>,
    /// Use the built-in keyword corpus instead of external data.
    #[arg(long, conflicts_with_all = ["corpus", "pairs"])]
    synthetic: bool,
    /// Topic code (CC, HC, FM, AT, LA) or full target name.
    #[arg(long)]
    topic: Option<String>,
}

#[derive(Debug, Args)]
struct PairgenArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    topic: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<usize>,
    /// Output directory for model.ckpt, metrics.jsonl and summary.json.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    kappa: Option<usize>,
    /// Retrain this many seeds of RCN and of the BiLSTM baseline.
    #[arg(long)]
    runs: Option<usize>,
    /// Also write per-epoch metrics of every run here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory for the HTML files.
    #[arg(long)]
    out: PathBuf,
    /// Number of test pairs to render.
    #[arg(long, default_value_t = 3)]
    limit: usize,
}

#[derive(Debug, Args)]
struct ReasonsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    top_n: Option<usize>,
    /// Write the ranking here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    kappa: usize,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Pairgen(a) => pairgen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Visualize(a) => visualize_cmd(a),
        Command::Reasons(a) => reasons_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn load_config(
    path: Option<&Path>,
    seed: Option<u64>,
    kappa: Option<usize>,
) -> Result<TrainConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::parse(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = kappa {
        cfg.model.kappa = k;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn topic_matches(pair_topic: &str, wanted: &str) -> bool {
    pair_topic.eq_ignore_ascii_case(resolve_topic(wanted))
}

/// Pairs plus, for the synthetic corpus, its own vocabulary and vectors.
struct Loaded {
    pairs: Vec<UtterancePair>,
    synthetic: Option<(Vocabulary, EmbeddingTable)>,
}

fn load_data(data: &DataArgs, cfg: &TrainConfig) -> Result<Loaded, Failure> {
    let (mut pairs, synthetic) = if let Some(path) = &data.pairs {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let pairs =
            read_pairs(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        (pairs, None)
    } else if let Some(path) = &data.corpus {
        let mut records =
            load_stance_corpus(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(t) = &data.topic {
            records.retain(|r| topic_matches(&r.topic, t));
        }
        (
            generate_pairs(&records, cfg.pairs, cfg.seed).context("generating pairs")?,
            None,
        )
    } else if data.synthetic {
        let c = keyword_corpus(&SyntheticSpec {
            seed: cfg.seed,
            ..SyntheticSpec::default()
        })
        .context("building the keyword corpus")?;
        let pairs = generate_pairs(&c.records, cfg.pairs, cfg.seed).context("generating pairs")?;
        (pairs, Some((c.vocab, c.embeddings)))
    } else {
        return usage("one of --corpus, --pairs or --synthetic is required");
    };
    if let Some(t) = &data.topic {
        pairs.retain(|p| topic_matches(&p.topic, t));
    }
    if pairs.is_empty() {
        return Err(Failure::Data(anyhow!("no pairs for the requested topic")));
    }
    Ok(Loaded { pairs, synthetic })
}

fn split(pairs: &[UtterancePair], seed: u64) -> Result<DatasetSplit<UtterancePair>, Failure> {
    Ok(split_dataset(pairs, SPLIT_RATIOS, seed).context("splitting pairs")?)
}

/// Vocabulary over the training texts and topics.
fn build_vocab(train: &[UtterancePair], min_count: usize) -> anyhow::Result<Vocabulary> {
    let mut corpus = Vec::with_capacity(2 * train.len());
    for p in train {
        corpus.push(tokenize(&p.p.text));
        corpus.push(tokenize(&p.q.text));
        corpus.push(tokenize(&p.topic));
    }
    Ok(Vocabulary::build(&corpus, min_count)?)
}

fn inputs_for(
    cfg: &TrainConfig,
    loaded: Loaded,
) -> Result<(Vocabulary, EmbeddingTable, DatasetSplit<UtterancePair>), Failure> {
    let parts = split(&loaded.pairs, cfg.seed)?;
    let (vocab, emb) = match loaded.synthetic {
        Some(ve) => ve,
        None => {
            let vocab = build_vocab(&parts.train, cfg.min_count)?;
            let emb = match &cfg.embeddings {
                Some(path) => EmbeddingTable::load_glove(Path::new(path), &vocab)
                    .with_context(|| format!("loading word vectors from {path}"))?,
                None => {
                    eprintln!("warning: no `embeddings` in config, using random word vectors");
                    random_embeddings(&vocab, 0.3, cfg.seed).context("drawing word vectors")?
                }
            };
            (vocab, emb)
        }
    };
    Ok((vocab, emb, parts))
}

fn pairgen(a: PairgenArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref(), a.seed, None)?;
    let mut records =
        load_stance_corpus(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    if let Some(t) = &a.topic {
        records.retain(|r| topic_matches(&r.topic, t));
    }
    let pairs = generate_pairs(&records, cfg.pairs, cfg.seed).context("generating pairs")?;
    let f = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(f);
    write_pairs(&mut w, &pairs).context("writing pairs")?;
    w.flush().context("writing pairs")?;
    eprintln!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(w: &mut impl Write, rec: &T) -> anyhow::Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref(), a.seed, a.kappa)?;
    let loaded = load_data(&a.data, &cfg)?;
    let (vocab, emb, parts) = inputs_for(&cfg, loaded)?;
    let tr = encode_dataset(&parts.train, &vocab, &cfg.model).context("encoding training pairs")?;
    let va = encode_dataset(&parts.validation, &vocab, &cfg.model)
        .context("encoding validation pairs")?;
    let te = encode_dataset(&parts.test, &vocab, &cfg.model).context("encoding test pairs")?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(File::create(&metrics_path).context("creating metrics file")?);
    let start = Instant::now();
    let mut write_err = None;
    let outcome = train(&cfg, &emb, &tr, &va, 0, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val macro-F1 {:.4}  acc {:.4}{}  [{:.0}s]",
            r.epoch,
            r.train_loss,
            r.val_macro_f1,
            r.val_accuracy,
            if r.improved { "  *" } else { "" },
            start.elapsed().as_secs_f64()
        );
        if let Err(e) = write_jsonl(&mut metrics, r) {
            write_err.get_or_insert(e);
        }
    })
    .context("training")?;
    if let Some(e) = write_err {
        return Err(e.context("writing metrics").into());
    }
    metrics.flush().context("writing metrics")?;

    let mut run = outcome.metrics;
    run.test = Some(evaluate(&outcome.model, &emb, &te).context("scoring the test split")?);
    let summary = serde_json::to_string_pretty(&run).context("serializing summary")?;
    fs::write(a.out.join("summary.json"), summary + "\n").context("writing summary")?;
    Checkpoint {
        config: cfg,
        vocab,
        embeddings: emb,
        model: outcome.model,
    }
    .save(&a.out.join("model.ckpt"))
    .context("writing checkpoint")?;
    let t = run.test.as_ref().expect("set above");
    println!(
        "best epoch {}  val macro-F1 {:.4}  test macro-F1 {:.4}  test acc {:.4}",
        run.best_epoch, run.best_val_macro_f1, t.macro_f1, t.accuracy
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Ok(Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?)
}

/// Pairs of the checkpoint's test split, encoded with its vocabulary.
fn checkpoint_test_split(ck: &Checkpoint, data: &DataArgs) -> Result<Vec<UtterancePair>, Failure> {
    let loaded = load_data(data, &ck.config)?;
    Ok(split(&loaded.pairs, ck.config.seed)?.test)
}

fn table_cell(runs: &[RunMetrics]) -> String {
    let scores: Vec<f64> = runs
        .iter()
        .map(|m| m.test.as_ref().map_or(0.0, |t| t.macro_f1))
        .collect();
    let s = summarize(&scores);
    format!("{:.1} ± {:.1}", 100.0 * s.mean, 100.0 * s.std)
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let ck = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let mut cfg = match &ck {
        Some(ck) => {
            if a.config.is_some() {
                return usage("--config and --checkpoint are mutually exclusive");
            }
            let mut cfg = ck.config.clone();
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(k) = a.kappa {
                cfg.model.kappa = k;
            }
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            cfg
        }
        None => load_config(a.config.as_deref(), a.seed, a.kappa)?,
    };
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    let topic_label = a.data.topic.clone().unwrap_or_else(|| "all".into());

    let loaded = load_data(&a.data, &cfg)?;
    let parts = split(&loaded.pairs, cfg.seed)?;
    let (vocab, emb) = match (&ck, loaded.synthetic) {
        (Some(ck), _) => (ck.vocab.clone(), ck.embeddings.clone()),
        (None, Some(ve)) => ve,
        (None, None) => {
            let (v, e, _) = inputs_for(
                &cfg,
                Loaded {
                    pairs: loaded.pairs.clone(),
                    synthetic: None,
                },
            )?;
            (v, e)
        }
    };
    let te = encode_dataset(&parts.test, &vocab, &cfg.model).context("encoding test pairs")?;

    if let Some(ck) = &ck {
        let r = evaluate(&ck.model, &ck.embeddings, &te).context("scoring the test split")?;
        println!(
            "checkpoint ({})  test macro-F1 {:.4}  accuracy {:.4}",
            ck.config.model.arch.as_str(),
            r.macro_f1,
            r.accuracy
        );
        for (label, s) in crate::corpus::Label::ALL.iter().zip(&r.per_class) {
            println!(
                "  {label:<9} P {:.4}  R {:.4}  F1 {:.4}",
                s.precision, s.recall, s.f1
            );
        }
    }
    if a.runs.is_none() && ck.is_some() {
        return Ok(());
    }
    if cfg.runs < 2 {
        return usage("--runs must be at least 2 for the multi-run comparison");
    }

    let tr = encode_dataset(&parts.train, &vocab, &cfg.model).context("encoding training pairs")?;
    let va = encode_dataset(&parts.validation, &vocab, &cfg.model)
        .context("encoding validation pairs")?;
    let mut log = match &a.out {
        Some(p) => Some(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => None,
    };
    let mut results = Vec::new();
    for arch in [Architecture::BiLstm, Architecture::Rcn] {
        let runs = multi_run(&cfg, arch, &emb, &tr, &va, &te, |r| {
            eprintln!(
                "{} run {} epoch {:>3}  val macro-F1 {:.4}",
                r.arch, r.run, r.epoch, r.val_macro_f1
            );
            if let Some(w) = log.as_mut() {
                let _ = write_jsonl(w, r);
            }
        })
        .with_context(|| format!("training {}", arch.as_str()))?;
        results.push(runs);
    }
    if let Some(w) = log.as_mut() {
        w.flush().context("writing run log")?;
    }
    let test = multi_run_ttest(&results[1], &results[0]);
    println!("| Topic | BiLSTM | RCN |");
    println!("|-------|--------|-----|");
    println!(
        "| {} | {} | {}{} |",
        topic_label,
        table_cell(&results[0]),
        table_cell(&results[1]),
        test.stars()
    );
    println!(
        "macro-F1 over {} runs; Welch two-tailed t = {:.3}, df = {:.1}, p = {:.4} (** p<0.01, * p<0.05)",
        cfg.runs, test.t, test.df, test.p
    );
    Ok(())
}

fn visualize_cmd(a: VisualizeArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.config.model.arch != Architecture::Rcn {
        return Err(Failure::Data(anyhow!(
            "the checkpoint has no reason encoder"
        )));
    }
    let test = checkpoint_test_split(&ck, &a.data)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (i, pair) in test.iter().take(a.limit).enumerate() {
        let path = a.out.join(format!("pair-{:04}.html", i + 1));
        let doc = export_heatmap(&ck.model, &ck.embeddings, &ck.vocab, pair, &path)
            .with_context(|| format!("rendering pair {}", i + 1))?;
        println!(
            "{}\tgold {}\tpredicted {}",
            path.display(),
            doc.gold,
            doc.predicted
        );
    }
    Ok(())
}

fn reasons_cmd(a: ReasonsArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let test = checkpoint_test_split(&ck, &a.data)?;
    let data = test
        .iter()
        .map(|p| encode_pair(p, &ck.vocab, &ck.config.model))
        .collect::<Result<Vec<_>, _>>()
        .context("encoding pairs")?;
    let words = top_reason_words(
        &ck.model,
        &ck.embeddings,
        &data,
        a.top_n.unwrap_or(ck.config.top_n),
    )
    .context("ranking reason words")?;
    let text = format_ranking(&words);
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<(), Failure> {
    if !(1..=crate::reason::MAX_REASONS).contains(&a.kappa) {
        return usage("kappa must be in 1..=8");
    }
    if a.epsilon.is_nan() || a.epsilon <= 0.0 {
        return usage("epsilon must be positive");
    }
    let start = Instant::now();
    let r = desk_gradient_check(desk_config(a.kappa), a.seed, 1e-2, a.epsilon)
        .context("gradient check")?;
    let (name, idx) = r.worst.clone().unwrap_or_default();
    println!(
        "checked {} scalars in {:.1}s; max relative error {:.3e} at {}[{}]",
        r.checked,
        start.elapsed().as_secs_f64(),
        r.max_rel_err,
        name,
        idx
    );
    if r.max_rel_err >= a.tolerance {
        return Err(Failure::Data(anyhow!(
            "max relative error {:.3e} exceeds {:.1e}",
            r.max_rel_err,
            a.tolerance
        )));
    }
    Ok(())
}
