mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use memcause::corpus::{annotation_instances, build_all_instances, build_vocabulary, Document};
use memcause::embeddings::{save_embeddings, train_skipgram, SkipgramConfig};
use memcause::eval::{
    dump_attention, epoch_probability_trace, evaluate, format_metrics_table, format_trace_table,
    hop_sweep, predict_document, run_protocol, Level, MetricsReport, Prf, ProtocolConfig,
    ProtocolReport,
};
use memcause::model::{Model, ModelKind};
use memcause::synthetic::random_model_and_instance;
use memcause::training::{
    compare_gradients, train_with, EpochProbabilities, GradCheckReport, TrainHistory,
    WatchedAnnotation,
};
use serde::{Deserialize, Serialize};

use config::{build_embeddings, read_corpus, RunManifest, TrainArgs};

#[derive(Parser)]
#[command(
    name = "memcause",
    version,
    about = "Memory networks for emotion cause extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train skip-gram word vectors on corpus clauses
    Pretrain(PretrainArgs),
    /// Train a model on a whole corpus
    Train(TrainCmd),
    /// Score a trained model on a corpus
    Eval(EvalCmd),
    /// Repeated random-split train/test protocol
    Protocol(ProtocolCmd),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckCmd),
    /// Per-hop attention table for one clause
    Attention(AttentionCmd),
    /// Clause probabilities at training checkpoints
    Trace(TraceCmd),
}

#[derive(clap::Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(clap::Args)]
struct TrainCmd {
    #[arg(long)]
    corpus: PathBuf,
    /// Model file to write
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited history (defaults to <out>.history.jsonl)
    #[arg(long)]
    history: Option<PathBuf>,
    /// Run manifest (defaults to <out>.manifest.json)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write <out>.epoch<N> every N epochs
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Record clause probabilities of this document at checkpoints
    #[arg(long = "watch")]
    watch: Vec<String>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Table,
    Jsonl,
}

#[derive(clap::Args)]
struct EvalCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(clap::Args)]
struct ProtocolCmd {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 25)]
    runs: usize,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Parallel runs; output order does not depend on it
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Hop range `lo:hi` (inclusive) to sweep instead of a single protocol
    #[arg(long)]
    sweep_hops: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(clap::Args)]
struct GradcheckCmd {
    /// basic | convms | both
    #[arg(long = "model", default_value = "both")]
    kind: String,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    hops: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,20")]
    dim: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    clause_len: Vec<usize>,
    /// Random instances per configuration
    #[arg(long, default_value_t = 10)]
    instances: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add 1 to one analytic embedding gradient entry
    #[arg(long)]
    inject_fault: bool,
}

#[derive(clap::Args)]
struct AttentionCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    doc_id: String,
    #[arg(long, default_value_t = 0)]
    annotation: usize,
    /// Clause to inspect (defaults to the predicted cause)
    #[arg(long)]
    clause: Option<usize>,
    /// Write weights losslessly instead of with 4 decimals
    #[arg(long)]
    full_precision: bool,
}

#[derive(clap::Args)]
struct TraceCmd {
    /// History file written by `train --watch`
    #[arg(long, conflicts_with = "corpus")]
    history: Option<PathBuf>,
    /// Train on this corpus while watching the documents
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long = "doc-id", required = true)]
    doc_ids: Vec<String>,
    #[command(flatten)]
    train: TrainArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Protocol(a) => cmd_protocol(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Attention(a) => cmd_attention(a),
        Command::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_pretrain(a: PretrainArgs) -> Result<bool> {
    let docs = read_corpus(&a.corpus)?;
    let vocab = build_vocabulary(&docs, a.min_count)?;
    let sequences: Vec<Vec<usize>> = docs
        .iter()
        .flat_map(|d| &d.clauses)
        .map(|c| c.tokens.iter().map(|t| vocab.id(t)).collect())
        .collect();
    let cfg = SkipgramConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let matrix = train_skipgram(&sequences, vocab.len(), &cfg)?;
    save_embeddings(&a.out, &matrix, &vocab)?;
    eprintln!(
        "wrote {} vectors of dimension {} to {}",
        vocab.len(),
        a.dim,
        a.out.display()
    );
    Ok(true)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum HistoryRecord {
    Loss { epoch: usize, mean_loss: f64 },
    Watch(EpochProbabilities),
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut out = String::new();
    for (i, &l) in history.epoch_losses.iter().enumerate() {
        let rec = HistoryRecord::Loss {
            epoch: i + 1,
            mean_loss: l,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    for w in &history.watched {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&HistoryRecord::Watch(w.clone()))?
        )?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_history(path: &Path) -> Result<TrainHistory> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut h = TrainHistory::default();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        match serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))? {
            HistoryRecord::Loss { mean_loss, .. } => h.epoch_losses.push(mean_loss),
            HistoryRecord::Watch(w) => h.watched.push(w),
        }
    }
    Ok(h)
}

fn find_doc<'a>(docs: &'a [Document], id: &str) -> Result<&'a Document> {
    docs.iter()
        .find(|d| d.doc_id == id)
        .ok_or_else(|| anyhow!("unknown document `{id}`"))
}

fn watch_list(docs: &[Document], ids: &[String], model: &Model) -> Result<Vec<WatchedAnnotation>> {
    let mut out = Vec::new();
    for id in ids {
        let doc = find_doc(docs, id)?;
        for ai in 0..doc.annotations.len() {
            out.push(WatchedAnnotation {
                doc_id: doc.doc_id.clone(),
                annotation_index: ai,
                instances: annotation_instances(doc, ai, &model.vocab),
            });
        }
    }
    Ok(out)
}

/// Trains on all of `docs`; `on_epoch` sees every finished epoch.
fn train_on(
    docs: &[Document],
    cfg: &config::ExperimentConfig,
    watch_ids: &[String],
    on_epoch: impl FnMut(usize, &Model) -> memcause::Result<()>,
) -> Result<(Model, TrainHistory)> {
    let vocab = build_vocabulary(docs, cfg.min_count)?;
    let embeddings = build_embeddings(cfg, &vocab, docs)?;
    let model = cfg.train.init_model(vocab, embeddings)?;
    let watched = watch_list(docs, watch_ids, &model)?;
    let instances = build_all_instances(docs, &model.vocab);
    Ok(train_with(
        &instances, model, &cfg.train, &watched, on_epoch,
    )?)
}

fn cmd_train(a: TrainCmd) -> Result<bool> {
    let cfg = a.train.resolve()?;
    if a.checkpoint_every == Some(0) {
        bail!("--checkpoint-every must be at least 1");
    }
    let docs = read_corpus(&a.corpus)?;
    let history_path = a
        .history
        .unwrap_or_else(|| with_suffix(&a.out, ".history.jsonl"));
    let manifest_path = a
        .manifest
        .unwrap_or_else(|| with_suffix(&a.out, ".manifest.json"));
    let mut artifacts = vec![a.out.clone(), history_path.clone()];
    if let Some(n) = a.checkpoint_every {
        artifacts.extend(
            (n..=cfg.train.epochs)
                .step_by(n)
                .map(|e| with_suffix(&a.out, &format!(".epoch{e}"))),
        );
    }
    RunManifest::new("train", &cfg, &[&a.corpus], artifacts)?.write(&manifest_path)?;

    let out = a.out.clone();
    let every = a.checkpoint_every;
    let (model, history) = train_on(&docs, &cfg, &a.watch, |epoch, m| {
        if every.is_some_and(|n| epoch % n == 0) {
            m.save(&with_suffix(&out, &format!(".epoch{epoch}")))?;
        }
        Ok(())
    })?;
    model.save(&a.out)?;
    write_history(&history_path, &history)?;
    eprintln!(
        "trained {} (H={}, d={}) for {} epochs; final mean loss {:.4}; wrote {}",
        model.kind,
        model.hops,
        model.dim(),
        history.epoch_losses.len(),
        history.epoch_losses.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(true)
}

fn prf_line(level: &str, p: &Prf) -> String {
    format!(
        "{{\"level\":\"{level}\",\"precision\":{:.4},\"recall\":{:.4},\"f1\":{:.4},\"correct\":{},\"proposed\":{},\"annotated\":{}}}",
        p.precision, p.recall, p.f1, p.correct, p.proposed, p.annotated
    )
}

fn cmd_eval(a: EvalCmd) -> Result<bool> {
    let model =
        Model::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let docs = read_corpus(&a.corpus)?;
    let ev = evaluate(&model, &docs)?;
    let text = match a.format {
        Format::Jsonl => format!(
            "{}\n{}\n",
            prf_line("clause", &ev.clause),
            prf_line("keyword", &ev.keyword)
        ),
        Format::Table => {
            let clause = MetricsReport::aggregate(Level::Clause, vec![ev.clause]);
            let keyword = MetricsReport::aggregate(Level::Keyword, vec![ev.keyword]);
            format_metrics_table(&[&clause, &keyword])
        }
    };
    print!("{text}");
    Ok(true)
}

fn format_protocol(rep: &ProtocolReport, format: Format) -> String {
    let mut s = String::new();
    match format {
        Format::Table => {
            s.push_str("run\tseed\tP\tR\tF\tkw_P\tkw_R\tkw_F\n");
            for r in &rep.runs {
                writeln!(
                    s,
                    "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    r.run,
                    r.seed,
                    r.clause.precision,
                    r.clause.recall,
                    r.clause.f1,
                    r.keyword.precision,
                    r.keyword.recall,
                    r.keyword.f1
                )
                .unwrap();
            }
            let (c, k) = (&rep.clause, &rep.keyword);
            writeln!(
                s,
                "mean\t-\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                c.mean_precision,
                c.mean_recall,
                c.mean_f1,
                k.mean_precision,
                k.mean_recall,
                k.mean_f1
            )
            .unwrap();
            writeln!(
                s,
                "sd\t-\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                c.std_precision, c.std_recall, c.std_f1, k.std_precision, k.std_recall, k.std_f1
            )
            .unwrap();
        }
        Format::Jsonl => {
            for r in &rep.runs {
                writeln!(
                    s,
                    "{{\"run\":{},\"seed\":{},\"clause\":{},\"keyword\":{}}}",
                    r.run,
                    r.seed,
                    prf_line("clause", &r.clause),
                    prf_line("keyword", &r.keyword)
                )
                .unwrap();
            }
            for m in [&rep.clause, &rep.keyword] {
                s.push_str(&summary_line(m, None));
            }
        }
    }
    s
}

fn summary_line(m: &MetricsReport, hops: Option<usize>) -> String {
    let level = match m.level {
        Level::Clause => "clause",
        Level::Keyword => "keyword",
    };
    let hops = hops.map(|h| format!("\"hops\":{h},")).unwrap_or_default();
    format!(
        "{{{hops}\"level\":\"{level}\",\"runs\":{},\"mean_precision\":{:.4},\"mean_recall\":{:.4},\"mean_f1\":{:.4},\"std_f1\":{:.4}}}\n",
        m.runs.len(), m.mean_precision, m.mean_recall, m.mean_f1, m.std_f1
    )
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| anyhow!("expected `lo:hi`, got `{s}`"))?;
    let (lo, hi): (usize, usize) = (lo.trim().parse()?, hi.trim().parse()?);
    if lo == 0 || hi < lo {
        bail!("invalid hop range `{s}`");
    }
    Ok(lo..=hi)
}

fn cmd_protocol(a: ProtocolCmd) -> Result<bool> {
    let cfg = a.train.resolve()?;
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let docs = read_corpus(&a.corpus)?;
    let proto = ProtocolConfig {
        train: cfg.train.clone(),
        runs: a.runs,
        train_fraction: a.train_fraction,
        master_seed: cfg.train.seed,
        min_count: cfg.min_count,
        embeddings: cfg.embeddings.source(cfg.train.dim)?,
        jobs: a.jobs,
    };
    let text = match &a.sweep_hops {
        Some(range) => {
            let rows = hop_sweep(&docs, &proto, parse_range(range)?)?;
            let mut s = String::new();
            match a.format {
                Format::Table => {
                    s.push_str("hops\tP\tR\tF\tkw_F\n");
                    for r in &rows {
                        writeln!(
                            s,
                            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                            r.hops,
                            r.clause.mean_precision,
                            r.clause.mean_recall,
                            r.clause.mean_f1,
                            r.keyword.mean_f1
                        )
                        .unwrap();
                    }
                }
                Format::Jsonl => {
                    for r in &rows {
                        s.push_str(&summary_line(&r.clause, Some(r.hops)));
                        s.push_str(&summary_line(&r.keyword, Some(r.hops)));
                    }
                }
            }
            s
        }
        None => format_protocol(&run_protocol(&docs, &proto)?, a.format),
    };
    print!("{text}");
    if let Some(out) = &a.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(true)
}

fn cmd_gradcheck(a: GradcheckCmd) -> Result<bool> {
    let kinds = match a.kind.as_str() {
        "both" => vec![ModelKind::Basic, ModelKind::ConvMs],
        k => vec![k.parse::<ModelKind>()?],
    };
    if a.hops.contains(&0) || a.dim.contains(&0) || a.clause_len.contains(&0) {
        bail!("hops, dim and clause length must all be >= 1");
    }
    let mut reports: Vec<(String, GradCheckReport)> = Vec::new();
    for &kind in &kinds {
        for &hops in &a.hops {
            for &dim in &a.dim {
                for &k in &a.clause_len {
                    for i in 0..a.instances {
                        let seed = a.seed.wrapping_add(i);
                        let (model, inst) =
                            random_model_and_instance(kind, hops, dim, k, seed, 0.5);
                        let (_, mut g) = model.loss_and_gradients(&inst, false, 1.0)?;
                        if a.inject_fault {
                            if let Some(col) = g.embeddings.values_mut().next() {
                                col[0] += 1.0;
                            }
                        }
                        let r = compare_gradients(&model, &inst, &g, a.eps, a.tol)?;
                        reports.push((format!("{kind}\tH={hops}\td={dim}\tk={k}"), r));
                    }
                }
            }
        }
    }
    // per configuration: worst error of each block across instances
    let mut out = String::from("model\thops\tdim\tlen\tblock\tmax_rel_error\tstatus\n");
    let mut keys: Vec<&String> = reports.iter().map(|(k, _)| k).collect();
    keys.dedup();
    for key in keys {
        let group: Vec<&GradCheckReport> = reports
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, r)| r)
            .collect();
        for b in &group[0].blocks {
            let worst = group
                .iter()
                .filter_map(|r| r.blocks.iter().find(|x| x.block == b.block))
                .map(|x| x.max_rel_error)
                .fold(0.0, f64::max);
            let status = if worst < a.tol { "pass" } else { "FAIL" };
            writeln!(out, "{key}\t{}\t{worst:.3e}\t{status}", b.block).unwrap();
        }
    }
    let passed = reports.iter().all(|(_, r)| r.passed());
    let worst = reports
        .iter()
        .map(|(_, r)| r.max_rel_error())
        .fold(0.0, f64::max);
    writeln!(
        out,
        "{} checks, worst relative error {worst:.3e}, tolerance {:.0e}: {}",
        reports.len(),
        a.tol,
        if passed { "PASS" } else { "FAIL" }
    )
    .unwrap();
    print!("{out}");
    Ok(passed)
}

fn cmd_attention(a: AttentionCmd) -> Result<bool> {
    let model =
        Model::load(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let docs = read_corpus(&a.corpus)?;
    let doc = find_doc(&docs, &a.doc_id)?;
    if a.annotation >= doc.annotations.len() {
        bail!("document `{}` has no annotation {}", a.doc_id, a.annotation);
    }
    let clause = match a.clause {
        Some(c) if c >= doc.clauses.len() => bail!("document `{}` has no clause {c}", a.doc_id),
        Some(c) => c,
        None => predict_document(&model, doc, a.annotation)?.chosen,
    };
    let inst = &annotation_instances(doc, a.annotation, &model.vocab)[clause];
    let table = dump_attention(&model, inst)?;
    print!(
        "{}",
        table.to_tsv(if a.full_precision { None } else { Some(4) })
    );
    Ok(true)
}

fn cmd_trace(a: TraceCmd) -> Result<bool> {
    let history = match (&a.history, &a.corpus) {
        (Some(h), _) => read_history(h)?,
        (None, Some(c)) => {
            let cfg = a.train.resolve()?;
            let docs = read_corpus(c)?;
            train_on(&docs, &cfg, &a.doc_ids, |_, _| Ok(()))?.1
        }
        (None, None) => bail!("either --history or --corpus is required"),
    };
    let rows: Vec<_> = epoch_probability_trace(&history)
        .into_iter()
        .filter(|r| a.doc_ids.contains(&r.doc_id))
        .collect();
    for id in &a.doc_ids {
        if !rows.iter().any(|r| &r.doc_id == id) {
            bail!("no trace recorded for document `{id}`");
        }
    }
    print!("{}", format_trace_table(&rows, 4));
    std::io::stdout().flush()?;
    Ok(true)
}
