//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::corpus::{self, judgments_by_query, ClickLog, DocumentRecord};
use crate::encoder::{load_checkpoint, save_checkpoint, ModelParams};
use crate::error::{Error, Result};
use crate::intent::GroupingConfig;
use crate::micg::{graph_stats, sample_subgraph, Micg};
use crate::pipeline::{self, DocGroups, Prepared};
use crate::retrieval::{self, gen_synthetic, ncg_query, VectorIndex};
use crate::text::{self, Vocabulary};
use crate::train::Ablation;

#[derive(Parser, Debug)]
#[command(name = "mira", version, about = "Multi-intention co-click graph retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// TOML file overriding built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus, click log, queries and judgments.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Split each document's clicks into intention groups.
    GroupClicks {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Existing vocabulary; trained from the inputs when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Build the co-click graph (vocab.txt, groups.jsonl, micg.bin, stats.json).
    BuildGraph {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        clicks: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// One node per document.
        #[arg(long)]
        traditional: bool,
    },
    /// Sample the neighbor subgraph of one node.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        node: u32,
    },
    /// Train a model on the graph's click pairs.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Defaults to vocab.txt beside the graph.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = ["base", "no-attention", "gat", "full"])]
        ablation: String,
        /// Validation judgments; enables early stopping on NCG@5.
        #[arg(long)]
        judgments: Option<PathBuf>,
    },
    /// Encode every document node into vectors.bin and attention.jsonl.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Rank documents for each query.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// One query per line; anything after a tab is ignored.
        #[arg(long)]
        queries: PathBuf,
    },
    /// NCG@5 and NCG@20 per judged query.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        /// Restrict to these queries; defaults to every judged query.
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Graph statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        graph: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenSynth { common }
            | Command::GroupClicks { common, .. }
            | Command::BuildGraph { common, .. }
            | Command::Sample { common, .. }
            | Command::Train { common, .. }
            | Command::Encode { common, .. }
            | Command::Retrieve { common, .. }
            | Command::Eval { common, .. }
            | Command::Stats { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::GenSynth { .. } => "gen-synth",
            Command::GroupClicks { .. } => "group-clicks",
            Command::BuildGraph { .. } => "build-graph",
            Command::Sample { .. } => "sample",
            Command::Train { .. } => "train",
            Command::Encode { .. } => "encode",
            Command::Retrieve { .. } => "retrieve",
            Command::Eval { .. } => "eval",
            Command::Stats { .. } => "stats",
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: BTreeMap<&'a str, String>,
    outputs: Vec<String>,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mira {}: {e}", cli.command.name());
            match e {
                Error::InvalidConfig(_) => 1,
                _ => 2,
            }
        }
    }
}

fn execute(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    let mut inputs = BTreeMap::new();
    let outputs = pool.install(|| dispatch(cmd, &cfg, &mut inputs))?;
    let manifest = RunManifest {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: common.seed,
        config: &cfg,
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = common.out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn note<'a>(inputs: &mut BTreeMap<&'a str, String>, key: &'a str, path: &Path) {
    inputs.insert(key, path.display().to_string());
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn vocab_beside(graph: &Path, vocab: &Option<PathBuf>) -> PathBuf {
    vocab
        .clone()
        .unwrap_or_else(|| graph.parent().unwrap_or(Path::new(".")).join("vocab.txt"))
}

fn read_queries(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .map(|l| l.split('\t').next().unwrap_or("").to_string())
        .filter(|q| !q.is_empty())
        .collect())
}

fn groups_jsonl(groups: &DocGroups) -> String {
    let mut out = String::new();
    for (doc, gs) in groups {
        let gs: Vec<_> = gs
            .iter()
            .map(|g| {
                json!({
                    "group_id": g.group_id,
                    "main_click": g.main_click,
                    "members": g.members,
                    "overflow": g.overflow,
                })
            })
            .collect();
        writeln!(out, "{}", json!({ "doc_id": doc, "groups": gs })).expect("write");
    }
    out
}

fn obtain_vocab(
    vocab: &Option<PathBuf>,
    docs: &[DocumentRecord],
    clicks: &ClickLog,
    cfg: &RunConfig,
    inputs: &mut BTreeMap<&str, String>,
) -> Result<(Vocabulary, bool)> {
    match vocab {
        Some(path) => {
            inputs.insert("vocab", path.display().to_string());
            Ok((Vocabulary::load(path)?, false))
        }
        None => Ok((
            text::train_vocab(pipeline::vocab_texts(docs, clicks), cfg.model.vocab_size)?,
            true,
        )),
    }
}

/// Loads corpus, graph and vocabulary and rebuilds the node texts.
fn load_prepared(corpus_path: &Path, graph_path: &Path, vocab_path: &Path) -> Result<(Vec<DocumentRecord>, Prepared)> {
    let docs = corpus::load_corpus(corpus_path)?;
    let graph = Micg::load(graph_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    let texts = pipeline::node_texts(&graph, &docs, &vocab);
    Ok((
        docs,
        Prepared {
            vocab,
            groups: Vec::new(),
            graph,
            texts,
        },
    ))
}

fn dispatch<'a>(cmd: &'a Command, cfg: &RunConfig, inputs: &mut BTreeMap<&'a str, String>) -> Result<Vec<PathBuf>> {
    let common = cmd.common();
    let out = &common.out;
    let seed = common.seed;
    match cmd {
        Command::GenSynth { .. } => {
            let data = gen_synthetic(&retrieval::SynthConfig {
                seed,
                ..cfg.synth.clone()
            })?;
            data.write(out)?;
            Ok(["corpus.jsonl", "clicks.tsv", "queries.tsv", "judgments.tsv"]
                .iter()
                .map(|f| out.join(f))
                .collect())
        }
        Command::GroupClicks {
            clicks,
            corpus: corpus_path,
            vocab,
            ..
        } => {
            note(inputs, "clicks", clicks);
            let log = corpus::load_clicks(clicks)?;
            let docs = match corpus_path {
                Some(p) => {
                    note(inputs, "corpus", p);
                    corpus::load_corpus(p)?
                }
                None => Vec::new(),
            };
            let (vocab, trained) = obtain_vocab(vocab, &docs, &log, cfg, inputs)?;
            let groups = pipeline::group_all(&log, &vocab, &cfg.grouping)?;
            let mut outputs = vec![write(out.join("groups.jsonl"), groups_jsonl(&groups))?];
            if trained {
                vocab.save(out.join("vocab.txt"))?;
                outputs.push(out.join("vocab.txt"));
            }
            Ok(outputs)
        }
        Command::BuildGraph {
            corpus: corpus_path,
            clicks,
            vocab,
            traditional,
            ..
        } => {
            note(inputs, "corpus", corpus_path);
            note(inputs, "clicks", clicks);
            let docs = corpus::load_corpus(corpus_path)?;
            let log = corpus::load_clicks(clicks)?;
            let dangling = corpus::dangling_clicks(&docs, &log);
            if !dangling.is_empty() {
                eprintln!("mira build-graph: {} clicked documents missing from the corpus", dangling.len());
            }
            let (vocab, _) = obtain_vocab(vocab, &docs, &log, cfg, inputs)?;
            let grouping = GroupingConfig {
                max_groups: if *traditional { 1 } else { cfg.grouping.max_groups },
                ..cfg.grouping
            };
            let prep = pipeline::prepare(&docs, &log, vocab, &grouping, &cfg.graph)?;
            prep.vocab.save(out.join("vocab.txt"))?;
            prep.graph.save(out.join("micg.bin"))?;
            let stats = serde_json::to_string_pretty(&graph_stats(&prep.graph)).expect("stats serialize");
            Ok(vec![
                out.join("vocab.txt"),
                write(out.join("groups.jsonl"), groups_jsonl(&prep.groups))?,
                out.join("micg.bin"),
                write(out.join("stats.json"), stats + "\n")?,
            ])
        }
        Command::Sample { graph, node, .. } => {
            note(inputs, "graph", graph);
            let g = Micg::load(graph)?;
            let sub = sample_subgraph(&g, *node, &cfg.graph, seed)?;
            let text = serde_json::to_string_pretty(&sub).expect("subgraph serializes");
            emit(&text);
            Ok(vec![write(out.join("sample.json"), text + "\n")?])
        }
        Command::Train {
            corpus: corpus_path,
            graph,
            vocab,
            ablation,
            judgments,
            ..
        } => {
            let vocab_path = vocab_beside(graph, vocab);
            note(inputs, "corpus", corpus_path);
            note(inputs, "graph", graph);
            note(inputs, "vocab", &vocab_path);
            let (docs, prep) = load_prepared(corpus_path, graph, &vocab_path)?;
            let mut model_cfg = cfg.model;
            model_cfg.vocab_size = prep.vocab.len();
            model_cfg.k = cfg.graph.k;
            let init = ModelParams::init(model_cfg, cfg.init_std, seed)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            let judged = match judgments {
                Some(p) => {
                    note(inputs, "judgments", p);
                    Some(judgments_by_query(&corpus::load_judgments(p)?))
                }
                None => None,
            };
            let validator = judged.as_ref().map(|j| {
                let queries: Vec<String> = j.keys().cloned().collect();
                let prep = &prep;
                let docs = &docs;
                let sampling = cfg.graph;
                move |params: &ModelParams| -> Result<f64> {
                    let enc = pipeline::encode_corpus(prep, docs, params, &sampling, seed)?;
                    let index = pipeline::index_of(&enc)?;
                    pipeline::evaluate(&index, &queries, j, &prep.vocab, params, 5)
                }
            });
            let fit = pipeline::train_model(
                &prep,
                cfg.graph,
                init,
                Ablation::parse(ablation)?,
                &train_cfg,
                validator.as_ref().map(|v| v as &(dyn Fn(&ModelParams) -> Result<f64> + Sync)),
            )?;
            save_checkpoint(&fit.params, out.join("model.bin"))?;
            let mut trace = String::from("step,loss\n");
            for (i, l) in fit.loss_trace.iter().enumerate() {
                writeln!(trace, "{i},{l}").expect("write");
            }
            let mut outputs = vec![out.join("model.bin"), write(out.join("loss.csv"), trace)?];
            if !fit.validation.is_empty() {
                let mut v = String::from("epoch,ncg@10\n");
                for (i, s) in fit.validation.iter().enumerate() {
                    writeln!(v, "{i},{s}").expect("write");
                }
                outputs.push(write(out.join("validation.csv"), v)?);
            }
            if let (Some(first), Some(last)) = (fit.loss_trace.first(), fit.loss_trace.last()) {
                emit(&format!("steps {} loss {first:.4} -> {last:.4}", fit.loss_trace.len()));
            }
            Ok(outputs)
        }
        Command::Encode {
            corpus: corpus_path,
            graph,
            model,
            vocab,
            ..
        } => {
            let vocab_path = vocab_beside(graph, vocab);
            note(inputs, "corpus", corpus_path);
            note(inputs, "graph", graph);
            note(inputs, "model", model);
            note(inputs, "vocab", &vocab_path);
            let (docs, prep) = load_prepared(corpus_path, graph, &vocab_path)?;
            let params = load_checkpoint(model)?;
            if params.config.vocab_size != prep.vocab.len() {
                return Err(Error::DimMismatch {
                    expected: params.config.vocab_size,
                    got: prep.vocab.len(),
                });
            }
            let mut sampling = cfg.graph;
            sampling.k = params.config.k;
            let enc = pipeline::encode_corpus(&prep, &docs, &params, &sampling, seed)?;
            let index = pipeline::index_of(&enc)?;
            index.save(out.join("vectors.bin"))?;
            let mut attention = String::new();
            for (i, (doc, group, e)) in enc.iter().enumerate() {
                let neighbors: Vec<Option<u32>> = if i < prep.graph.node_count() {
                    sample_subgraph(&prep.graph, i as u32, &sampling, seed)?.layers[0].clone()
                } else {
                    vec![None; sampling.n]
                };
                let line = json!({
                    "doc_id": doc,
                    "group_id": group,
                    "gamma": e.gamma,
                    "neighbors": neighbors,
                    "weights": e.attention,
                });
                writeln!(attention, "{line}").expect("write");
            }
            Ok(vec![
                out.join("vectors.bin"),
                write(out.join("attention.jsonl"), attention)?,
            ])
        }
        Command::Retrieve {
            vectors,
            model,
            vocab,
            queries,
            ..
        } => {
            note(inputs, "vectors", vectors);
            note(inputs, "model", model);
            note(inputs, "vocab", vocab);
            note(inputs, "queries", queries);
            let index = VectorIndex::load(vectors)?;
            let params = load_checkpoint(model)?;
            let vocab = Vocabulary::load(vocab)?;
            let qs = read_queries(queries)?;
            let ranked = pipeline::retrieve_scored(&index, &qs, &vocab, &params, cfg.retrieve_k)?;
            let mut text = String::from("query\trank\tdoc_id\tscore\n");
            for q in &qs {
                for (rank, (doc, score)) in ranked[q].iter().enumerate() {
                    writeln!(text, "{q}\t{}\t{doc}\t{score:.6}", rank + 1).expect("write");
                }
            }
            Ok(vec![write(out.join("results.tsv"), text)?])
        }
        Command::Eval {
            vectors,
            model,
            vocab,
            judgments,
            queries,
            ..
        } => {
            note(inputs, "vectors", vectors);
            note(inputs, "model", model);
            note(inputs, "vocab", vocab);
            note(inputs, "judgments", judgments);
            let index = VectorIndex::load(vectors)?;
            let params = load_checkpoint(model)?;
            let vocab = Vocabulary::load(vocab)?;
            let judged = judgments_by_query(&corpus::load_judgments(judgments)?);
            let qs: Vec<String> = match queries {
                Some(p) => {
                    note(inputs, "queries", p);
                    read_queries(p)?
                }
                None => judged.keys().cloned().collect(),
            };
            let ranked = pipeline::retrieve_all(&index, &qs, &vocab, &params, 20)?;
            let mut csv = String::from("query,ncg@5,ncg@20\n");
            let (mut s5, mut s20) = (0.0, 0.0);
            for q in &qs {
                let j = judged
                    .get(q)
                    .filter(|j| !j.is_empty())
                    .ok_or_else(|| Error::NoJudgments(q.clone()))?;
                let (a, b) = (ncg_query(&ranked[q], j, 5), ncg_query(&ranked[q], j, 20));
                s5 += a;
                s20 += b;
                writeln!(csv, "{},{a:.6},{b:.6}", csv_field(q)).expect("write");
            }
            let n = qs.len().max(1) as f64;
            emit(&format!("queries {} ncg@5 {:.2} ncg@20 {:.2}", qs.len(), 100.0 * s5 / n, 100.0 * s20 / n));
            Ok(vec![write(out.join("eval.csv"), csv)?])
        }
        Command::Stats { graph, .. } => {
            note(inputs, "graph", graph);
            let stats = graph_stats(&Micg::load(graph)?);
            let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
            emit(&text);
            Ok(vec![write(out.join("stats.json"), text + "\n")?])
        }
    }
}

/// Prints a line to stdout, ignoring a closed pipe.
fn emit(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
