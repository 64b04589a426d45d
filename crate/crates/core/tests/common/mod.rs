#![allow(dead_code)]

use mira::corpus::{ClickLog, ClickRecord, DocumentRecord};
use mira::encoder::{ModelConfig, ModelParams};
use mira::intent::GroupingConfig;
use mira::micg::{sample_subgraph, GraphBuildConfig};
use mira::pipeline::{prepare, training_pairs, vocab_texts, Prepared};
use mira::retrieval::{gen_synthetic, SynthConfig, SynthData};
use mira::text::train_vocab;
use mira::train::Batch;

pub const SAMPLING: GraphBuildConfig = GraphBuildConfig {
    fanout_cap: None,
    n: 2,
    k: 2,
};

pub fn small_synth(seed: u64) -> SynthData {
    gen_synthetic(&small_config(seed)).unwrap()
}

pub fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        topics: 3,
        vocab_per_topic: 12,
        docs_per_topic: 8,
        queries_per_topic: 4,
        families_per_topic: 3,
        family_size: 4,
        generic_words: 10,
        seed,
        ..SynthConfig::default()
    }
}

/// d = 8, one layer, two heads, K = 2, vocabulary of 64.
pub fn tiny_model(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d: 8,
        layers: 1,
        heads: 2,
        k: 2,
        p_max: 48,
        ffn: 16,
        ..ModelConfig::default()
    }
}

/// Every document owns two words that appear nowhere else, and its clicks
/// use only those words, so each query has exactly one matching document.
pub fn separable_prepared(docs: usize) -> Prepared {
    let syll = ["ka", "lo", "mi", "nu", "pe", "ri", "so", "tu"];
    let word = |i: usize, j: usize| format!("{}{}{}", syll[i % 8], syll[(i / 8) % 8], syll[j]);
    let records: Vec<DocumentRecord> = (0..docs)
        .map(|i| DocumentRecord::new(format!("d{i:02}"), &format!("{} {} page", word(i, 0), word(i, 1)), "", ""))
        .collect();
    let mut clicks = ClickLog::new();
    for (i, d) in records.iter().enumerate() {
        let rows = [(format!("{} {}", word(i, 0), word(i, 1)), 3), (word(i, 1), 1)];
        clicks.insert(
            d.doc_id.clone(),
            rows.into_iter()
                .map(|(q, f)| ClickRecord { doc_id: d.doc_id.clone(), query_text: q, frequency: f })
                .collect(),
        );
    }
    let vocab = train_vocab(vocab_texts(&records, &clicks), 128).unwrap();
    prepare(&records, &clicks, vocab, &GroupingConfig::default(), &SAMPLING).unwrap()
}

pub fn small_prepared(seed: u64, vocab_size: usize) -> Prepared {
    prepared_from(&small_synth(seed), vocab_size)
}

pub fn prepared_from(data: &SynthData, vocab_size: usize) -> Prepared {
    let clicks = data.click_log();
    let vocab = train_vocab(vocab_texts(&data.docs, &clicks), vocab_size).unwrap();
    prepare(&data.docs, &clicks, vocab, &GroupingConfig::default(), &SAMPLING).unwrap()
}

/// A fixed batch of `size` training pairs with one rotating negative each.
pub fn fixed_batch(prep: &Prepared, size: usize, seed: u64) -> Batch {
    // centers with two or more neighbors first, so attention gradients are live
    let mut pairs = training_pairs(&prep.graph, &prep.vocab);
    pairs.sort_by_key(|p| prep.graph.neighbors(p.1).len() < 2);
    let step = 3;
    let chosen: Vec<_> = (0..size).map(|i| pairs[(i * step + seed as usize) % pairs.len()].clone()).collect();
    Batch {
        queries: chosen.iter().map(|p| p.0.clone()).collect(),
        centers: chosen.iter().map(|p| p.1).collect(),
        subgraphs: chosen
            .iter()
            .map(|p| sample_subgraph(&prep.graph, p.1, &SAMPLING, seed).unwrap())
            .collect(),
        negatives: (0..size).map(|i| vec![(i + 1) % size]).collect(),
    }
}

pub fn init(prep: &Prepared, seed: u64) -> ModelParams {
    ModelParams::init(tiny_model(prep.vocab.len()), 0.5, seed).unwrap()
}

pub const PIPELINE_CONFIG: &str = "init_std = 0.3

[model]
vocab_size = 256
d = 8
layers = 1
heads = 2
p_max = 48
ffn = 16

[train]
learning_rate = 5e-3
batch_size = 16
epochs = 2

[synth]
topics = 3
vocab_per_topic = 12
docs_per_topic = 8
queries_per_topic = 4
families_per_topic = 3
generic_words = 10
";

/// Runs the installed binary inside `root` and returns its exit code.
pub fn mira(root: &std::path::Path, args: &[&str]) -> i32 {
    std::process::Command::new(env!("CARGO_BIN_EXE_mira"))
        .args(args)
        .current_dir(root)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("binary runs")
        .code()
        .unwrap_or(-1)
}

/// Every CLI command, in pipeline order, with relative paths.
pub const PIPELINE: &[&[&str]] = &[
    &["gen-synth", "--out", "data"],
    &["group-clicks", "--out", "groups", "--clicks", "data/clicks.tsv", "--corpus", "data/corpus.jsonl"],
    &["build-graph", "--out", "graph", "--corpus", "data/corpus.jsonl", "--clicks", "data/clicks.tsv"],
    &["build-graph", "--out", "trad", "--corpus", "data/corpus.jsonl", "--clicks", "data/clicks.tsv", "--traditional"],
    &["sample", "--out", "sample", "--graph", "graph/micg.bin", "--node", "3"],
    &["stats", "--out", "stats", "--graph", "graph/micg.bin"],
    &["train", "--out", "model", "--corpus", "data/corpus.jsonl", "--graph", "graph/micg.bin", "--judgments", "data/judgments.tsv"],
    &["encode", "--out", "enc", "--corpus", "data/corpus.jsonl", "--graph", "graph/micg.bin", "--model", "model/model.bin"],
    &["retrieve", "--out", "ret", "--vectors", "enc/vectors.bin", "--model", "model/model.bin", "--vocab", "graph/vocab.txt", "--queries", "data/queries.tsv"],
    &["eval", "--out", "eval", "--vectors", "enc/vectors.bin", "--model", "model/model.bin", "--vocab", "graph/vocab.txt", "--judgments", "data/judgments.tsv"],
];

/// Runs the whole pipeline in `root` and returns every output file by relative path.
pub fn run_pipeline(root: &std::path::Path, threads: usize, seed: u64) -> std::collections::BTreeMap<String, Vec<u8>> {
    std::fs::write(root.join("run.toml"), PIPELINE_CONFIG).unwrap();
    let (t, s) = (threads.to_string(), seed.to_string());
    for step in PIPELINE {
        let mut args = step.to_vec();
        args.extend(["--config", "run.toml", "--threads", &t, "--seed", &s]);
        assert_eq!(mira(root, &args), 0, "{args:?}");
    }
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
