//! End-to-end stages shared by the command line and the test suites.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::corpus::{doc_index, ClickLog, DocumentRecord, Judgments};
use crate::encoder::{encode_node, encode_query, ModelParams, NodeEncoding, NodeText};
use crate::error::{Error, Result};
use crate::intent::{group_clicks, GroupingConfig, IntentionGroup};
use crate::micg::{build_micg, sample_subgraph, GraphBuildConfig, Micg, NeighborSubgraph, NodeId};
use crate::retrieval::{build_index, ncg_at_k, search, VectorIndex};
use crate::text::{self, Vocabulary};
use crate::train::{fit, Ablation, FitResult, GraphInputs, TrainConfig, TrainData};

pub type DocGroups = Vec<(String, Vec<IntentionGroup>)>;

/// Vocabulary training texts: every document source and every click key.
pub fn vocab_texts<'a>(docs: &'a [DocumentRecord], clicks: &'a ClickLog) -> Vec<&'a str> {
    let mut out: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.sources.iter().map(|(_, s)| s.as_str()))
        .collect();
    out.extend(clicks.values().flatten().map(|c| c.query_text.as_str()));
    out
}

/// Groups every document's clicks in parallel, in doc_id order.
pub fn group_all(clicks: &ClickLog, vocab: &Vocabulary, cfg: &GroupingConfig) -> Result<DocGroups> {
    cfg.validate()?;
    let docs: Vec<(&String, &Vec<_>)> = clicks.iter().collect();
    Ok(docs
        .par_iter()
        .map(|(doc, list)| ((*doc).clone(), group_clicks(list, vocab, cfg)))
        .collect())
}

/// Node texts indexed by node id.
pub fn node_texts(graph: &Micg, docs: &[DocumentRecord], vocab: &Vocabulary) -> Vec<NodeText> {
    let by_id = doc_index(docs);
    graph
        .nodes
        .par_iter()
        .map(|n| {
            NodeText::new(
                by_id.get(n.doc_id.as_str()).copied(),
                n.click_keys.iter().map(String::as_str),
                vocab,
            )
        })
        .collect()
}

/// One (query tokens, node) pair per click key of each node.
pub fn training_pairs(graph: &Micg, vocab: &Vocabulary) -> Vec<(Vec<u32>, NodeId)> {
    graph
        .nodes
        .iter()
        .flat_map(|n| {
            n.click_keys
                .iter()
                .map(move |k| (text::tokenize(k, vocab).ids, n.node_id))
        })
        .filter(|(ids, _)| !ids.is_empty())
        .collect()
}

/// Everything built from a corpus and click log before training.
pub struct Prepared {
    pub vocab: Vocabulary,
    pub groups: DocGroups,
    pub graph: Micg,
    pub texts: Vec<NodeText>,
}

pub fn prepare(
    docs: &[DocumentRecord],
    clicks: &ClickLog,
    vocab: Vocabulary,
    grouping: &GroupingConfig,
    graph_cfg: &GraphBuildConfig,
) -> Result<Prepared> {
    let groups = group_all(clicks, &vocab, grouping)?;
    let graph = build_micg(&groups, graph_cfg);
    let texts = node_texts(&graph, docs, &vocab);
    Ok(Prepared {
        vocab,
        groups,
        graph,
        texts,
    })
}

pub fn train_model(
    prep: &Prepared,
    sampling: GraphBuildConfig,
    init: ModelParams,
    ablation: Ablation,
    cfg: &TrainConfig,
    validator: Option<&(dyn Fn(&ModelParams) -> Result<f64> + Sync)>,
) -> Result<FitResult> {
    let mut params = init;
    let frozen = ablation.apply(&mut params);
    let data = TrainData {
        inputs: GraphInputs {
            graph: &prep.graph,
            texts: &prep.texts,
            sampling,
        },
        pairs: training_pairs(&prep.graph, &prep.vocab),
    };
    fit(&data, params, &frozen, cfg, validator)
}

/// Encodes every graph node, plus an isolated pseudo-node for each corpus
/// document that has no clicks. Records come out in node id order, then
/// doc_id order for the pseudo-nodes.
pub fn encode_corpus(
    prep: &Prepared,
    docs: &[DocumentRecord],
    params: &ModelParams,
    sampling: &GraphBuildConfig,
    seed: u64,
) -> Result<Vec<(String, u32, NodeEncoding)>> {
    let mut out: Vec<(String, u32, NodeEncoding)> = prep
        .graph
        .nodes
        .par_iter()
        .map(|n| {
            let sub = sample_subgraph(&prep.graph, n.node_id, sampling, seed)?;
            let enc = encode_node(&prep.texts[n.node_id as usize], &sub, &prep.texts, params)?;
            Ok((n.doc_id.clone(), n.group_id, enc))
        })
        .collect::<Result<_>>()?;
    let clicked: HashSet<&str> = prep.graph.nodes.iter().map(|n| n.doc_id.as_str()).collect();
    let mut bare: Vec<&DocumentRecord> = docs
        .iter()
        .filter(|d| !clicked.contains(d.doc_id.as_str()))
        .collect();
    bare.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let extra: Vec<(String, u32, NodeEncoding)> = bare
        .par_iter()
        .map(|d| {
            let text = NodeText::new(Some(d), std::iter::empty(), &prep.vocab);
            let sub = NeighborSubgraph::isolated(0, sampling.n, sampling.k, seed);
            Ok((d.doc_id.clone(), 0, encode_node(&text, &sub, &[], params)?))
        })
        .collect::<Result<_>>()?;
    out.extend(extra);
    Ok(out)
}

pub fn index_of(encoded: &[(String, u32, NodeEncoding)]) -> Result<VectorIndex> {
    build_index(
        encoded
            .iter()
            .map(|(d, g, e)| (d.clone(), *g, e.v.clone()))
            .collect(),
    )
}

/// Ranked (doc_id, score) lists per query, `k` deep. A query that encodes
/// to the zero vector retrieves nothing.
pub fn retrieve_scored(
    index: &VectorIndex,
    queries: &[String],
    vocab: &Vocabulary,
    params: &ModelParams,
    k: usize,
) -> Result<BTreeMap<String, Vec<(String, f64)>>> {
    queries
        .par_iter()
        .map(|q| {
            let v = encode_query(&text::tokenize(q, vocab).ids, params)?;
            let hits = match search(index, &v, k) {
                Err(Error::ZeroVector) => Vec::new(),
                other => other?.hits,
            };
            Ok((q.clone(), hits))
        })
        .collect()
}

/// Ranked doc ids per query, `k` deep.
pub fn retrieve_all(
    index: &VectorIndex,
    queries: &[String],
    vocab: &Vocabulary,
    params: &ModelParams,
    k: usize,
) -> Result<BTreeMap<String, Vec<String>>> {
    Ok(retrieve_scored(index, queries, vocab, params, k)?
        .into_iter()
        .map(|(q, hits)| (q, hits.into_iter().map(|(d, _)| d).collect()))
        .collect())
}

/// Mean NCG@k over `queries`.
pub fn evaluate(
    index: &VectorIndex,
    queries: &[String],
    judgments: &Judgments,
    vocab: &Vocabulary,
    params: &ModelParams,
    k: usize,
) -> Result<f64> {
    let results = retrieve_all(index, queries, vocab, params, k)?;
    ncg_at_k(&results, judgments, k)
}
