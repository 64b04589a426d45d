//! The multi-intention co-click graph: one node per (document, intention
//! group), an edge wherever two nodes share a normalized click key.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intent::IntentionGroup;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphBuildConfig {
    /// Max nodes joined per click key; `None` means unbounded.
    pub fanout_cap: Option<usize>,
    /// Neighbors sampled per node.
    pub n: usize,
    /// Subgraph depth.
    pub k: usize,
}

impl Default for GraphBuildConfig {
    fn default() -> Self {
        Self {
            fanout_cap: Some(64),
            n: 2,
            k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicgNode {
    pub node_id: NodeId,
    pub doc_id: String,
    pub group_id: u32,
    pub click_keys: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Micg {
    pub nodes: Vec<MicgNode>,
    /// Sorted, deduplicated neighbor lists indexed by node id.
    pub adjacency: Vec<Vec<NodeId>>,
    /// Keys whose node list was truncated by the fan-out cap.
    pub capped_keys: Vec<String>,
}

/// Builds the graph from per-document intention groups. Nodes are numbered in
/// doc_id order, then group order.
pub fn build_micg(groups: &[(String, Vec<IntentionGroup>)], cfg: &GraphBuildConfig) -> Micg {
    let mut ordered: Vec<&(String, Vec<IntentionGroup>)> = groups.iter().collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));

    let mut nodes = Vec::new();
    for (doc_id, doc_groups) in ordered {
        for g in doc_groups {
            nodes.push(MicgNode {
                node_id: nodes.len() as NodeId,
                doc_id: doc_id.clone(),
                group_id: g.group_id,
                click_keys: g.members.iter().cloned().collect(),
            });
        }
    }

    let mut inverted: BTreeMap<&str, Vec<NodeId>> = BTreeMap::new();
    for node in &nodes {
        for key in &node.click_keys {
            inverted.entry(key.as_str()).or_default().push(node.node_id);
        }
    }

    let cap = cfg.fanout_cap.unwrap_or(usize::MAX);
    let capped_keys = inverted
        .iter()
        .filter(|(_, list)| list.len() > cap)
        .map(|(k, _)| k.to_string())
        .collect();

    let lists: Vec<&Vec<NodeId>> = inverted.values().collect();
    let mut edges: Vec<(NodeId, NodeId)> = lists
        .par_iter()
        .flat_map_iter(|list| {
            let list = &list[..list.len().min(cap)];
            (0..list.len()).flat_map(move |i| {
                (i + 1..list.len()).map(move |j| (list[i].min(list[j]), list[i].max(list[j])))
            })
        })
        .collect();
    edges.par_sort_unstable();
    edges.dedup();

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for &(a, b) in &edges {
        if a != b {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Micg {
        nodes,
        adjacency,
        capped_keys,
    }
}

impl Micg {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id as usize]
    }

    /// Undirected edges as (smaller, larger), sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (i, list) in self.adjacency.iter().enumerate() {
            for &j in list {
                if (i as NodeId) < j {
                    out.push((i as NodeId, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        for node in &self.nodes {
            put_str(&mut out, &node.doc_id);
            out.extend_from_slice(&node.group_id.to_le_bytes());
            out.extend_from_slice(&(node.click_keys.len() as u32).to_le_bytes());
            for key in &node.click_keys {
                put_str(&mut out, key);
            }
        }
        let edges = self.edges();
        out.extend_from_slice(&(edges.len() as u64).to_le_bytes());
        for (a, b) in edges {
            out.extend_from_slice(&(a as u64).to_le_bytes());
            out.extend_from_slice(&(b as u64).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::BadFormat("micg: bad magic".into()));
        }
        let n = r.u64()? as usize;
        let mut nodes = Vec::with_capacity(n.min(1 << 20));
        for id in 0..n {
            let doc_id = r.string()?;
            let group_id = r.u32()?;
            let key_count = r.u32()?;
            let mut click_keys = BTreeSet::new();
            for _ in 0..key_count {
                click_keys.insert(r.string()?);
            }
            nodes.push(MicgNode {
                node_id: id as NodeId,
                doc_id,
                group_id,
                click_keys,
            });
        }
        let m = r.u64()?;
        let mut adjacency = vec![Vec::new(); n];
        for _ in 0..m {
            let (a, b) = (r.u64()? as usize, r.u64()? as usize);
            if a >= b || b >= n {
                return Err(Error::BadFormat(format!("micg: bad edge ({a},{b})")));
            }
            adjacency[a].push(b as NodeId);
            adjacency[b].push(a as NodeId);
        }
        if r.pos != bytes.len() {
            return Err(Error::BadFormat("micg: trailing bytes".into()));
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            nodes,
            adjacency,
            capped_keys: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const MAGIC: &[u8; 8] = b"MICG0001";

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::BadFormat("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::BadFormat("invalid utf-8 string".into()))
    }
}

/// K layers of sampled neighbors. Layer k (0-based) holds `n^(k+1)` slots;
/// each parent owns a contiguous run of `n` children. `None` is PAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborSubgraph {
    pub center: NodeId,
    pub n: usize,
    pub layers: Vec<Vec<Option<NodeId>>>,
    pub rng_seed: u64,
}

impl NeighborSubgraph {
    /// A subgraph with every slot PAD, used for documents outside the graph.
    pub fn isolated(center: NodeId, n: usize, k: usize, rng_seed: u64) -> Self {
        let layers = (1..=k).map(|l| vec![None; n.pow(l as u32)]).collect();
        Self {
            center,
            n,
            layers,
            rng_seed,
        }
    }

    pub fn has_neighbors(&self) -> bool {
        self.layers.first().is_some_and(|l| l.iter().any(Option::is_some))
    }

    pub fn slot_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Children of slot `idx` in layer `layer` (0-based).
    pub fn children(&self, layer: usize, idx: usize) -> &[Option<NodeId>] {
        &self.layers[layer + 1][idx * self.n..(idx + 1) * self.n]
    }
}

fn draw(g: &Micg, node: NodeId, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Option<NodeId>>) {
    let adj = g.neighbors(node);
    let take = n.min(adj.len());
    for i in index::sample(rng, adj.len(), take).into_iter() {
        out.push(Some(adj[i]));
    }
    out.extend(std::iter::repeat(None).take(n - take));
}

/// Samples a K-layer neighbor subgraph uniformly without replacement.
/// Deterministic in (graph, center, cfg, seed).
pub fn sample_subgraph(
    g: &Micg,
    center: NodeId,
    cfg: &GraphBuildConfig,
    seed: u64,
) -> Result<NeighborSubgraph> {
    if center as usize >= g.node_count() {
        return Err(Error::NoSuchNode(center as usize));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(center as u64);
    let mut layers: Vec<Vec<Option<NodeId>>> = Vec::with_capacity(cfg.k);
    let mut frontier = vec![Some(center)];
    for _ in 0..cfg.k {
        let mut next = Vec::with_capacity(frontier.len() * cfg.n);
        for parent in &frontier {
            match parent {
                Some(p) => draw(g, *p, cfg.n, &mut rng, &mut next),
                None => next.extend(std::iter::repeat(None).take(cfg.n)),
            }
        }
        layers.push(next.clone());
        frontier = next;
    }
    Ok(NeighborSubgraph {
        center,
        n: cfg.n,
        layers,
        rng_seed: seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    /// degree -> number of nodes with that degree
    pub degree_histogram: BTreeMap<usize, usize>,
    /// Fraction of nodes with at least one neighbor.
    pub node_coverage: f64,
    /// Fraction of distinct click keys held by two or more nodes.
    pub shared_key_ratio: f64,
    pub capped_keys: Vec<String>,
}

pub fn graph_stats(g: &Micg) -> GraphStats {
    let mut degree_histogram = BTreeMap::new();
    for list in &g.adjacency {
        *degree_histogram.entry(list.len()).or_insert(0) += 1;
    }
    let covered = g.adjacency.iter().filter(|l| !l.is_empty()).count();
    let mut key_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for node in &g.nodes {
        for k in &node.click_keys {
            *key_counts.entry(k.as_str()).or_default() += 1;
        }
    }
    let shared = key_counts.values().filter(|&&c| c >= 2).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    GraphStats {
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        degree_histogram,
        node_coverage: ratio(covered, g.node_count()),
        shared_key_ratio: ratio(shared, key_counts.len()),
        capped_keys: g.capped_keys.clone(),
    }
}
