//! Siamese transformer encoders, the neighbor featurizer, two-factor graph
//! attention and the final integration of text and graph vectors.

mod checkpoint;
mod params;

use std::collections::HashMap;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use params::{ConvIds, HeadIds, LayerIds, Layout, ModelConfig, ModelParams};

use crate::corpus::{DocumentRecord, SourceTag};
use crate::error::{Error, Result};
use crate::micg::{NeighborSubgraph, NodeId};
use crate::tape::{Mat, Tape, Var};
use crate::text::{self, Vocabulary, CLS_ID, SEP_ID};

pub type Embedding = Vec<f64>;

const LN_EPS: f64 = 1e-6;

/// Segment ids of the document sources.
pub const SEG_TITLE: u32 = 0;
pub const SEG_URL: u32 = 1;
pub const SEG_ANCHOR: u32 = 2;
pub const SEG_CLICKS: u32 = 3;

/// Tokenized texts of one graph node: the document's three sources plus the
/// click keys of this node's intention group only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeText {
    pub title: Vec<u32>,
    pub url: Vec<u32>,
    pub anchor: Vec<u32>,
    pub clicks: Vec<u32>,
}

impl NodeText {
    pub fn new<'a>(
        doc: Option<&DocumentRecord>,
        click_keys: impl IntoIterator<Item = &'a str>,
        vocab: &Vocabulary,
    ) -> Self {
        let src = |tag| doc.map(|d| text::tokenize(d.source(tag), vocab).ids).unwrap_or_default();
        let mut clicks = Vec::new();
        for key in click_keys {
            clicks.extend(text::tokenize(key, vocab).ids);
        }
        Self {
            title: src(SourceTag::Title),
            url: src(SourceTag::Url),
            anchor: src(SourceTag::Anchor),
            clicks,
        }
    }

    fn sources(&self) -> [&[u32]; 4] {
        [&self.title, &self.url, &self.anchor, &self.clicks]
    }
}

/// Token, segment and position ids of one encoder input. Positions run
/// 0..len; the mask marks real tokens (all true for single sequences).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    pub segments: Vec<u32>,
    pub mask: Vec<bool>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.len() > cfg.p_max {
            return Err(Error::BadId(format!("sequence length {} > p_max {}", self.len(), cfg.p_max)));
        }
        if let Some(id) = self.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::BadId(format!("token id {id}")));
        }
        if let Some(s) = self.segments.iter().find(|&&s| s as usize >= cfg.s_max) {
            return Err(Error::BadId(format!("segment id {s}")));
        }
        Ok(())
    }

    fn from_parts(ids: Vec<u32>, segments: Vec<u32>) -> Self {
        let mask = vec![true; ids.len()];
        Self { ids, segments, mask }
    }
}

/// Per-source token budgets: unchanged if everything fits, otherwise
/// proportional floors with the remainder handed out in source order.
fn truncate_proportional(lens: &[usize], budget: usize) -> Vec<usize> {
    let total: usize = lens.iter().sum();
    if total <= budget {
        return lens.to_vec();
    }
    let mut alloc: Vec<usize> = lens.iter().map(|&l| l * budget / total).collect();
    let mut left = budget - alloc.iter().sum::<usize>();
    for (a, &l) in alloc.iter_mut().zip(lens) {
        if left == 0 {
            break;
        }
        if *a < l {
            *a += 1;
            left -= 1;
        }
    }
    alloc
}

/// `[CLS]` followed by the query tokens.
pub fn query_input(tokens: &[u32], cfg: &ModelConfig) -> EncodedInput {
    let n = tokens.len().min(cfg.p_max - 1);
    let mut ids = Vec::with_capacity(n + 1);
    ids.push(CLS_ID);
    ids.extend_from_slice(&tokens[..n]);
    EncodedInput::from_parts(ids, vec![0; n + 1])
}

/// `[CLS] title [SEP] url [SEP] anchor [SEP] clicks [SEP]`, one segment id
/// per source; each `[SEP]` carries the segment of the source it closes.
pub fn document_input(text: &NodeText, cfg: &ModelConfig) -> EncodedInput {
    let sources = text.sources();
    let lens: Vec<usize> = sources.iter().map(|s| s.len()).collect();
    let alloc = truncate_proportional(&lens, cfg.p_max - 5);
    let mut ids = vec![CLS_ID];
    let mut segments = vec![0];
    for (seg, (src, &take)) in sources.iter().zip(&alloc).enumerate() {
        ids.extend_from_slice(&src[..take]);
        ids.push(SEP_ID);
        segments.extend(std::iter::repeat(seg as u32).take(take + 1));
    }
    EncodedInput::from_parts(ids, segments)
}

/// Source tokens without `[CLS]`/`[SEP]`, segment ids kept.
pub fn node_feature_input(text: &NodeText, cfg: &ModelConfig) -> EncodedInput {
    let sources = text.sources();
    let lens: Vec<usize> = sources.iter().map(|s| s.len()).collect();
    let alloc = truncate_proportional(&lens, cfg.p_max);
    let mut ids = Vec::new();
    let mut segments = Vec::new();
    for (seg, (src, &take)) in sources.iter().zip(&alloc).enumerate() {
        ids.extend_from_slice(&src[..take]);
        segments.extend(std::iter::repeat(seg as u32).take(take));
    }
    EncodedInput::from_parts(ids, segments)
}

/// Which set of graph-attention weights to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionSite {
    /// Convolve layer k, 1-based, k < K.
    Convolve(usize),
    /// The final attention of the document vector over its first-layer neighbors.
    Integration,
}

/// Tape-level forward passes. Holds the parameter layout so ids are resolved once.
pub struct Forward<'m> {
    pub params: &'m ModelParams,
    pub layout: Layout,
}

impl<'m> Forward<'m> {
    pub fn new(params: &'m ModelParams) -> Self {
        Self {
            params,
            layout: params.layout(),
        }
    }

    fn cfg(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn tape(&self) -> Tape<'m> {
        Tape::new(&self.params.tensors)
    }

    pub fn embed(&self, t: &mut Tape, inp: &EncodedInput) -> Var {
        let positions: Vec<u32> = (0..inp.len() as u32).collect();
        let tok = t.gather(self.layout.token, &inp.ids);
        let seg = t.gather(self.layout.segment, &inp.segments);
        let pos = t.gather(self.layout.position, &positions);
        let s = t.add(tok, seg);
        t.add(s, pos)
    }

    fn linear(&self, t: &mut Tape, x: Var, w: usize, b: usize) -> Var {
        let w = t.param(w);
        let b = t.param(b);
        let y = t.matmul(x, w);
        t.add_bias(y, b)
    }

    /// Pre-norm transformer block. With `cls_only` the output holds just the
    /// first row, which is all the final layer needs.
    fn block(&self, t: &mut Tape, lay: &LayerIds, x: Var, cls_only: bool) -> Var {
        let (d, heads) = (self.cfg().d, self.cfg().heads);
        let dh = d / heads;
        let g1 = t.param(lay.ln1_g);
        let b1 = t.param(lay.ln1_b);
        let h = t.layer_norm(x, g1, b1, LN_EPS);
        let q_src = if cls_only { t.select_rows(h, &[0]) } else { h };
        let q = self.linear(t, q_src, lay.wq, lay.bq);
        // a key bias would shift every score in a row equally, so there is none
        let wk = t.param(lay.wk);
        let k = t.matmul(h, wk);
        let v = self.linear(t, h, lay.wv, lay.bv);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for m in 0..heads {
            let (qs, ks, vs) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    t.slice_cols(q, m * dh, dh),
                    t.slice_cols(k, m * dh, dh),
                    t.slice_cols(v, m * dh, dh),
                )
            };
            let s = t.matmul_nt(qs, ks);
            let s = t.scale(s, scale);
            let a = t.softmax_rows(s);
            outs.push(t.matmul(a, vs));
        }
        let o = if heads == 1 { outs[0] } else { t.concat_cols(&outs) };
        let o = self.linear(t, o, lay.wo, lay.bo);
        let res = if cls_only { t.select_rows(x, &[0]) } else { x };
        let x1 = t.add(res, o);
        let g2 = t.param(lay.ln2_g);
        let b2 = t.param(lay.ln2_b);
        let h2 = t.layer_norm(x1, g2, b2, LN_EPS);
        let f = self.linear(t, h2, lay.w1, lay.b1);
        let f = t.gelu(f);
        let f = self.linear(t, f, lay.w2, lay.b2);
        t.add(x1, f)
    }

    /// Runs a transformer stack and returns the final `[CLS]` row (1×d).
    pub fn transformer(&self, t: &mut Tape, stack: &[LayerIds], inp: &EncodedInput) -> Var {
        let mut x = self.embed(t, inp);
        for (l, lay) in stack.iter().enumerate() {
            x = self.block(t, lay, x, l + 1 == stack.len());
        }
        x
    }

    pub fn query(&self, t: &mut Tape, tokens: &[u32]) -> Var {
        let inp = query_input(tokens, self.cfg());
        self.transformer(t, &self.layout.query, &inp)
    }

    pub fn document(&self, t: &mut Tape, text: &NodeText) -> Var {
        let inp = document_input(text, self.cfg());
        self.transformer(t, &self.layout.doc, &inp)
    }

    /// r = Gelu(W_h · mean(token rows) + b_h); an empty input pools to zero.
    pub fn featurize(&self, t: &mut Tape, text: &NodeText) -> Var {
        let inp = node_feature_input(text, self.cfg());
        let pooled = if inp.is_empty() {
            t.input(Mat::zeros(1, self.cfg().d))
        } else {
            let e = self.embed(t, &inp);
            t.mean_rows(e)
        };
        let r = self.linear(t, pooled, self.layout.wh, self.layout.bh);
        t.gelu(r)
    }

    /// Attention of `center` (1×d) over `neighbors` (n×d) for one head: a 1×n
    /// softmax of LeakyReLU(cᵀ[W z_c ‖ W z_j]) + Tanh(W_d z_c · W_d z_j).
    pub fn head_weights(&self, t: &mut Tape, head: &HeadIds, center: Var, neighbors: Var) -> Var {
        let w = t.param(head.w);
        let dh = t.value(w).cols;
        let c = t.param(head.c);
        let wd = t.param(head.wd);
        let pc = t.matmul(center, w);
        let pn = t.matmul(neighbors, w);
        let left_idx: Vec<usize> = (0..dh).collect();
        let right_idx: Vec<usize> = (dh..2 * dh).collect();
        let c_left = t.select_rows(c, &left_idx);
        let c_right = t.select_rows(c, &right_idx);
        let sc = t.matmul(pc, c_left);
        let sn = t.matmul(pn, c_right);
        let interaction = t.add_bias(sn, sc);
        let interaction = t.leaky_relu(interaction, self.cfg().leaky_slope);
        let dc = t.matmul(center, wd);
        let dn = t.matmul(neighbors, wd);
        let dot = t.matmul_nt(dn, dc);
        let dot = t.tanh(dot);
        let score = t.add(interaction, dot);
        let score = t.transpose(score);
        t.softmax_rows(score)
    }

    /// σ(Σ_j α_j W_t z_j) for one head, σ = Gelu. Returns (output, α).
    fn head_output(&self, t: &mut Tape, head: &HeadIds, center: Var, neighbors: Var) -> (Var, Var) {
        let alpha = self.head_weights(t, head, center, neighbors);
        let wt = t.param(head.wt);
        let values = t.matmul(neighbors, wt);
        let agg = t.matmul(alpha, values);
        (t.gelu(agg), alpha)
    }

    /// One AttentionConvolve layer. `neighbors` is None when every slot is PAD,
    /// in which case the aggregated vector is zero.
    pub fn convolve(&self, t: &mut Tape, conv: &ConvIds, r_center: Var, neighbors: Option<Var>) -> Var {
        let h = match neighbors {
            None => t.input(Mat::zeros(1, self.cfg().d)),
            Some(nb) => {
                let outs: Vec<Var> = conv
                    .heads
                    .iter()
                    .map(|head| self.head_output(t, head, r_center, nb).0)
                    .collect();
                if outs.len() == 1 {
                    outs[0]
                } else {
                    t.concat_cols(&outs)
                }
            }
        };
        let joined = t.concat_cols(&[h, r_center]);
        let y = self.linear(t, joined, conv.wc, conv.bc);
        t.gelu(y)
    }

    /// Mean over heads of the integration attention output, and the per-head α.
    pub fn integrate(&self, t: &mut Tape, center: Var, neighbors: Var) -> (Var, Vec<Var>) {
        let mut acc: Option<Var> = None;
        let mut alphas = Vec::new();
        for head in &self.layout.integration {
            let (out, alpha) = self.head_output(t, head, center, neighbors);
            alphas.push(alpha);
            acc = Some(match acc {
                None => out,
                Some(a) => t.add(a, out),
            });
        }
        let sum = acc.expect("at least one head");
        let mean = t.scale(sum, 1.0 / self.layout.integration.len() as f64);
        (mean, alphas)
    }

    /// Full document-node encoding on one tape.
    pub fn node(
        &self,
        t: &mut Tape,
        center: &NodeText,
        sub: &NeighborSubgraph,
        texts: &[NodeText],
    ) -> NodeVars {
        let vb = self.document(t, center);
        let gamma = sub.has_neighbors();
        if !gamma || self.cfg().lambda == 0.0 {
            return NodeVars {
                v: vb,
                vb,
                vg: None,
                alphas: Vec::new(),
                gamma,
                slots: Vec::new(),
            };
        }
        let mut feats: HashMap<NodeId, Var> = HashMap::new();
        let first: Vec<(usize, NodeId)> = sub.layers[0]
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|n| (i, n)))
            .collect();
        let rows: Vec<Var> = first
            .iter()
            .map(|&(i, n)| self.slot_vector(t, sub, texts, 0, i, n, &mut feats))
            .collect();
        let nb = t.concat_rows(&rows);
        let (vg, alphas) = self.integrate(t, vb, nb);
        let scaled = t.scale(vg, self.cfg().lambda);
        let v = t.add(vb, scaled);
        NodeVars {
            v,
            vb,
            vg: Some(vg),
            alphas,
            gamma,
            slots: first.iter().map(|&(i, _)| i).collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn slot_vector(
        &self,
        t: &mut Tape,
        sub: &NeighborSubgraph,
        texts: &[NodeText],
        layer: usize,
        idx: usize,
        node: NodeId,
        feats: &mut HashMap<NodeId, Var>,
    ) -> Var {
        let r = *feats
            .entry(node)
            .or_insert_with(|| self.featurize(t, &texts[node as usize]));
        if layer + 1 == sub.layers.len() {
            return r;
        }
        let children: Vec<(usize, NodeId)> = sub
            .children(layer, idx)
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.map(|n| (idx * sub.n + j, n)))
            .collect();
        let rows: Vec<Var> = children
            .iter()
            .map(|&(ci, cn)| self.slot_vector(t, sub, texts, layer + 1, ci, cn, feats))
            .collect();
        let nb = if rows.is_empty() {
            None
        } else {
            Some(t.concat_rows(&rows))
        };
        self.convolve(t, &self.layout.conv[layer], r, nb)
    }
}

/// Tape handles produced by `Forward::node`.
pub struct NodeVars {
    pub v: Var,
    pub vb: Var,
    pub vg: Option<Var>,
    /// Integration attention per head (1×n_real each).
    pub alphas: Vec<Var>,
    pub gamma: bool,
    /// Layer-1 slot index of each real neighbor, aligned with α columns.
    pub slots: Vec<usize>,
}

fn row_of(t: &Tape, v: Var) -> Embedding {
    t.value(v).data.clone()
}

fn check_vec(v: &[f64], d: usize) -> Result<()> {
    if v.len() != d {
        return Err(Error::DimMismatch {
            expected: d,
            got: v.len(),
        });
    }
    Ok(())
}

/// Row t = token_emb[id_t] + segment_emb[seg_t] + pos_emb[t].
pub fn embed_sequence(inp: &EncodedInput, params: &ModelParams) -> Result<Mat> {
    inp.validate(&params.config)?;
    if inp.segments.len() != inp.ids.len() {
        return Err(Error::BadId("segment/token length mismatch".into()));
    }
    let f = Forward::new(params);
    let mut t = f.tape();
    let e = f.embed(&mut t, inp);
    Ok(t.value(e).clone())
}

/// Final-layer `[CLS]` output of the query stack.
pub fn encode_query(tokens: &[u32], params: &ModelParams) -> Result<Embedding> {
    query_input(tokens, &params.config).validate(&params.config)?;
    let f = Forward::new(params);
    let mut t = f.tape();
    let v = f.query(&mut t, tokens);
    Ok(row_of(&t, v))
}

/// Final-layer `[CLS]` output of the document stack (v^b).
pub fn encode_document_text(text: &NodeText, params: &ModelParams) -> Result<Embedding> {
    document_input(text, &params.config).validate(&params.config)?;
    let f = Forward::new(params);
    let mut t = f.tape();
    let v = f.document(&mut t, text);
    Ok(row_of(&t, v))
}

/// Mean-pooled token embeddings through the dense Gelu featurizer (r).
pub fn featurize_node(text: &NodeText, params: &ModelParams) -> Result<Embedding> {
    node_feature_input(text, &params.config).validate(&params.config)?;
    let f = Forward::new(params);
    let mut t = f.tape();
    let v = f.featurize(&mut t, text);
    Ok(row_of(&t, v))
}

fn site_heads<'a>(layout: &'a Layout, site: AttentionSite) -> Result<&'a [HeadIds]> {
    match site {
        AttentionSite::Integration => Ok(&layout.integration),
        AttentionSite::Convolve(k) if k >= 1 && k <= layout.conv.len() => Ok(&layout.conv[k - 1].heads),
        AttentionSite::Convolve(k) => Err(Error::InvalidConfig(format!("no convolve layer {k}"))),
    }
}

/// Per-head attention weights over neighbor slots; masked slots (mask false)
/// get weight 0 and the rest sum to 1.
pub fn two_factor_attention_weights(
    z_center: &[f64],
    neighbors: &[Embedding],
    mask: &[bool],
    site: AttentionSite,
    params: &ModelParams,
) -> Result<Vec<Vec<f64>>> {
    let d = params.config.d;
    check_vec(z_center, d)?;
    if mask.len() != neighbors.len() {
        return Err(Error::DimMismatch {
            expected: neighbors.len(),
            got: mask.len(),
        });
    }
    let live: Vec<usize> = (0..neighbors.len()).filter(|&i| mask[i]).collect();
    if live.is_empty() {
        return Err(Error::NoNeighbors);
    }
    let mut rows = Vec::with_capacity(live.len() * d);
    for &i in &live {
        check_vec(&neighbors[i], d)?;
        rows.extend_from_slice(&neighbors[i]);
    }
    let f = Forward::new(params);
    let heads = site_heads(&f.layout, site)?;
    let mut t = f.tape();
    let zc = t.input(Mat::row_vector(z_center.to_vec()));
    let zn = t.input(Mat::from_vec(live.len(), d, rows));
    let mut out = Vec::with_capacity(heads.len());
    for head in heads {
        let alpha = f.head_weights(&mut t, head, zc, zn);
        let mut w = vec![0.0; neighbors.len()];
        for (&slot, &a) in live.iter().zip(&t.value(alpha).data) {
            w[slot] = a;
        }
        out.push(w);
    }
    Ok(out)
}

/// One AttentionConvolve layer (1-based `layer`); `None` neighbors are PAD.
pub fn attention_convolve(
    r_center: &[f64],
    neighbors: &[Option<Embedding>],
    layer: usize,
    params: &ModelParams,
) -> Result<Embedding> {
    let d = params.config.d;
    check_vec(r_center, d)?;
    let f = Forward::new(params);
    if layer == 0 || layer > f.layout.conv.len() {
        return Err(Error::InvalidConfig(format!("no convolve layer {layer}")));
    }
    let mut t = f.tape();
    let rc = t.input(Mat::row_vector(r_center.to_vec()));
    let live: Vec<&Embedding> = neighbors.iter().flatten().collect();
    let nb = if live.is_empty() {
        None
    } else {
        let mut rows = Vec::with_capacity(live.len() * d);
        for v in &live {
            check_vec(v, d)?;
            rows.extend_from_slice(v);
        }
        Some(t.input(Mat::from_vec(live.len(), d, rows)))
    };
    let out = f.convolve(&mut t, &f.layout.conv[layer - 1], rc, nb);
    Ok(row_of(&t, out))
}

/// Result of encoding one document node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEncoding {
    pub v: Embedding,
    pub v_b: Embedding,
    /// Graph vector before masking; None when γ = 0 or λ = 0.
    pub v_g: Option<Embedding>,
    pub gamma: bool,
    /// Head-averaged integration attention per layer-1 slot (0 for PAD).
    pub attention: Vec<f64>,
}

/// Full encoding of a document node from its sampled subgraph. `texts` is
/// indexed by graph node id.
pub fn encode_node(
    center: &NodeText,
    sub: &NeighborSubgraph,
    texts: &[NodeText],
    params: &ModelParams,
) -> Result<NodeEncoding> {
    if sub.layers.len() != params.config.k {
        return Err(Error::InvalidConfig(format!(
            "subgraph depth {} != model k {}",
            sub.layers.len(),
            params.config.k
        )));
    }
    for slot in sub.layers.iter().flatten().flatten() {
        if *slot as usize >= texts.len() {
            return Err(Error::NoSuchNode(*slot as usize));
        }
    }
    document_input(center, &params.config).validate(&params.config)?;
    let f = Forward::new(params);
    let mut t = f.tape();
    let vars = f.node(&mut t, center, sub, texts);
    Ok(node_encoding(&t, &vars, sub.layers[0].len()))
}

pub(crate) fn node_encoding(t: &Tape, vars: &NodeVars, slots: usize) -> NodeEncoding {
    let mut attention = vec![0.0; slots];
    if !vars.alphas.is_empty() {
        let m = vars.alphas.len() as f64;
        for a in &vars.alphas {
            for (&slot, w) in vars.slots.iter().zip(&t.value(*a).data) {
                attention[slot] += w / m;
            }
        }
    }
    NodeEncoding {
        v: row_of(t, vars.v),
        v_b: row_of(t, vars.vb),
        v_g: vars.vg.map(|g| row_of(t, g)),
        gamma: vars.gamma,
        attention,
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of the two vectors.
pub fn similarity(v_q: &[f64], v_d: &[f64]) -> Result<f64> {
    if v_q.len() != v_d.len() {
        return Err(Error::DimMismatch {
            expected: v_q.len(),
            got: v_d.len(),
        });
    }
    let (nq, nd) = (l2_norm(v_q), l2_norm(v_d));
    if nq == 0.0 || nd == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s: f64 = v_q.iter().zip(v_d).map(|(a, b)| (a / nq) * (b / nd)).sum();
    Ok(s.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::gelu;

    fn tiny(d: usize, heads: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d,
            layers: 1,
            heads,
            k: 2,
            s_max: 4,
            p_max: 16,
            ffn: 8,
            ..ModelConfig::default()
        }
    }

    fn zero_all(p: &mut ModelParams, prefix: &str) {
        for i in 0..p.names().len() {
            if p.names()[i].starts_with(prefix) {
                p.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn text(title: &[u32], url: &[u32], anchor: &[u32], clicks: &[u32]) -> NodeText {
        NodeText {
            title: title.to_vec(),
            url: url.to_vec(),
            anchor: anchor.to_vec(),
            clicks: clicks.to_vec(),
        }
    }

    fn rand_vec(d: usize, seed: u64) -> Vec<f64> {
        (0..d).map(|i| ((seed * 31 + i as u64 * 17) % 13) as f64 / 6.0 - 1.0).collect()
    }

    #[test]
    fn embedding_sums_rows() {
        let mut p = ModelParams::init(tiny(2, 1), 0.5, 1).unwrap();
        zero_all(&mut p, "emb.");
        p.get_mut("emb.token").row_mut(5).copy_from_slice(&[1.0, 0.0]);
        p.get_mut("emb.segment").row_mut(0).copy_from_slice(&[0.0, 1.0]);
        p.get_mut("emb.position").row_mut(0).copy_from_slice(&[1.0, 1.0]);
        p.get_mut("emb.position").row_mut(1).copy_from_slice(&[0.5, -2.0]);
        let inp = EncodedInput::from_parts(vec![5, 5], vec![0, 0]);
        let m = embed_sequence(&inp, &p).unwrap();
        assert_eq!(m.row(0), &[2.0, 2.0]);
        assert_eq!(m.row(1), &[1.5, -1.0]);
        let bad = EncodedInput::from_parts(vec![99], vec![0]);
        assert!(matches!(embed_sequence(&bad, &p), Err(Error::BadId(_))));
    }

    #[test]
    fn zero_transformer_returns_cls_embedding() {
        let mut p = ModelParams::init(tiny(4, 2), 0.5, 2).unwrap();
        zero_all(&mut p, "query.");
        let v = encode_query(&[7, 8], &p).unwrap();
        let expect: Vec<f64> = (0..4)
            .map(|j| p.get("emb.token").at(CLS_ID as usize, j) + p.get("emb.segment").at(0, j) + p.get("emb.position").at(0, j))
            .collect();
        assert_eq!(v, expect);
        assert_eq!(encode_query(&[7, 8], &p).unwrap(), v);
        // the empty query is just [CLS]
        assert_eq!(encode_query(&[], &p).unwrap(), expect);
    }

    #[test]
    fn document_sources_are_distinguished() {
        let p = ModelParams::init(tiny(4, 2), 0.5, 3).unwrap();
        let empty = encode_document_text(&NodeText::default(), &p).unwrap();
        assert_eq!(empty, encode_document_text(&NodeText::default(), &p).unwrap());
        assert_eq!(
            document_input(&NodeText::default(), &p.config).ids,
            vec![CLS_ID, SEP_ID, SEP_ID, SEP_ID, SEP_ID]
        );
        let a = encode_document_text(&text(&[6], &[7], &[8], &[]), &p).unwrap();
        let b = encode_document_text(&text(&[6], &[8], &[7], &[]), &p).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn truncation_keeps_separators() {
        let cfg = tiny(4, 2);
        let long: Vec<u32> = (0..40).map(|i| 4 + i % 12).collect();
        let inp = document_input(&text(&long, &long[..4], &[], &long), &cfg);
        assert_eq!(inp.len(), cfg.p_max);
        assert_eq!(inp.ids.iter().filter(|&&i| i == SEP_ID).count(), 4);
        assert_eq!(truncate_proportional(&[40, 4, 0, 40], 11), vec![6, 0, 0, 5]);
        assert_eq!(truncate_proportional(&[3, 2], 9), vec![3, 2]);
    }

    #[test]
    fn featurize_cases() {
        let mut p = ModelParams::init(tiny(1, 1), 0.5, 4).unwrap();
        zero_all(&mut p, "emb.");
        p.get_mut("emb.token").row_mut(6)[0] = 1.0;
        p.get_mut("emb.token").row_mut(7)[0] = 3.0;
        p.get_mut("graph.feat.wh").data[0] = 1.0;
        p.get_mut("graph.feat.bh").data[0] = 0.0;
        let r = featurize_node(&text(&[6, 7], &[], &[], &[]), &p).unwrap();
        assert!((r[0] - 1.954_499_736_103_642).abs() < 1e-12);
        assert_eq!(featurize_node(&text(&[7], &[], &[], &[]), &p).unwrap(), vec![gelu(3.0)]);

        let mut z = ModelParams::init(tiny(4, 2), 0.5, 4).unwrap();
        zero_all(&mut z, "graph.feat");
        assert_eq!(featurize_node(&text(&[6, 7], &[9], &[], &[3]), &z).unwrap(), vec![0.0; 4]);
        // empty text pools to zero, leaving Gelu(b_h)
        z.get_mut("graph.feat.bh").data = vec![1.0, -1.0, 0.0, 2.0];
        let r = featurize_node(&NodeText::default(), &z).unwrap();
        assert_eq!(r, vec![gelu(1.0), gelu(-1.0), 0.0, gelu(2.0)]);
    }

    #[test]
    fn attention_trivial_cases() {
        let mut p = ModelParams::init(tiny(4, 2), 0.5, 5).unwrap();
        let zc = rand_vec(4, 1);
        let nb = vec![rand_vec(4, 2), rand_vec(4, 3), rand_vec(4, 4)];
        let one = two_factor_attention_weights(&zc, &nb, &[false, true, false], AttentionSite::Integration, &p).unwrap();
        for head in &one {
            assert_eq!(head, &vec![0.0, 1.0, 0.0]);
        }
        let masked = two_factor_attention_weights(&zc, &nb, &[false; 3], AttentionSite::Convolve(1), &p);
        assert!(matches!(masked, Err(Error::NoNeighbors)));
        let all = two_factor_attention_weights(&zc, &nb, &[true; 3], AttentionSite::Convolve(1), &p).unwrap();
        for head in &all {
            assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(head.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
        zero_all(&mut p, "graph.");
        let uniform = two_factor_attention_weights(&zc, &nb, &[true; 3], AttentionSite::Integration, &p).unwrap();
        for head in uniform {
            for a in head {
                assert!((a - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_hand_evaluated() {
        let mut p = ModelParams::init(tiny(2, 1), 0.5, 6).unwrap();
        // convolve head: W = I, c = (1, -1 | 2, 0.5), W_d = [[1,0],[0,0]]
        p.get_mut("graph.conv1.head0.w").data = vec![1.0, 0.0, 0.0, 1.0];
        p.get_mut("graph.conv1.head0.c").data = vec![1.0, -1.0, 2.0, 0.5];
        p.get_mut("graph.conv1.head0.wd").data = vec![1.0, 0.0, 0.0, 0.0];
        let zc = [1.0, 2.0];
        let nb = vec![vec![0.5, -1.0], vec![-2.0, 1.0]];
        let w = two_factor_attention_weights(&zc, &nb, &[true, true], AttentionSite::Convolve(1), &p).unwrap();
        let leaky = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        // cᵀ[z_c ‖ z_j] = (1 − 2) + (2·z_j0 + 0.5·z_j1); dot factor = tanh(z_c0 · z_j0)
        let s1 = leaky(-1.0 + 1.0 - 0.5) + (0.5f64).tanh();
        let s2 = leaky(-1.0 - 4.0 + 0.5) + (-2.0f64).tanh();
        let a1 = s1.exp() / (s1.exp() + s2.exp());
        assert!((w[0][0] - a1).abs() < 1e-14);
        assert!((w[0][1] - (1.0 - a1)).abs() < 1e-14);
    }

    #[test]
    fn zeroed_dot_factor_is_plain_gat() {
        let mut p = ModelParams::init(tiny(4, 2), 0.5, 7).unwrap();
        for m in 0..2 {
            zero_all(&mut p, &format!("graph.int.head{m}.wd"));
        }
        let zc = rand_vec(4, 5);
        let nb = vec![rand_vec(4, 6), rand_vec(4, 7)];
        let w = two_factor_attention_weights(&zc, &nb, &[true, true], AttentionSite::Integration, &p).unwrap();
        for (m, head) in w.iter().enumerate() {
            let wm = p.get(&format!("graph.int.head{m}.w"));
            let c = &p.get(&format!("graph.int.head{m}.c")).data;
            let proj = |z: &[f64]| -> Vec<f64> {
                (0..4).map(|j| (0..4).map(|i| z[i] * wm.at(i, j)).sum()).collect()
            };
            let pc = proj(&zc);
            let scores: Vec<f64> = nb
                .iter()
                .map(|z| {
                    let pn = proj(z);
                    let s: f64 = (0..4).map(|j| c[j] * pc[j] + c[4 + j] * pn[j]).sum();
                    if s > 0.0 { s } else { 0.2 * s }
                })
                .collect();
            let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            for j in 0..2 {
                assert!((head[j] - e[j] / (e[0] + e[1])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn convolve_cases() {
        let mut p = ModelParams::init(tiny(2, 1), 0.5, 8).unwrap();
        zero_all(&mut p, "graph.conv1.wc");
        zero_all(&mut p, "graph.conv1.bc");
        let r = [0.3, -0.7];
        assert_eq!(attention_convolve(&r, &[None, None], 1, &p).unwrap(), vec![0.0, 0.0]);

        // one neighbor, W_t = I, W_c = [I; 0] gives Gelu(Gelu(z_j))
        p.get_mut("graph.conv1.head0.wt").data = vec![1.0, 0.0, 0.0, 1.0];
        p.get_mut("graph.conv1.wc").data = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let z = vec![0.8, -1.5];
        let out = attention_convolve(&r, &[None, Some(z.clone())], 1, &p).unwrap();
        for j in 0..2 {
            assert!((out[j] - gelu(gelu(z[j]))).abs() < 1e-15);
        }
    }

    #[test]
    fn no_attention_is_mean_aggregation() {
        let mut p = ModelParams::init(tiny(4, 2), 0.5, 9).unwrap();
        for m in 0..2 {
            zero_all(&mut p, &format!("graph.conv1.head{m}.c"));
            zero_all(&mut p, &format!("graph.conv1.head{m}.wd"));
        }
        let r = rand_vec(4, 1);
        let nb = vec![rand_vec(4, 2), rand_vec(4, 3), rand_vec(4, 9)];
        let out = attention_convolve(&r, &[Some(nb[0].clone()), Some(nb[1].clone()), Some(nb[2].clone())], 1, &p).unwrap();
        let mean: Vec<f64> = (0..4).map(|j| nb.iter().map(|z| z[j]).sum::<f64>() / 3.0).collect();
        let single = attention_convolve(&r, &[Some(mean)], 1, &p).unwrap();
        for j in 0..4 {
            assert!((out[j] - single[j]).abs() < 1e-12);
        }
    }

    fn toy_subgraph(order: &[usize]) -> (NeighborSubgraph, Vec<NodeText>) {
        // node 0 is the center; 1..=3 are layer-1; 4..=9 are layer-2
        let texts: Vec<NodeText> = (0..10u32).map(|i| text(&[4 + i % 12], &[5], &[], &[6 + i % 9])).collect();
        let children = |i: usize| [Some(4 + 2 * (i as u32 - 1)), Some(5 + 2 * (i as u32 - 1))];
        let layer1: Vec<Option<NodeId>> = order.iter().map(|&i| Some(i as NodeId)).collect();
        let layer2: Vec<Option<NodeId>> = order.iter().flat_map(|&i| children(i)).collect();
        let sub = NeighborSubgraph {
            center: 0,
            n: 3,
            layers: vec![layer1, layer2[..].to_vec()],
            rng_seed: 0,
        };
        (sub, texts)
    }

    #[test]
    fn node_vector_is_permutation_invariant() {
        let p = ModelParams::init(tiny(4, 2), 0.5, 10).unwrap();
        // layer 2 holds n children per layer-1 slot; pad to n = 3
        let build = |order: &[usize]| {
            let (mut sub, texts) = toy_subgraph(order);
            let mut padded = Vec::new();
            for chunk in sub.layers[1].chunks(2) {
                padded.extend_from_slice(chunk);
                padded.push(None);
            }
            sub.layers[1] = padded;
            encode_node(&texts[0], &sub, &texts, &p).unwrap()
        };
        let base = build(&[1, 2, 3]);
        assert!(base.gamma);
        for order in [[1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]] {
            let e = build(&order);
            for j in 0..4 {
                assert!((e.v[j] - base.v[j]).abs() < 1e-12);
            }
            let mut w = e.attention.clone();
            let mut b = base.attention.clone();
            w.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            for (x, y) in w.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!((base.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gamma_and_lambda_reductions() {
        let mut p = ModelParams::init(tiny(4, 2), 0.5, 11).unwrap();
        let texts: Vec<NodeText> = (0..3u32).map(|i| text(&[4 + i], &[], &[], &[9])).collect();
        let isolated = NeighborSubgraph::isolated(0, 2, 2, 0);
        let e = encode_node(&texts[0], &isolated, &texts, &p).unwrap();
        assert!(!e.gamma);
        assert_eq!(e.v, e.v_b);
        assert_eq!(e.v_b, encode_document_text(&texts[0], &p).unwrap());
        assert_eq!(e.attention, vec![0.0, 0.0]);

        let sub = NeighborSubgraph {
            center: 0,
            n: 2,
            layers: vec![vec![Some(1), Some(2)], vec![Some(0), None, None, None]],
            rng_seed: 0,
        };
        let with = encode_node(&texts[0], &sub, &texts, &p).unwrap();
        assert!(with.gamma);
        assert_ne!(with.v, with.v_b);
        p.config.lambda = 0.0;
        let base = encode_node(&texts[0], &sub, &texts, &p).unwrap();
        assert_eq!(base.v, base.v_b);
        assert_eq!(base.v, encode_document_text(&texts[0], &p).unwrap());
    }

    #[test]
    fn query_ignores_other_weights() {
        let p = ModelParams::init(tiny(4, 2), 0.5, 12).unwrap();
        let v = encode_query(&[6, 7, 8], &p).unwrap();
        let mut q = p.clone();
        for i in 0..q.names().len() {
            let name = q.names()[i].clone();
            if name.starts_with("doc.") || name.starts_with("graph.") {
                q.tensors[i].data.iter_mut().for_each(|x| *x += 0.37);
            }
        }
        assert_eq!(encode_query(&[6, 7, 8], &q).unwrap(), v);
    }

    #[test]
    fn similarity_cases() {
        assert_eq!(similarity(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(tiny(4, 2), 0.5, 13).unwrap();
        let bytes = write_checkpoint(&p);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(write_checkpoint(&back), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        assert!(matches!(read_checkpoint(b"NOTMIRA0"), Err(Error::BadFormat(_))));
        assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    }
}
