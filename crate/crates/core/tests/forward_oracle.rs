//! A naive, loop-based forward pass written without the tape, compared
//! against the library encoders.

use mira::encoder::{encode_document_text, encode_node, encode_query, featurize_node, ModelConfig, ModelParams, NodeText};
use mira::micg::NeighborSubgraph;
use mira::text::{CLS_ID, SEP_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

struct Oracle<'a> {
    p: &'a ModelParams,
}

impl Oracle<'_> {
    fn mat(&self, name: &str) -> M {
        let m = self.p.get(name);
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }

    fn vec(&self, name: &str) -> Vec<f64> {
        self.p.get(name).data.clone()
    }

    fn mm(a: &M, b: &M) -> M {
        a.iter()
            .map(|row| (0..b[0].len()).map(|j| (0..row.len()).map(|k| row[k] * b[k][j]).sum()).collect())
            .collect()
    }

    fn affine(&self, x: &M, w: &str, b: &str) -> M {
        let bias = self.vec(b);
        Self::mm(x, &self.mat(w))
            .into_iter()
            .map(|r| r.iter().zip(&bias).map(|(a, b)| a + b).collect())
            .collect()
    }

    fn layer_norm(&self, x: &M, g: &str, b: &str) -> M {
        let (g, b) = (self.vec(g), self.vec(b));
        x.iter()
            .map(|row| {
                let n = row.len() as f64;
                let mu = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                row.iter()
                    .enumerate()
                    .map(|(c, v)| g[c] * (v - mu) / (var + 1e-6).sqrt() + b[c])
                    .collect()
            })
            .collect()
    }

    fn softmax(s: &[f64]) -> Vec<f64> {
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|v| v / z).collect()
    }

    fn embed(&self, ids: &[u32], segs: &[u32]) -> M {
        let (tok, seg, pos) = (self.mat("emb.token"), self.mat("emb.segment"), self.mat("emb.position"));
        (0..ids.len())
            .map(|t| (0..self.p.config.d).map(|j| tok[ids[t] as usize][j] + seg[segs[t] as usize][j] + pos[t][j]).collect())
            .collect()
    }

    fn transformer(&self, stack: &str, ids: &[u32], segs: &[u32]) -> Vec<f64> {
        let cfg = self.p.config;
        let dh = cfg.d / cfg.heads;
        let mut x = self.embed(ids, segs);
        for l in 0..cfg.layers {
            let p = format!("{stack}.{l}");
            let h = self.layer_norm(&x, &format!("{p}.ln1.g"), &format!("{p}.ln1.b"));
            let q = self.affine(&h, &format!("{p}.attn.wq"), &format!("{p}.attn.bq"));
            let k = Self::mm(&h, &self.mat(&format!("{p}.attn.wk")));
            let v = self.affine(&h, &format!("{p}.attn.wv"), &format!("{p}.attn.bv"));
            let n = x.len();
            let mut att = vec![vec![0.0; cfg.d]; n];
            for m in 0..cfg.heads {
                let cols = m * dh..(m + 1) * dh;
                for i in 0..n {
                    let s: Vec<f64> = (0..n)
                        .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let a = Self::softmax(&s);
                    for c in cols.clone() {
                        att[i][c] = (0..n).map(|j| a[j] * v[j][c]).sum();
                    }
                }
            }
            let o = self.affine(&att, &format!("{p}.attn.wo"), &format!("{p}.attn.bo"));
            let x1: M = x.iter().zip(&o).map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect()).collect();
            let h2 = self.layer_norm(&x1, &format!("{p}.ln2.g"), &format!("{p}.ln2.b"));
            let f: M = self
                .affine(&h2, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))
                .into_iter()
                .map(|r| r.into_iter().map(gelu).collect())
                .collect();
            let f = self.affine(&f, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"));
            x = x1.iter().zip(&f).map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect()).collect();
        }
        x[0].clone()
    }

    fn query(&self, tokens: &[u32]) -> Vec<f64> {
        let mut ids = vec![CLS_ID];
        ids.extend_from_slice(tokens);
        self.transformer("query", &ids, &vec![0; ids.len()])
    }

    fn document(&self, t: &NodeText) -> Vec<f64> {
        let mut ids = vec![CLS_ID];
        let mut segs = vec![0];
        for (s, src) in [&t.title, &t.url, &t.anchor, &t.clicks].into_iter().enumerate() {
            ids.extend_from_slice(src);
            ids.push(SEP_ID);
            segs.extend(std::iter::repeat(s as u32).take(src.len() + 1));
        }
        self.transformer("doc", &ids, &segs)
    }

    fn featurize(&self, t: &NodeText) -> Vec<f64> {
        let d = self.p.config.d;
        let mut ids = Vec::new();
        let mut segs = Vec::new();
        for (s, src) in [&t.title, &t.url, &t.anchor, &t.clicks].into_iter().enumerate() {
            ids.extend_from_slice(src);
            segs.extend(std::iter::repeat(s as u32).take(src.len()));
        }
        let mut pooled = vec![0.0; d];
        if !ids.is_empty() {
            let e = self.embed(&ids, &segs);
            for j in 0..d {
                pooled[j] = e.iter().map(|r| r[j]).sum::<f64>() / ids.len() as f64;
            }
        }
        self.affine(&vec![pooled], "graph.feat.wh", "graph.feat.bh")[0]
            .iter()
            .map(|&v| gelu(v))
            .collect()
    }

    /// Attention weights and Gelu(Σ α W_t z) of one head.
    fn head(&self, prefix: &str, zc: &[f64], zn: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let (w, c, wd, wt) = (
            self.mat(&format!("{prefix}.w")),
            self.vec(&format!("{prefix}.c")),
            self.mat(&format!("{prefix}.wd")),
            self.mat(&format!("{prefix}.wt")),
        );
        let proj = |m: &M, z: &[f64]| Self::mm(&vec![z.to_vec()], m).remove(0);
        let slope = self.p.config.leaky_slope;
        let pc = proj(&w, zc);
        let dc = proj(&wd, zc);
        let dh = pc.len();
        let scores: Vec<f64> = zn
            .iter()
            .map(|z| {
                let pz = proj(&w, z);
                let e: f64 = (0..dh).map(|i| c[i] * pc[i] + c[dh + i] * pz[i]).sum();
                let e = if e > 0.0 { e } else { slope * e };
                let dz = proj(&wd, z);
                e + (0..dh).map(|i| dc[i] * dz[i]).sum::<f64>().tanh()
            })
            .collect();
        let alpha = Self::softmax(&scores);
        let out = (0..wt[0].len())
            .map(|o| gelu(zn.iter().zip(&alpha).map(|(z, a)| a * proj(&wt, z)[o]).sum()))
            .collect();
        (alpha, out)
    }

    fn convolve(&self, k: usize, r: &[f64], zn: &[Vec<f64>]) -> Vec<f64> {
        let cfg = self.p.config;
        let mut h = Vec::with_capacity(cfg.d);
        if zn.is_empty() {
            h.resize(cfg.d, 0.0);
        } else {
            for m in 0..cfg.heads {
                h.extend(self.head(&format!("graph.conv{k}.head{m}"), r, zn).1);
            }
        }
        h.extend_from_slice(r);
        self.affine(&vec![h], &format!("graph.conv{k}.wc"), &format!("graph.conv{k}.bc"))[0]
            .iter()
            .map(|&v| gelu(v))
            .collect()
    }

    fn slot(&self, sub: &NeighborSubgraph, texts: &[NodeText], layer: usize, idx: usize, node: u32) -> Vec<f64> {
        let r = self.featurize(&texts[node as usize]);
        if layer + 1 == sub.layers.len() {
            return r;
        }
        let kids: Vec<Vec<f64>> = (0..sub.n)
            .filter_map(|j| sub.layers[layer + 1][idx * sub.n + j].map(|c| (idx * sub.n + j, c)))
            .map(|(ci, c)| self.slot(sub, texts, layer + 1, ci, c))
            .collect();
        self.convolve(layer + 1, &r, &kids)
    }

    fn node(&self, center: &NodeText, sub: &NeighborSubgraph, texts: &[NodeText]) -> (Vec<f64>, Vec<f64>) {
        let cfg = self.p.config;
        let vb = self.document(center);
        let first: Vec<(usize, u32)> = sub.layers[0].iter().enumerate().filter_map(|(i, s)| s.map(|n| (i, n))).collect();
        if first.is_empty() {
            return (vb, vec![0.0; sub.layers[0].len()]);
        }
        let zn: Vec<Vec<f64>> = first.iter().map(|&(i, n)| self.slot(sub, texts, 0, i, n)).collect();
        let mut vg = vec![0.0; cfg.d];
        let mut att = vec![0.0; sub.layers[0].len()];
        for m in 0..cfg.heads {
            let (alpha, out) = self.head(&format!("graph.int.head{m}"), &vb, &zn);
            for j in 0..cfg.d {
                vg[j] += out[j] / cfg.heads as f64;
            }
            for (&(slot, _), a) in first.iter().zip(alpha) {
                att[slot] += a / cfg.heads as f64;
            }
        }
        (vb.iter().zip(&vg).map(|(b, g)| b + cfg.lambda * g).collect(), att)
    }
}

fn close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
        assert!(rel <= 1e-12 || (x - y).abs() < 1e-15, "{x} vs {y}");
    }
}

fn config(layers: usize, heads: usize, k: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 40,
        d: 8,
        layers,
        heads,
        k,
        p_max: 32,
        ffn: 12,
        lambda: 0.7,
        ..ModelConfig::default()
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> NodeText {
    let mut src = |max: usize| (0..rng.gen_range(0..=max)).map(|_| rng.gen_range(4..40)).collect::<Vec<u32>>();
    NodeText {
        title: src(4),
        url: src(2),
        anchor: src(2),
        clicks: src(4),
    }
}

fn random_subgraph(rng: &mut ChaCha8Rng, nodes: u32, n: usize, k: usize) -> NeighborSubgraph {
    let mut layers: Vec<Vec<Option<u32>>> = Vec::new();
    let mut parents = 1;
    for _ in 0..k {
        let prev = layers.last().cloned();
        let layer = (0..parents * n)
            .map(|i| {
                let alive = prev.as_ref().map_or(true, |p| p[i / n].is_some());
                (alive && rng.gen_bool(0.75)).then(|| rng.gen_range(1..nodes))
            })
            .collect();
        layers.push(layer);
        parents *= n;
    }
    NeighborSubgraph { center: 0, n, layers, rng_seed: 0 }
}

#[test]
fn library_matches_naive_forward() {
    for (seed, (layers, heads, k)) in [(1, 1, 2), (2, 2, 2), (1, 2, 3), (2, 1, 1)].into_iter().enumerate() {
        let params = ModelParams::init(config(layers, heads, k), 0.3, seed as u64).unwrap();
        let oracle = Oracle { p: &params };
        let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 + 100);
        let texts: Vec<NodeText> = (0..12).map(|_| random_text(&mut rng)).collect();
        for _ in 0..6 {
            let q: Vec<u32> = (0..rng.gen_range(0..6)).map(|_| rng.gen_range(4..40)).collect();
            close(&encode_query(&q, &params).unwrap(), &oracle.query(&q));
            let t = &texts[rng.gen_range(0..12)];
            close(&encode_document_text(t, &params).unwrap(), &oracle.document(t));
            close(&featurize_node(t, &params).unwrap(), &oracle.featurize(t));
            let sub = random_subgraph(&mut rng, 12, 2, k);
            let lib = encode_node(&texts[0], &sub, &texts, &params).unwrap();
            let (v, att) = oracle.node(&texts[0], &sub, &texts);
            close(&lib.v, &v);
            close(&lib.attention, &att);
        }
    }
}
