use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Shared hidden size of the transformers and the graph layers.
    pub d: usize,
    /// Transformer layers per stack.
    pub layers: usize,
    /// Attention heads, used by both transformers and graph attention.
    pub heads: usize,
    /// Neighbor subgraph depth.
    pub k: usize,
    pub s_max: usize,
    pub p_max: usize,
    pub ffn: usize,
    /// Graph mixing weight.
    pub lambda: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            d: 64,
            layers: 2,
            heads: 2,
            k: 2,
            s_max: 4,
            p_max: 128,
            ffn: 128,
            lambda: 1.0,
            leaky_slope: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.layers == 0 || self.k == 0 || self.ffn == 0 {
            return bad("layers, k and ffn must be positive".into());
        }
        if self.vocab_size < 5 {
            return bad("vocab_size must be >= 5".into());
        }
        if self.s_max < 4 {
            return bad("s_max must be >= 4 (title, url, anchor, clicks)".into());
        }
        if self.p_max < 6 {
            return bad("p_max must be >= 6 to hold the document framing".into());
        }
        if !self.lambda.is_finite() || !self.leaky_slope.is_finite() {
            return bad("lambda and leaky_slope must be finite".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// One attention head: interaction projection `w`, attention vector `c`
/// (stored as a 2·d_h column), dot-factor projection `wd`, value transform `wt`.
#[derive(Debug, Clone, Copy)]
pub struct HeadIds {
    pub w: usize,
    pub c: usize,
    pub wd: usize,
    pub wt: usize,
}

#[derive(Debug, Clone)]
pub struct ConvIds {
    pub heads: Vec<HeadIds>,
    pub wc: usize,
    pub bc: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub token: usize,
    pub segment: usize,
    pub position: usize,
    pub query: Vec<LayerIds>,
    pub doc: Vec<LayerIds>,
    pub wh: usize,
    pub bh: usize,
    /// Convolve layer k (1-based) is at index k-1.
    pub conv: Vec<ConvIds>,
    pub integration: Vec<HeadIds>,
}

enum Init {
    /// N(0, init_std²); used for the embedding tables.
    Normal,
    /// N(0, 1/fan_in) with fan_in the input width.
    Fan,
    Zeros,
    Ones,
}

fn specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, dh, f) = (cfg.d, cfg.head_dim(), cfg.ffn);
    let mut out = vec![
        ("emb.token".to_string(), vec![cfg.vocab_size, d], Init::Normal),
        ("emb.segment".to_string(), vec![cfg.s_max, d], Init::Normal),
        ("emb.position".to_string(), vec![cfg.p_max, d], Init::Normal),
        ("graph.feat.wh".to_string(), vec![d, d], Init::Fan),
        ("graph.feat.bh".to_string(), vec![d], Init::Zeros),
    ];
    for stack in ["query", "doc"] {
        for l in 0..cfg.layers {
            let p = format!("{stack}.{l}");
            out.extend([
                (format!("{p}.ln1.g"), vec![d], Init::Ones),
                (format!("{p}.ln1.b"), vec![d], Init::Zeros),
                (format!("{p}.attn.wq"), vec![d, d], Init::Fan),
                (format!("{p}.attn.bq"), vec![d], Init::Zeros),
                (format!("{p}.attn.wk"), vec![d, d], Init::Fan),
                (format!("{p}.attn.wv"), vec![d, d], Init::Fan),
                (format!("{p}.attn.bv"), vec![d], Init::Zeros),
                (format!("{p}.attn.wo"), vec![d, d], Init::Fan),
                (format!("{p}.attn.bo"), vec![d], Init::Zeros),
                (format!("{p}.ln2.g"), vec![d], Init::Ones),
                (format!("{p}.ln2.b"), vec![d], Init::Zeros),
                (format!("{p}.ffn.w1"), vec![d, f], Init::Fan),
                (format!("{p}.ffn.b1"), vec![f], Init::Zeros),
                (format!("{p}.ffn.w2"), vec![f, d], Init::Fan),
                (format!("{p}.ffn.b2"), vec![d], Init::Zeros),
            ]);
        }
    }
    for k in 1..cfg.k {
        let p = format!("graph.conv{k}");
        for m in 0..cfg.heads {
            out.extend([
                (format!("{p}.head{m}.w"), vec![d, dh], Init::Fan),
                (format!("{p}.head{m}.c"), vec![2 * dh], Init::Fan),
                (format!("{p}.head{m}.wd"), vec![d, dh], Init::Fan),
                (format!("{p}.head{m}.wt"), vec![d, dh], Init::Fan),
            ]);
        }
        out.push((format!("{p}.wc"), vec![2 * d, d], Init::Fan));
        out.push((format!("{p}.bc"), vec![d], Init::Zeros));
    }
    for m in 0..cfg.heads {
        let p = format!("graph.int.head{m}");
        out.extend([
            (format!("{p}.w"), vec![d, d], Init::Fan),
            (format!("{p}.c"), vec![2 * d], Init::Fan),
            (format!("{p}.wd"), vec![d, d], Init::Fan),
            (format!("{p}.wt"), vec![d, d], Init::Fan),
        ]);
    }
    out
}

/// Matrix view of a tensor shape: vectors of length n are stored as 1×n,
/// except attention vectors `*.c` which are n×1 columns.
fn mat_dims(name: &str, shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] if name.ends_with(".c") => (*n, 1),
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!("tensors are rank 1 or 2"),
    }
}

/// All trainable tensors, held in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    pub tensors: Vec<Mat>,
}

impl ModelParams {
    /// Embedding tables draw from N(0, init_std²), weight matrices from
    /// N(0, 1/fan_in); biases start at zero and LayerNorm gains at one.
    pub fn init(config: ModelConfig, init_std: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, init_std)
            .map_err(|_| Error::InvalidConfig(format!("bad init_std {init_std}")))?;
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut sorted: BTreeMap<String, (Vec<usize>, Init)> = BTreeMap::new();
        for (name, shape, init) in specs(&config) {
            sorted.insert(name, (shape, init));
        }
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut tensors = Vec::new();
        for (name, (shape, init)) in sorted {
            let (r, c) = mat_dims(&name, &shape);
            let data = match init {
                Init::Normal => (0..r * c).map(|_| normal.sample(&mut rng)).collect(),
                Init::Fan => {
                    let std = 1.0 / (shape[0] as f64).sqrt();
                    (0..r * c).map(|_| std * unit.sample(&mut rng)).collect()
                }
                Init::Zeros => vec![0.0; r * c],
                Init::Ones => vec![1.0; r * c],
            };
            tensors.push(Mat::from_vec(r, c, data));
            names.push(name);
            shapes.push(shape);
        }
        Ok(Self {
            config,
            names,
            shapes,
            tensors,
        })
    }

    /// Rebuilds from named tensors; names and shapes must match the config.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Vec<usize>, Vec<f64>)>) -> Result<Self> {
        config.validate()?;
        let expected: BTreeMap<String, Vec<usize>> =
            specs(&config).into_iter().map(|(n, s, _)| (n, s)).collect();
        let mut given: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for (name, shape, data) in named {
            if given.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::BadFormat(format!("duplicate tensor {name}")));
            }
        }
        if given.len() != expected.len() || !given.keys().eq(expected.keys()) {
            return Err(Error::BadFormat("tensor set does not match model config".into()));
        }
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut tensors = Vec::new();
        for ((name, (shape, data)), exp) in given.into_iter().zip(expected.values()) {
            if &shape != exp || shape.iter().product::<usize>() != data.len() {
                return Err(Error::BadFormat(format!("tensor {name} has wrong shape")));
            }
            let (r, c) = mat_dims(&name, &shape);
            tensors.push(Mat::from_vec(r, c, data));
            names.push(name);
            shapes.push(shape);
        }
        Ok(Self {
            config,
            names,
            shapes,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, id: usize) -> &[usize] {
        &self.shapes[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.tensors[self.id(name).unwrap_or_else(|| panic!("no tensor {name}"))]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        let id = self.id(name).unwrap_or_else(|| panic!("no tensor {name}"));
        &mut self.tensors[id]
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn layout(&self) -> Layout {
        let id = |n: String| self.id(&n).unwrap_or_else(|| panic!("no tensor {n}"));
        let stack = |s: &str| -> Vec<LayerIds> {
            (0..self.config.layers)
                .map(|l| {
                    let p = format!("{s}.{l}");
                    LayerIds {
                        ln1_g: id(format!("{p}.ln1.g")),
                        ln1_b: id(format!("{p}.ln1.b")),
                        wq: id(format!("{p}.attn.wq")),
                        bq: id(format!("{p}.attn.bq")),
                        wk: id(format!("{p}.attn.wk")),
                        wv: id(format!("{p}.attn.wv")),
                        bv: id(format!("{p}.attn.bv")),
                        wo: id(format!("{p}.attn.wo")),
                        bo: id(format!("{p}.attn.bo")),
                        ln2_g: id(format!("{p}.ln2.g")),
                        ln2_b: id(format!("{p}.ln2.b")),
                        w1: id(format!("{p}.ffn.w1")),
                        b1: id(format!("{p}.ffn.b1")),
                        w2: id(format!("{p}.ffn.w2")),
                        b2: id(format!("{p}.ffn.b2")),
                    }
                })
                .collect()
        };
        let head = |p: String| HeadIds {
            w: id(format!("{p}.w")),
            c: id(format!("{p}.c")),
            wd: id(format!("{p}.wd")),
            wt: id(format!("{p}.wt")),
        };
        Layout {
            token: id("emb.token".into()),
            segment: id("emb.segment".into()),
            position: id("emb.position".into()),
            query: stack("query"),
            doc: stack("doc"),
            wh: id("graph.feat.wh".into()),
            bh: id("graph.feat.bh".into()),
            conv: (1..self.config.k)
                .map(|k| ConvIds {
                    heads: (0..self.config.heads)
                        .map(|m| head(format!("graph.conv{k}.head{m}")))
                        .collect(),
                    wc: id(format!("graph.conv{k}.wc")),
                    bc: id(format!("graph.conv{k}.bc")),
                })
                .collect(),
            integration: (0..self.config.heads)
                .map(|m| head(format!("graph.int.head{m}")))
                .collect(),
        }
    }

    /// Name → index map, handy for tests that address tensors by name.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }
}
