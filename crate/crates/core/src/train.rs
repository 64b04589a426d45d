//! Sigmoid cross-entropy training with similarity-weighted in-batch
//! negatives, Adam updates, and a finite-difference gradient check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{l2_norm, Forward, ModelParams, NodeText};
use crate::error::{Error, Result};
use crate::micg::{sample_subgraph, GraphBuildConfig, Micg, NeighborSubgraph, NodeId};
use crate::tape::{Grads, Mat, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Logit scale ψ.
    pub psi: f64,
    /// Logit shift τ.
    pub tau: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub neg_temperature: f64,
    pub negatives: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            psi: 5.0,
            tau: 2.5,
            learning_rate: 8e-5,
            batch_size: 32,
            epochs: 10,
            max_steps: None,
            neg_temperature: 1.0,
            negatives: 1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: Some(2),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.psi > 0.0) {
            return bad("psi must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.neg_temperature > 0.0) {
            return bad("neg_temperature must be positive");
        }
        if self.negatives == 0 {
            return bad("negatives must be positive");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        Ok(())
    }
}

/// Which graph-attention components are active. Zeroed components stay
/// frozen at zero during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// λ = 0: the text encoders alone.
    Base,
    /// c = 0 and W_d = 0: uniform mean aggregation.
    NoAttention,
    /// W_d = 0: plain GAT interaction attention.
    Gat,
    #[default]
    Full,
}

impl Ablation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Self::Base),
            "no-attention" => Ok(Self::NoAttention),
            "gat" => Ok(Self::Gat),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidConfig(format!("unknown ablation {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Base => "base",
            Self::NoAttention => "no-attention",
            Self::Gat => "gat",
            Self::Full => "full",
        }
    }

    fn zeroes(self, name: &str) -> bool {
        let graph_attn = name.starts_with("graph.") && name.contains(".head");
        match self {
            Self::Base | Self::Full => false,
            Self::Gat => graph_attn && name.ends_with(".wd"),
            Self::NoAttention => graph_attn && (name.ends_with(".wd") || name.ends_with(".c")),
        }
    }

    /// Applies the ablation to `params` and returns the ids of frozen tensors.
    pub fn apply(self, params: &mut ModelParams) -> Vec<usize> {
        if self == Self::Base {
            params.config.lambda = 0.0;
        }
        let frozen: Vec<usize> = (0..params.names().len())
            .filter(|&i| self.zeroes(&params.names()[i]))
            .collect();
        for &i in &frozen {
            params.tensors[i].data.iter_mut().for_each(|v| *v = 0.0);
        }
        frozen
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// −y·log σ(ψs−τ) − (1−y)·log(1−σ(ψs−τ)), in a stable softplus form.
pub fn loss(s: f64, y: bool, psi: f64, tau: f64) -> f64 {
    let z = psi * s - tau;
    if y {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// ∂loss/∂s = ψ·(σ(ψs−τ) − y).
pub fn loss_grad(s: f64, y: bool, psi: f64, tau: f64) -> f64 {
    psi * (sigmoid(psi * s - tau) - if y { 1.0 } else { 0.0 })
}

/// For each query row i, draws j ≠ i with probability ∝ exp(s_ij / T).
pub fn sample_in_batch_negatives<R: Rng>(sims: &[Vec<f64>], temperature: f64, rng: &mut R) -> Vec<usize> {
    (0..sims.len())
        .map(|i| {
            let row = &sims[i];
            let max = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &s)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = row
                .iter()
                .enumerate()
                .map(|(j, &s)| if j == i { 0.0 } else { ((s - max) / temperature).exp() })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut last = None;
            for (j, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                last = Some(j);
                if u < w {
                    return j;
                }
                u -= w;
            }
            last.expect("batch of at least two")
        })
        .collect()
}

fn cosine_with_grads(q: &[f64], d: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nq, nd) = (l2_norm(q), l2_norm(d));
    let qh: Vec<f64> = q.iter().map(|v| v / nq).collect();
    let dh: Vec<f64> = d.iter().map(|v| v / nd).collect();
    let s: f64 = qh.iter().zip(&dh).map(|(a, b)| a * b).sum();
    let gq = qh.iter().zip(&dh).map(|(a, b)| (b - s * a) / nq).collect();
    let gd = qh.iter().zip(&dh).map(|(a, b)| (a - s * b) / nd).collect();
    (s, gq, gd)
}

/// A fully specified batch: positives, subgraphs and negatives are fixed, so
/// the loss is a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct Batch {
    pub queries: Vec<Vec<u32>>,
    pub centers: Vec<NodeId>,
    pub subgraphs: Vec<NeighborSubgraph>,
    /// negatives[i] lists in-batch document indices scored with y = 0 against query i.
    pub negatives: Vec<Vec<usize>>,
}

/// Graph side inputs shared by every batch.
pub struct GraphInputs<'a> {
    pub graph: &'a Micg,
    pub texts: &'a [NodeText],
    pub sampling: GraphBuildConfig,
}

struct Encoded<'m> {
    tape: Tape<'m>,
    out: Var,
}

fn encode_side<'m>(
    f: &Forward<'m>,
    batch: &Batch,
    inputs: &GraphInputs,
) -> (Vec<Encoded<'m>>, Vec<Encoded<'m>>) {
    let queries = batch
        .queries
        .par_iter()
        .map(|q| {
            let mut tape = f.tape();
            let out = f.query(&mut tape, q);
            Encoded { tape, out }
        })
        .collect();
    let docs = batch
        .centers
        .par_iter()
        .zip(&batch.subgraphs)
        .map(|(&c, sub)| {
            let mut tape = f.tape();
            let out = f.node(&mut tape, &inputs.texts[c as usize], sub, inputs.texts).v;
            Encoded { tape, out }
        })
        .collect();
    (queries, docs)
}

fn row<'a>(e: &'a Encoded) -> &'a [f64] {
    &e.tape.value(e.out).data
}

/// Mean loss over all scored pairs and its gradient w.r.t. every parameter.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &Batch,
    inputs: &GraphInputs,
    cfg: &TrainConfig,
) -> Result<(f64, Grads)> {
    let f = Forward::new(params);
    let (qs, ds) = encode_side(&f, batch, inputs);
    let b = qs.len();
    let d = params.config.d;
    let mut gq = vec![vec![0.0; d]; b];
    let mut gd = vec![vec![0.0; d]; b];
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..b {
        let scored = std::iter::once((i, true)).chain(batch.negatives[i].iter().map(|&j| (j, false)));
        for (j, y) in scored {
            let (s, dq, dd) = cosine_with_grads(row(&qs[i]), row(&ds[j]));
            total += loss(s, y, cfg.psi, cfg.tau);
            let g = loss_grad(s, y, cfg.psi, cfg.tau);
            for k in 0..d {
                gq[i][k] += g * dq[k];
                gd[j][k] += g * dd[k];
            }
            pairs += 1;
        }
    }
    let scale = 1.0 / pairs as f64;
    let mean = total * scale;
    if !mean.is_finite() {
        return Err(Error::NumericalBlowup);
    }
    let seeds: Vec<(&Encoded, Vec<f64>)> = qs
        .iter()
        .zip(gq)
        .chain(ds.iter().zip(gd))
        .map(|(e, g)| (e, g.into_iter().map(|v| v * scale).collect()))
        .collect();
    let parts: Vec<Grads> = seeds
        .par_iter()
        .map(|(e, g)| {
            let mut grads = Grads::new();
            e.tape.backward(e.out, Mat::row_vector(g.clone()), &mut grads);
            grads
        })
        .collect();
    let mut grads = Grads::new();
    for p in &parts {
        grads.merge(p);
    }
    Ok((mean, grads))
}

/// Forward-only mean loss of a fixed batch.
pub fn batch_loss(params: &ModelParams, batch: &Batch, inputs: &GraphInputs, cfg: &TrainConfig) -> Result<f64> {
    let f = Forward::new(params);
    let (qs, ds) = encode_side(&f, batch, inputs);
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..qs.len() {
        let scored = std::iter::once((i, true)).chain(batch.negatives[i].iter().map(|&j| (j, false)));
        for (j, y) in scored {
            let (s, _, _) = cosine_with_grads(row(&qs[i]), row(&ds[j]));
            total += loss(s, y, cfg.psi, cfg.tau);
            pairs += 1;
        }
    }
    let mean = total / pairs as f64;
    if mean.is_finite() {
        Ok(mean)
    } else {
        Err(Error::NumericalBlowup)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// (tensor name, ‖g_a − g_fd‖ / max(1e−8, ‖g_a‖ + ‖g_fd‖))
    pub per_tensor: Vec<(String, f64)>,
    pub max_tensor_error: f64,
    /// Largest |g_a − g_fd| / max(1e−8, |g_a| + |g_fd|) over single coordinates.
    pub max_element_error: f64,
}

/// Compares analytic gradients of the batch loss with central finite
/// differences for every coordinate of every tensor.
pub fn grad_check(
    params: &ModelParams,
    batch: &Batch,
    inputs: &GraphInputs,
    cfg: &TrainConfig,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = batch_loss_and_grads(params, batch, inputs, cfg)?;
    let mut probe = params.clone();
    let mut per_tensor = Vec::new();
    let mut max_element_error: f64 = 0.0;
    for id in 0..params.tensors.len() {
        let shape = &params.tensors[id];
        let analytic = grads.to_dense(id, shape.rows, shape.cols);
        let mut diff2 = 0.0;
        let mut na2 = 0.0;
        let mut nf2 = 0.0;
        for k in 0..shape.data.len() {
            let orig = probe.tensors[id].data[k];
            probe.tensors[id].data[k] = orig + epsilon;
            let up = batch_loss(&probe, batch, inputs, cfg)?;
            probe.tensors[id].data[k] = orig - epsilon;
            let down = batch_loss(&probe, batch, inputs, cfg)?;
            probe.tensors[id].data[k] = orig;
            let fd = (up - down) / (2.0 * epsilon);
            let ga = analytic.data[k];
            diff2 += (ga - fd).powi(2);
            na2 += ga * ga;
            nf2 += fd * fd;
            let e = (ga - fd).abs() / (ga.abs() + fd.abs()).max(1e-8);
            max_element_error = max_element_error.max(e);
        }
        let err = diff2.sqrt() / (na2.sqrt() + nf2.sqrt()).max(1e-8);
        per_tensor.push((params.names()[id].clone(), err));
    }
    let max_tensor_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_tensor_error,
        max_element_error,
    })
}

/// Adam with per-tensor moment buffers; frozen tensors are never updated.
pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
    frozen: Vec<bool>,
}

impl Adam {
    pub fn new(params: &ModelParams, frozen: &[usize]) -> Self {
        let zeros: Vec<Mat> = params.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        let mut mask = vec![false; params.tensors.len()];
        for &i in frozen {
            mask[i] = true;
        }
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            frozen: mask,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for id in 0..params.tensors.len() {
            if self.frozen[id] {
                continue;
            }
            let p = &mut params.tensors[id];
            let g = grads.to_dense(id, p.rows, p.cols);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * gk;
                v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Training pairs and the graph they live on.
pub struct TrainData<'a> {
    pub inputs: GraphInputs<'a>,
    /// (query tokens, positive document node)
    pub pairs: Vec<(Vec<u32>, NodeId)>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Mean batch loss per optimizer step.
    pub loss_trace: Vec<f64>,
    /// Validation score per epoch, when a validator was supplied.
    pub validation: Vec<f64>,
    pub best_epoch: Option<usize>,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Similarity matrix of the batch's current query and document vectors.
fn batch_sims(f: &Forward, batch: &Batch, inputs: &GraphInputs) -> Vec<Vec<f64>> {
    let (qs, ds) = encode_side(f, batch, inputs);
    qs.iter()
        .map(|q| {
            ds.iter()
                .map(|d| cosine_with_grads(row(q), row(d)).0)
                .collect()
        })
        .collect()
}

/// Trains from `init`. Each step samples fresh subgraphs, picks negatives by
/// multinomial sampling over the batch's own document vectors, and applies
/// one Adam update. With a validator, the best-scoring epoch's parameters
/// are returned and training stops after `patience` epochs without gain.
pub fn fit(
    data: &TrainData,
    init: ModelParams,
    frozen: &[usize],
    cfg: &TrainConfig,
    validator: Option<&(dyn Fn(&ModelParams) -> Result<f64> + Sync)>,
) -> Result<FitResult> {
    cfg.validate()?;
    if data.pairs.len() < 2 {
        return Err(Error::InvalidConfig("need at least two training pairs".into()));
    }
    let mut params = init;
    let mut adam = Adam::new(&params, frozen);
    let mut order: Vec<usize> = (0..data.pairs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = Vec::new();
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step: u64 = 0;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX) as u64;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= max_steps {
                break 'epochs;
            }
            if chunk.len() < 2 {
                continue;
            }
            let seed = step_seed(cfg.seed, step);
            let mut batch = Batch {
                queries: chunk.iter().map(|&i| data.pairs[i].0.clone()).collect(),
                centers: chunk.iter().map(|&i| data.pairs[i].1).collect(),
                subgraphs: Vec::with_capacity(chunk.len()),
                negatives: Vec::new(),
            };
            for &c in &batch.centers {
                batch
                    .subgraphs
                    .push(sample_subgraph(data.inputs.graph, c, &data.inputs.sampling, seed)?);
            }
            let sims = {
                let f = Forward::new(&params);
                batch_sims(&f, &batch, &data.inputs)
            };
            let mut neg_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut negatives = vec![Vec::with_capacity(cfg.negatives); chunk.len()];
            for _ in 0..cfg.negatives {
                for (i, j) in sample_in_batch_negatives(&sims, cfg.neg_temperature, &mut neg_rng)
                    .into_iter()
                    .enumerate()
                {
                    negatives[i].push(j);
                }
            }
            batch.negatives = negatives;
            let (l, grads) = batch_loss_and_grads(&params, &batch, &data.inputs, cfg)?;
            adam.step(&mut params, &grads, cfg);
            loss_trace.push(l);
            step += 1;
        }
        if let Some(validate) = validator {
            let score = validate(&params)?;
            validation.push(score);
            if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                best = Some((score, epoch, params.clone()));
            } else if let (Some(p), Some((_, be, _))) = (cfg.patience, &best) {
                if epoch - be >= p {
                    break;
                }
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(FitResult {
        params,
        loss_trace,
        validation,
        best_epoch,
    })
}
