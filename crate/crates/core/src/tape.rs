//! A small reverse-mode autodiff tape over dense row-major f64 matrices.
//!
//! Parameters are referenced by index into a borrowed tensor slice; embedding
//! lookups read table rows in place and produce sparse row gradients.

use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "shape/data mismatch");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in orow.iter_mut().zip(b.row(k)) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// self · bᵀ
    pub fn matmul_nt(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = dot(a, b.row(j));
            }
        }
        out
    }

    /// selfᵀ · b
    pub fn matmul_tn(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, b.cols);
        for r in 0..self.rows {
            let arow = self.row(r);
            let brow = b.row(r);
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &bv) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard normal CDF.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact Gelu: x·Φ(x).
pub fn gelu(x: f64) -> f64 {
    x * phi_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf(x) + x * pdf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    /// Position of this node in the tape, also its slot in `backward`'s output.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Gather { param: usize, ids: Vec<u32> },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Gelu(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    MeanRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

/// Gradient accumulator keyed by parameter index.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    dense: BTreeMap<usize, Mat>,
    rows: BTreeMap<usize, BTreeMap<u32, Vec<f64>>>,
}

impl Grads {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_dense(&mut self, param: usize, g: &Mat) {
        match self.dense.get_mut(&param) {
            Some(acc) => acc.add_assign(g),
            None => {
                self.dense.insert(param, g.clone());
            }
        }
    }

    pub fn add_row(&mut self, param: usize, row: u32, g: &[f64]) {
        let acc = self
            .rows
            .entry(param)
            .or_default()
            .entry(row)
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in acc.iter_mut().zip(g) {
            *a += b;
        }
    }

    /// Adds `other` in a fixed (index) order.
    pub fn merge(&mut self, other: &Grads) {
        for (&p, g) in &other.dense {
            self.add_dense(p, g);
        }
        for (&p, rows) in &other.rows {
            for (&r, g) in rows {
                self.add_row(p, r, g);
            }
        }
    }

    /// Dense gradient for one parameter of the given shape.
    pub fn to_dense(&self, param: usize, rows: usize, cols: usize) -> Mat {
        let mut out = self
            .dense
            .get(&param)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(rows, cols));
        if let Some(rs) = self.rows.get(&param) {
            for (&r, g) in rs {
                for (a, b) in out.row_mut(r as usize).iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }

    pub fn touches(&self, param: usize) -> bool {
        self.dense.contains_key(&param) || self.rows.contains_key(&param)
    }
}

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
    param_vars: HashMap<usize, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: usize) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params[id].clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn gather(&mut self, param: usize, ids: &[u32]) -> Var {
        let table = &self.params[param];
        let mut out = Mat::zeros(ids.len(), table.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id as usize));
        }
        self.push(out, Op::Gather { param, ids: ids.to_vec() })
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let out = Mat::from_vec(v.rows, v.cols, v.data.iter().map(|&a| f(a)).collect());
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "mul shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec(va.rows, va.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |a| a * c, Op::Scale(x, c))
    }

    /// Adds a 1×c row to every row of x.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        assert_eq!((vb.rows, vb.cols), (1, vx.cols), "bias shape mismatch");
        let mut out = vx.clone();
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddBias(x, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// a · bᵀ
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push(out, Op::Transpose(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(x, |a| if a > 0.0 { a } else { slope * a }, Op::LeakyRelu(x, slope))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let (g, b) = (&self.value(gamma).data, &self.value(beta).data);
        let n = vx.cols as f64;
        let mut out = Mat::zeros(vx.rows, vx.cols);
        let mut xhat = vec![0.0; vx.data.len()];
        let mut inv_std = vec![0.0; vx.rows];
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..vx.cols {
                let h = (row[c] - mean) * is;
                xhat[r * vx.cols + c] = h;
                out.data[r * vx.cols + c] = g[c] * h + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows, rows, "concat row mismatch");
                out.data[r * cols + off..r * cols + off + v.cols].copy_from_slice(v.row(r));
                off += v.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols, cols, "concat col mismatch");
            data.extend_from_slice(&v.data);
            rows += v.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let v = self.value(x);
        let mut out = Mat::zeros(v.rows, width);
        for r in 0..v.rows {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + width]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let v = self.value(x);
        let mut out = Mat::zeros(idx.len(), v.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        self.push(out, Op::SelectRows(x, idx.to_vec()))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mut out = Mat::zeros(1, v.cols);
        for r in 0..v.rows {
            for (o, a) in out.data.iter_mut().zip(v.row(r)) {
                *o += a;
            }
        }
        let n = v.rows as f64;
        for o in out.data.iter_mut() {
            *o /= n;
        }
        self.push(out, Op::MeanRows(x))
    }

    /// Backpropagates `seed` from `root`, accumulating parameter gradients
    /// into `grads`. Returns the gradient of every node (None if unreached).
    pub fn backward(&self, root: Var, seed: Mat, grads: &mut Grads) -> Vec<Option<Mat>> {
        let mut g: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        g[root.0] = Some(seed);

        fn acc(g: &mut [Option<Mat>], v: Var, delta: Mat) {
            match &mut g[v.0] {
                Some(m) => m.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(gout) = g[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads.add_dense(*p, &gout),
                Op::Gather { param, ids } => {
                    for (r, &id) in ids.iter().enumerate() {
                        grads.add_row(*param, id, gout.row(r));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, gout.clone());
                    acc(&mut g, *b, gout.clone());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = gout.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
                    let gb = gout.data.iter().zip(&va.data).map(|(x, y)| x * y).collect();
                    acc(&mut g, *a, Mat::from_vec(va.rows, va.cols, ga));
                    acc(&mut g, *b, Mat::from_vec(vb.rows, vb.cols, gb));
                }
                Op::Scale(x, c) => {
                    let d = gout.data.iter().map(|v| v * c).collect();
                    acc(&mut g, *x, Mat::from_vec(gout.rows, gout.cols, d));
                }
                Op::AddBias(x, b) => {
                    let mut gb = Mat::zeros(1, gout.cols);
                    for r in 0..gout.rows {
                        for (o, v) in gb.data.iter_mut().zip(gout.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut g, *b, gb);
                    acc(&mut g, *x, gout.clone());
                }
                Op::MatMul(a, b) => {
                    let ga = gout.matmul_nt(self.value(*b));
                    let gb = self.value(*a).matmul_tn(&gout);
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    let ga = gout.matmul(self.value(*b));
                    let gb = gout.matmul_tn(self.value(*a));
                    acc(&mut g, *a, ga);
                    acc(&mut g, *b, gb);
                }
                Op::Transpose(x) => acc(&mut g, *x, gout.transpose()),
                Op::Gelu(x) => {
                    let vx = self.value(*x);
                    let d = gout.data.iter().zip(&vx.data).map(|(go, &a)| go * gelu_grad(a)).collect();
                    acc(&mut g, *x, Mat::from_vec(vx.rows, vx.cols, d));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = gout.data.iter().zip(&y.data).map(|(go, t)| go * (1.0 - t * t)).collect();
                    acc(&mut g, *x, Mat::from_vec(y.rows, y.cols, d));
                }
                Op::LeakyRelu(x, slope) => {
                    let vx = self.value(*x);
                    let d = gout
                        .data
                        .iter()
                        .zip(&vx.data)
                        .map(|(go, &a)| if a > 0.0 { *go } else { go * slope })
                        .collect();
                    acc(&mut g, *x, Mat::from_vec(vx.rows, vx.cols, d));
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut d = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), gout.row(r));
                        let s = dot(yr, gr);
                        for (o, (yv, gv)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - s);
                        }
                    }
                    acc(&mut g, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gam = &self.value(*gamma).data;
                    let (rows, cols) = (gout.rows, gout.cols);
                    let n = cols as f64;
                    let mut gx = Mat::zeros(rows, cols);
                    let mut gg = Mat::zeros(1, cols);
                    let mut gbeta = Mat::zeros(1, cols);
                    for r in 0..rows {
                        let go = gout.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut sum_gh = 0.0;
                        let mut sum_ghx = 0.0;
                        for c in 0..cols {
                            let gh = go[c] * gam[c];
                            sum_gh += gh;
                            sum_ghx += gh * xh[c];
                            gg.data[c] += go[c] * xh[c];
                            gbeta.data[c] += go[c];
                        }
                        let row = gx.row_mut(r);
                        for c in 0..cols {
                            let gh = go[c] * gam[c];
                            row[c] = inv_std[r] / n * (n * gh - sum_gh - xh[c] * sum_ghx);
                        }
                    }
                    acc(&mut g, *x, gx);
                    acc(&mut g, *gamma, gg);
                    acc(&mut g, *beta, gbeta);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut d = Mat::zeros(gout.rows, w);
                        for r in 0..gout.rows {
                            d.row_mut(r).copy_from_slice(&gout.row(r)[off..off + w]);
                        }
                        acc(&mut g, p, d);
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let v = self.value(p);
                        let n = v.rows * v.cols;
                        acc(&mut g, p, Mat::from_vec(v.rows, v.cols, gout.data[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::SliceCols(x, start) => {
                    let vx = self.value(*x);
                    let mut d = Mat::zeros(vx.rows, vx.cols);
                    for r in 0..gout.rows {
                        d.row_mut(r)[*start..*start + gout.cols].copy_from_slice(gout.row(r));
                    }
                    acc(&mut g, *x, d);
                }
                Op::SelectRows(x, idx) => {
                    let vx = self.value(*x);
                    let mut d = Mat::zeros(vx.rows, vx.cols);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in d.row_mut(i).iter_mut().zip(gout.row(r)) {
                            *o += v;
                        }
                    }
                    acc(&mut g, *x, d);
                }
                Op::MeanRows(x) => {
                    let vx = self.value(*x);
                    let n = vx.rows as f64;
                    let mut d = Mat::zeros(vx.rows, vx.cols);
                    for r in 0..vx.rows {
                        for (o, v) in d.row_mut(r).iter_mut().zip(&gout.data) {
                            *o = v / n;
                        }
                    }
                    acc(&mut g, *x, d);
                }
            }
            g[idx] = Some(gout);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` (a scalar function of one input
    /// matrix) against the tape gradient.
    fn check(input: Mat, build: impl Fn(&mut Tape, Var) -> Var) {
        let params: Vec<Mat> = Vec::new();
        let scalar = |m: &Mat| -> f64 {
            let mut t = Tape::new(&params);
            let x = t.input(m.clone());
            let y = build(&mut t, x);
            // weighted sum so every output coordinate matters
            t.value(y).data.iter().enumerate().map(|(i, v)| v * (1.0 + i as f64 * 0.37)).sum()
        };
        let mut t = Tape::new(&params);
        let x = t.input(input.clone());
        let y = build(&mut t, x);
        let yv = t.value(y);
        let seed = Mat::from_vec(
            yv.rows,
            yv.cols,
            (0..yv.data.len()).map(|i| 1.0 + i as f64 * 0.37).collect(),
        );
        let node_grads = t.backward(y, seed, &mut Grads::new());
        let ga = node_grads[x.0].clone().unwrap();
        let eps = 1e-6;
        for i in 0..input.data.len() {
            let mut p = input.clone();
            p.data[i] += eps;
            let mut m = input.clone();
            m.data[i] -= eps;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * eps);
            assert!(
                (fd - ga.data[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "coord {i}: fd {fd} vs tape {}",
                ga.data[i]
            );
        }
    }

    fn sample(rows: usize, cols: usize) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| ((i * 7919 % 23) as f64 - 11.0) / 9.0).collect(),
        )
    }

    #[test]
    fn elementwise_ops() {
        check(sample(2, 3), |t, x| t.gelu(x));
        check(sample(2, 3), |t, x| t.tanh(x));
        check(sample(2, 3), |t, x| t.leaky_relu(x, 0.2));
        check(sample(2, 3), |t, x| t.mul(x, x));
        check(sample(2, 3), |t, x| t.scale(x, -1.5));
    }

    #[test]
    fn structural_ops() {
        check(sample(3, 4), |t, x| t.softmax_rows(x));
        check(sample(3, 4), |t, x| t.matmul_nt(x, x));
        check(sample(3, 4), |t, x| {
            let xt = t.transpose(x);
            t.matmul(x, xt)
        });
        check(sample(3, 4), |t, x| {
            let a = t.slice_cols(x, 1, 2);
            let b = t.select_rows(x, &[2, 0, 2]);
            let b = t.slice_cols(b, 0, 2);
            let c = t.concat_cols(&[a, x]);
            let c = t.concat_rows(&[c, c]);
            let m = t.mean_rows(b);
            let c = t.select_rows(c, &[1]);
            let c = t.slice_cols(c, 0, 2);
            t.add(c, m)
        });
        check(sample(3, 4), |t, x| {
            let b = t.select_rows(x, &[1]);
            t.add_bias(x, b)
        });
    }

    #[test]
    fn layer_norm_grad() {
        check(sample(3, 5), |t, x| {
            let g = t.input(Mat::row_vector(vec![1.0, 0.5, -0.3, 2.0, 1.1]));
            let b = t.input(Mat::row_vector(vec![0.1, 0.0, 0.2, -0.1, 0.0]));
            t.layer_norm(x, g, b, 1e-5)
        });
        check(Mat::row_vector(vec![0.3, -0.2, 0.9, 0.4]), |t, g| {
            let x = t.input(sample(2, 4));
            let b = t.input(Mat::row_vector(vec![0.0; 4]));
            t.layer_norm(x, g, b, 1e-5)
        });
    }

    #[test]
    fn gather_produces_row_grads() {
        let params = vec![sample(5, 2)];
        let mut t = Tape::new(&params);
        let e = t.gather(0, &[3, 1, 3]);
        let mut grads = Grads::new();
        t.backward(e, Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), &mut grads);
        let d = grads.to_dense(0, 5, 2);
        assert_eq!(d.row(3), &[6.0, 8.0]);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        // 2·Φ(2), Φ(2) = 0.977249868051821
        assert!((gelu(2.0) - 1.954_499_736_103_642).abs() < 1e-14);
    }
}
