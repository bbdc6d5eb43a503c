//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every value produced during a forward pass together
//! with the operation that produced it. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into every node that needs one.
//! Matrices are viewed as `rows × cols` over the last axis.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow {
        x: Var,
        bias: Var,
    },
    Gelu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather {
        x: Var,
        idx: Rc<[usize]>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    L2NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    Dropout {
        x: Var,
        keep: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
    dropout_rng: Option<ChaCha8Rng>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044_715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
    (y, dy)
}

/// `c = alpha * op(a) · op(b) + beta * c` for row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of `a`, `b` and `c`, checked by the
    // callers' shape validation; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Plain matrix product `a (m×k) · b (k×n)`.
pub fn matmul_plain(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, (k, 1), b, (n, 1), &mut c, 0.0);
    c
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (usize, usize) {
    let _ = rows;
    if transposed {
        (1, cols)
    } else {
        (cols, 1)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph whose [`Graph::dropout`] calls draw masks from `seed`.
    pub fn with_dropout_seed(seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient during [`Graph::backward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if self.param_vars.len() <= i {
            self.param_vars.resize(i + 1, None);
        }
        if let Some(v) = self.param_vars[i] {
            return v;
        }
        let v = self.input(store.get(id).clone());
        self.param_vars[i] = Some(v);
        v
    }

    /// Parameters touched by this graph, in first-use order of their ids.
    pub fn param_vars(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId::from_index(i), v)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ---- forward operations -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {m}x{k} · {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            strides(ra, ca, ta),
            self.value(b).data(),
            strides(rb, cb, tb),
            &mut out,
            0.0,
        );
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }, needs))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * s).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, s), needs)
    }

    /// Adds a `cols`-vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(Error::shape(
                "bias",
                format!("expected {c} values, got {}", self.value(bias).len()),
            ));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddRow { x, bias }, needs))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_parts(v).0).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Tanh(x), needs)
    }

    /// Row-wise softmax. Entries where `allowed` is false get weight exactly 0
    /// (they act as `-inf` logits); a row with no allowed entry is an error.
    pub fn softmax_rows(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(m) = allowed {
            if m.len() != r * c {
                return Err(Error::shape(
                    "mask",
                    format!("mask has {} entries for a {r}x{c} score matrix", m.len()),
                ));
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let ok = |j: usize| allowed.is_none_or(|m| m[i * c + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if !ok(j) {
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("softmax input {v} in row {i}")));
                }
                max = max.max(v);
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::FullyMaskedRow { row: i });
            }
            let dst = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if ok(j) {
                    let e = (v - max).exp();
                    dst[j] = e;
                    sum += e;
                }
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Softmax(x), needs))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::LogSoftmax(x), needs)
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias must have {c} values"),
            ));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// `out.flat[i] = x.flat[idx[i]]`, shaped as `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(Error::Range(format!(
                "gather index {bad} outside tensor of {} values",
                src.len()
            )));
        }
        let data = idx.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Gather { x, idx: idx.into() }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                return Err(Error::shape("concat", format!("feature dims {c} vs {pc}")));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let value = Tensor::new(vec![rows, c], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| Error::shape("concat", "nothing to concatenate"))?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::shape("concat", format!("row counts {r} vs {pr}")));
            }
            total += pc;
        }
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for &p in parts {
            let (_, pc) = self.dims(p);
            let src = self.value(p).data();
            for i in 0..r {
                data[i * total + off..i * total + off + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            off += pc;
        }
        let value = Tensor::new(vec![r, total], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Scales each row to unit L2 norm; a zero row is a contract error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut norms = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Contract(format!("row {i} is the zero vector")));
            }
            norms[i] = n;
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / n;
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::L2NormalizeRows { x, norms }, needs))
    }

    /// Inverted dropout; identity when `rate == 0` or the graph has no dropout seed.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        let n = self.nodes[x.0].value.len();
        let keep: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    1.0 / (1.0 - rate)
                }
            })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Dropout { x, keep }, needs)
    }

    // ---- derived operations (expressed through gather) ----------------------

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > r {
            return Err(Error::Range(format!(
                "rows {start}..{} of {r}",
                start + len
            )));
        }
        let idx = (start * c..(start + len) * c).collect();
        self.gather(x, idx, vec![len, c])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(Error::Range(format!(
                "cols {start}..{} of {c}",
                start + len
            )));
        }
        let idx = (0..r)
            .flat_map(|i| (start..start + len).map(move |j| i * c + j))
            .collect();
        self.gather(x, idx, vec![r, len])
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn select_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Range(format!("row {bad} of a {r}-row table")));
        }
        let idx = ids.iter().flat_map(|&i| i * c..(i + 1) * c).collect();
        self.gather(table, idx, vec![ids.len(), c])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let idx = (0..c)
            .flat_map(|j| (0..r).map(move |i| i * c + j))
            .collect();
        self.gather(x, idx, vec![c, r])
    }

    /// Picks `x[i, cols[i]]` for every row, returning a vector.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if cols.len() != r {
            return Err(Error::shape(
                "pick",
                format!("{} indices for {r} rows", cols.len()),
            ));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::Range(format!("column {bad} of {c}")));
        }
        let idx = cols.iter().enumerate().map(|(i, &j)| i * c + j).collect();
        self.gather(x, idx, vec![r])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(x).len();
        self.gather(x, (0..n).collect(), shape)
    }

    // ---- reverse pass -------------------------------------------------------

    /// Back-propagates from a single-element output.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(out)
            )));
        }
        self.backward_with(out, vec![1.0])
    }

    /// Back-propagates an arbitrary upstream gradient for `out`.
    pub fn backward_with(&mut self, out: Var, seed: Vec<f64>) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::shape("backward", "seed gradient length"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &dy, &mut grads);
            }
            grads[i] = Some(dy);
        }
        self.grads = grads;
        Ok(())
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ra, ca) = self.dims(a);
                let (rb, cb) = self.dims(b);
                let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
                let n = if tb { rb } else { cb };
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let (rsb, csb) = strides(rb, cb, tb);
                let (rsa, csa) = strides(ra, ca, ta);
                if let Some(ga) = self.acc(grads, a) {
                    if !ta {
                        // dA (m×k) += dC (m×n) · op(B)ᵀ (n×k)
                        gemm(m, n, k, dy, (n, 1), bv, (csb, rsb), ga, 1.0);
                    } else {
                        // dA (k×m) += op(B) (k×n) · dCᵀ (n×m)
                        gemm(k, n, m, bv, (rsb, csb), dy, (1, n), ga, 1.0);
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    if !tb {
                        // dB (k×n) += op(A)ᵀ (k×m) · dC (m×n)
                        gemm(k, m, n, av, (csa, rsa), dy, (n, 1), gb, 1.0);
                    } else {
                        // dB (n×k) += dCᵀ (n×m) · op(A) (m×k)
                        gemm(n, m, k, dy, (1, n), av, (rsa, csa), gb, 1.0);
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(g) = self.acc(grads, v) {
                        for (g, d) in g.iter_mut().zip(dy) {
                            *g += d;
                        }
                    }
                }
            }
            &Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if let Some(g) = self.acc(grads, a) {
                    for ((g, d), bv) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * bv;
                    }
                }
                if let Some(g) = self.acc(grads, b) {
                    for ((g, d), av) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * av;
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(g) = self.acc(grads, a) {
                    for (g, d) in g.iter_mut().zip(dy) {
                        *g += d * s;
                    }
                }
            }
            &Op::AddRow { x, bias } => {
                let c = self.dims(x).1;
                if let Some(g) = self.acc(grads, x) {
                    for (g, d) in g.iter_mut().zip(dy) {
                        *g += d;
                    }
                }
                if let Some(g) = self.acc(grads, bias) {
                    for row in dy.chunks(c) {
                        for (g, d) in g.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                }
            }
            &Op::Gelu(x) => {
                let xv = self.value(x).data();
                if let Some(g) = self.acc(grads, x) {
                    for ((g, d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        *g += d * gelu_parts(v).1;
                    }
                }
            }
            &Op::Tanh(x) => {
                if let Some(g) = self.acc(grads, x) {
                    for ((g, d), t) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * (1.0 - t * t);
                    }
                }
            }
            &Op::Softmax(x) => {
                let c = self.dims(x).1;
                if let Some(g) = self.acc(grads, x) {
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += y * (d - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                let c = self.dims(x).1;
                if let Some(g) = self.acc(grads, x) {
                    for ((gr, dr), yr) in g.chunks_mut(c).zip(dy.chunks(c)).zip(y.chunks(c)) {
                        let total: f64 = dr.iter().sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += d - y.exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = self.dims(*x).1;
                let gv = self.value(*gain).data();
                if let Some(g) = self.acc(grads, *x) {
                    let inv_c = 1.0 / c as f64;
                    for (r, ((gr, dr), hr)) in g
                        .chunks_mut(c)
                        .zip(dy.chunks(c))
                        .zip(xhat.chunks(c))
                        .enumerate()
                    {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = dr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        for j in 0..c {
                            let dh = dr[j] * gv[j];
                            gr[j] += rstd[r] * (dh - inv_c * sum_dh - hr[j] * inv_c * sum_dh_h);
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *gain) {
                    for (dr, hr) in dy.chunks(c).zip(xhat.chunks(c)) {
                        for ((g, d), h) in g.iter_mut().zip(dr).zip(hr) {
                            *g += d * h;
                        }
                    }
                }
                if let Some(g) = self.acc(grads, *bias) {
                    for dr in dy.chunks(c) {
                        for (g, d) in g.iter_mut().zip(dr) {
                            *g += d;
                        }
                    }
                }
            }
            Op::Gather { x, idx } => {
                if let Some(g) = self.acc(grads, *x) {
                    for (&k, d) in idx.iter().zip(dy) {
                        g[k] += d;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(g) = self.acc(grads, p) {
                        for (g, d) in g.iter_mut().zip(&dy[off..off + n]) {
                            *g += d;
                        }
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let (r, pc) = self.dims(p);
                    if let Some(g) = self.acc(grads, p) {
                        for i in 0..r {
                            for j in 0..pc {
                                g[i * pc + j] += dy[i * total + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            &Op::Sum(x) => {
                if let Some(g) = self.acc(grads, x) {
                    for g in g.iter_mut() {
                        *g += dy[0];
                    }
                }
            }
            Op::L2NormalizeRows { x, norms } => {
                let c = self.dims(*x).1;
                if let Some(g) = self.acc(grads, *x) {
                    for (r, ((gr, dr), yr)) in g
                        .chunks_mut(c)
                        .zip(dy.chunks(c))
                        .zip(y.chunks(c))
                        .enumerate()
                    {
                        let dot: f64 = dr.iter().zip(yr).map(|(d, y)| d * y).sum();
                        for ((g, d), y) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += (d - y * dot) / norms[r];
                        }
                    }
                }
            }
            Op::Dropout { x, keep } => {
                if let Some(g) = self.acc(grads, *x) {
                    for ((g, d), k) in g.iter_mut().zip(dy).zip(keep) {
                        *g += d * k;
                    }
                }
            }
        }
    }
}
