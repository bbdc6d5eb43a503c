//! Scaled dot-product and multi-head attention.

use rand::Rng;

use super::graph::{Graph, Var};
use super::layers::Linear;
use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl AttentionConfig {
    pub fn new(model_dim: usize, num_heads: usize) -> Result<Self> {
        let cfg = Self {
            model_dim,
            num_heads,
            dropout: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.num_heads == 0 {
            return Err(Error::Config(
                "model_dim and num_heads must be positive".into(),
            ));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0,1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    None,
    Causal,
    Padding,
}

/// Which (query, key) pairs may interact; `true` means visible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    kind: MaskKind,
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            kind: MaskKind::None,
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Lower-triangular: `(i, j)` visible iff `j <= i`.
    pub fn causal(n: usize) -> Self {
        let allowed = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        Self {
            kind: MaskKind::Causal,
            rows: n,
            cols: n,
            allowed,
        }
    }

    /// Every query sees exactly the keys flagged valid.
    pub fn padding(rows: usize, key_valid: &[bool]) -> Self {
        let allowed = (0..rows).flat_map(|_| key_valid.iter().copied()).collect();
        Self {
            kind: MaskKind::Padding,
            rows,
            cols: key_valid.len(),
            allowed,
        }
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// `softmax(Q Kᵀ / √d) V` with masked scores sent to `-inf`.
/// Returns the output rows and the attention weights.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: &Mask,
) -> Result<(Var, Var)> {
    let qs = g.shape(q).to_vec();
    let ks = g.shape(k).to_vec();
    let vs = g.shape(v).to_vec();
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::shape("Q/K/V", "attention operands must be matrices"));
    }
    if ks[1] != qs[1] {
        return Err(Error::shape(
            "K",
            format!("inner dim {} differs from Q's {}", ks[1], qs[1]),
        ));
    }
    if vs[0] != ks[0] {
        return Err(Error::shape(
            "V",
            format!("{} rows but K has {}", vs[0], ks[0]),
        ));
    }
    if mask.dims() != (qs[0], ks[0]) {
        return Err(Error::shape(
            "mask",
            format!("{:?} for a {}x{} score matrix", mask.dims(), qs[0], ks[0]),
        ));
    }
    let d = qs[1] as f64;
    let scores = g.matmul_t(q, k, false, true)?;
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let allowed = match mask.kind() {
        MaskKind::None => None,
        _ => Some(mask.as_slice()),
    };
    let weights = g.softmax_rows(scores, allowed)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

/// Per-head query/key/value projections (stored as column blocks of one
/// `D × D` matrix each) plus the output projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Var,
    /// One `n × m` weight matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn init<R: Rng>(init: &mut Init<'_, R>, name: &str, cfg: AttentionConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(init.scope(name, |init| Self {
            cfg,
            query: Linear::init(init, "query", d, d, true),
            key: Linear::init(init, "key", d, d, true),
            value: Linear::init(init, "value", d, d, true),
            output: Linear::init(init, "output", d, d, true),
        }))
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        z: Var,
        mask: &Mask,
    ) -> Result<AttentionOutput> {
        multi_head_attention(g, store, x, z, self, mask)
    }
}

/// Queries from `x`, keys and values from `z`; heads are concatenated and
/// passed through the output projection.
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    z: Var,
    params: &MultiHeadAttention,
    mask: &Mask,
) -> Result<AttentionOutput> {
    let cfg = params.cfg;
    cfg.validate()?;
    for (name, v) in [("X", x), ("Z", z)] {
        let s = g.shape(v);
        if s.len() != 2 || s[1] != cfg.model_dim {
            return Err(Error::shape(
                name,
                format!("expected [_, {}], got {:?}", cfg.model_dim, s),
            ));
        }
    }
    let q = params.query.forward(g, store, x)?;
    let k = params.key.forward(g, store, z)?;
    let v = params.value.forward(g, store, z)?;
    let dh = cfg.head_dim();
    let (heads, weights) = if cfg.num_heads == 1 {
        let (o, w) = scaled_dot_attention(g, q, k, v, mask)?;
        (vec![o], vec![w])
    } else {
        let mut heads = Vec::with_capacity(cfg.num_heads);
        let mut weights = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let (o, w) = scaled_dot_attention(g, qh, kh, vh, mask)?;
            heads.push(o);
            weights.push(w);
        }
        (heads, weights)
    };
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        g.concat_cols(&heads)?
    };
    let out = params.output.forward(g, store, merged)?;
    let out = g.dropout(out, cfg.dropout);
    Ok(AttentionOutput { out, weights })
}
