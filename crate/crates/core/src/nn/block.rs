use rand::Rng;

use super::attention::{AttentionConfig, Mask, MultiHeadAttention};
use super::graph::{Graph, Var};
use super::layers::{FeedForward, LayerNorm};
use super::params::{Init, ParamStore};
use crate::error::Result;

/// Pre-norm block computing `FFB(MHA(X, Z, Z))` with a residual around each
/// sub-layer:
///
/// ```text
/// h   = X + MHA(norm_q(X), norm_kv(Z))
/// out = h + FFB(norm_ff(h))
/// ```
///
/// Self-attention blocks have no separate context norm and reuse `norm_q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerBlock {
    pub norm_q: LayerNorm,
    pub norm_kv: Option<LayerNorm>,
    pub attn: MultiHeadAttention,
    pub norm_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl TransformerBlock {
    /// `cross` adds a dedicated norm for the key/value context.
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        cross: bool,
    ) -> Result<Self> {
        let d = cfg.model_dim;
        init.scope(name, |init| {
            Ok(Self {
                norm_q: LayerNorm::init(init, "norm_q", d),
                norm_kv: cross.then(|| LayerNorm::init(init, "norm_kv", d)),
                attn: MultiHeadAttention::init(init, "attn", cfg)?,
                norm_ff: LayerNorm::init(init, "norm_ff", d),
                ff: FeedForward::init(init, "ff", d, ff_hidden),
            })
        })
    }

    /// `context = None` runs self-attention over `x`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        context: Option<Var>,
        mask: &Mask,
    ) -> Result<BlockOutput> {
        let xn = self.norm_q.forward(g, store, x)?;
        let kv = match context {
            None => xn,
            Some(z) => match &self.norm_kv {
                Some(norm) => norm.forward(g, store, z)?,
                None => self.norm_q.forward(g, store, z)?,
            },
        };
        let att = self.attn.forward(g, store, xn, kv, mask)?;
        let h = g.add(x, att.out)?;
        let hn = self.norm_ff.forward(g, store, h)?;
        let f = self.ff.forward(g, store, hn)?;
        let f = g.dropout(f, self.attn.cfg.dropout);
        let out = g.add(h, f)?;
        Ok(BlockOutput {
            out,
            weights: att.weights,
        })
    }
}

/// `TransformerBlock` convenience for the `Transformer(X, Z)` call form.
pub fn transformer_block(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    z: Var,
    params: &TransformerBlock,
    mask: &Mask,
) -> Result<BlockOutput> {
    params.forward(g, store, x, Some(z), mask)
}
