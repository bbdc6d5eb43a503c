//! Modalities combiner: symmetric co-attention, aggregation and first-token
//! pooling.

use rand::Rng;

use crate::encoders::key_mask;
use crate::error::{Error, Result};
use crate::nn::{
    AttentionConfig, Graph, Init, LayerNorm, Linear, ParamId, ParamStore, TransformerBlock, Var,
};

/// Attention weights of one co-attention layer, one matrix per head.
#[derive(Debug, Clone, Default)]
pub struct LayerCapture {
    /// Video queries over audio keys: `rows(z_v) × rows(z_a)`.
    pub video_audio: Vec<Var>,
    /// Audio queries over video keys: `rows(z_a) × rows(z_v)`.
    pub audio_video: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct CoAttention {
    pub z_v: Var,
    pub z_a: Var,
    pub layers: Vec<LayerCapture>,
}

/// Runs `L` co-attention layers. Each layer updates both branches from the
/// previous layer's state:
///
/// ```text
/// z_v' = Block_v(z_v, z_a)    z_a' = Block_a(z_a, z_v)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn co_attend(
    g: &mut Graph,
    store: &ParamStore,
    x_v: Var,
    x_a: Var,
    video_blocks: &[TransformerBlock],
    audio_blocks: &[TransformerBlock],
    video_valid: &[bool],
    audio_valid: &[bool],
) -> Result<CoAttention> {
    if video_blocks.is_empty() {
        return Err(Error::Config(
            "co-attention needs at least one layer".into(),
        ));
    }
    if video_blocks.len() != audio_blocks.len() {
        return Err(Error::Config(format!(
            "branch depths differ: {} video vs {} audio layers",
            video_blocks.len(),
            audio_blocks.len()
        )));
    }
    let (nv, na) = (g.shape(x_v)[0], g.shape(x_a)[0]);
    if video_valid.len() != nv || audio_valid.len() != na {
        return Err(Error::shape(
            "mask",
            "validity flags must cover every branch row",
        ));
    }
    let to_audio = key_mask(nv, audio_valid);
    let to_video = key_mask(na, video_valid);
    let (mut z_v, mut z_a) = (x_v, x_a);
    let mut layers = Vec::with_capacity(video_blocks.len());
    for (bv, ba) in video_blocks.iter().zip(audio_blocks) {
        let v = bv.forward(g, store, z_v, Some(z_a), &to_audio)?;
        let a = ba.forward(g, store, z_a, Some(z_v), &to_video)?;
        z_v = v.out;
        z_a = a.out;
        layers.push(LayerCapture {
            video_audio: v.weights,
            audio_video: a.weights,
        });
    }
    Ok(CoAttention { z_v, z_a, layers })
}

/// `z_va = LayerNorm([z_v; z_a])`; either branch may be absent.
pub fn aggregate(
    g: &mut Graph,
    store: &ParamStore,
    z_v: Option<Var>,
    z_a: Option<Var>,
    norm: &LayerNorm,
) -> Result<Var> {
    let parts: Vec<Var> = [z_v, z_a].into_iter().flatten().collect();
    let joined = match parts.as_slice() {
        [] => {
            return Err(Error::Contract(
                "aggregate needs at least one branch".into(),
            ))
        }
        [one] => *one,
        _ => {
            let (dv, da) = (g.shape(parts[0])[1], g.shape(parts[1])[1]);
            if dv != da {
                return Err(Error::shape(
                    "z_a",
                    format!("feature dim {da} differs from z_v's {dv}"),
                ));
            }
            g.concat_rows(&parts)?
        }
    };
    norm.forward(g, store, joined)
}

/// `c = tanh(W · first_row(z) + b)`.
pub fn pool_first(g: &mut Graph, store: &ParamStore, z: Var, proj: &Linear) -> Result<Var> {
    if g.shape(z)[0] == 0 {
        return Err(Error::Contract("cannot pool an empty branch".into()));
    }
    let first = g.slice_rows(z, 0, 1)?;
    let y = proj.forward(g, store, first)?;
    Ok(g.tanh(y))
}

/// Pooled `(c_v, c_a)`, each `1 × D`.
pub fn pool_modalities(
    g: &mut Graph,
    store: &ParamStore,
    z_v: Var,
    z_a: Var,
    pool_v: &Linear,
    pool_a: &Linear,
) -> Result<(Var, Var)> {
    Ok((
        pool_first(g, store, z_v, pool_v)?,
        pool_first(g, store, z_a, pool_a)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    /// Learned `[VCLS]` row prepended to `x_v`.
    pub vcls: ParamId,
    pub video_blocks: Vec<TransformerBlock>,
    pub audio_blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub pool_video: Linear,
    pub pool_audio: Linear,
}

impl Combiner {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config(
                "co-attention needs at least one layer".into(),
            ));
        }
        let d = cfg.model_dim;
        init.scope(name, |init| {
            let video_blocks = (0..layers)
                .map(|i| TransformerBlock::init(init, &format!("video{i}"), cfg, ff_hidden, true))
                .collect::<Result<_>>()?;
            let audio_blocks = (0..layers)
                .map(|i| TransformerBlock::init(init, &format!("audio{i}"), cfg, ff_hidden, true))
                .collect::<Result<_>>()?;
            Ok(Self {
                vcls: init.normal("vcls", &[1, d], 0.1),
                video_blocks,
                audio_blocks,
                norm: LayerNorm::init(init, "norm", d),
                pool_video: Linear::init(init, "pool_video", d, d, true),
                pool_audio: Linear::init(init, "pool_audio", d, d, true),
            })
        })
    }

    /// `[VCLS; x_v]`.
    pub fn prepend_vcls(&self, g: &mut Graph, store: &ParamStore, x_v: Var) -> Result<Var> {
        let vcls = g.param(store, self.vcls);
        g.concat_rows(&[vcls, x_v])
    }

    pub fn num_layers(&self) -> usize {
        self.video_blocks.len()
    }
}
