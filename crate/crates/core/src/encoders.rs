//! Video and audio-caption encoders producing `x_v` and `x_a`.
//!
//! Both are small pre-norm self-attention stacks. The video encoder runs
//! per frame over patch tokens and then adds a learned per-frame temporal
//! embedding to every token of that frame.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    AttentionConfig, Graph, Init, LayerNorm, Linear, Mask, ParamId, ParamStore, Tensor,
    TransformerBlock, Var,
};
use crate::vocab::CLS;

/// `T` RGB frames of `h × w`, stored as row-major bytes, frame-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

pub const CHANNELS: usize = 3;

impl VideoClip {
    pub fn new(frames: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Config("video clip needs T, h, w >= 1".into()));
        }
        let expected = frames * height * width * CHANNELS;
        if pixels.len() != expected {
            return Err(Error::shape(
                "frames",
                format!(
                    "expected {expected} bytes for {frames}x{height}x{width}x3, got {}",
                    pixels.len()
                ),
            ));
        }
        Ok(Self {
            frames,
            height,
            width,
            pixels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width * CHANNELS;
        &self.pixels[t * n..(t + 1) * n]
    }

    /// `[T, h, w, 3]` tensor with pixels scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Tensor::new(vec![self.frames, self.height, self.width, CHANNELS], data)
            .expect("validated at construction")
    }
}

/// Padded audio-caption token ids with their validity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioCaption {
    ids: Vec<usize>,
    valid: Vec<bool>,
}

impl AudioCaption {
    pub fn new(ids: Vec<usize>, valid: Vec<bool>) -> Result<Self> {
        if ids.is_empty() || ids.len() != valid.len() {
            return Err(Error::shape(
                "audio caption",
                "ids and mask must be equally long and non-empty",
            ));
        }
        if !valid[0] {
            return Err(Error::Contract(
                "audio caption must start with a real token".into(),
            ));
        }
        if let Some(first_pad) = valid.iter().position(|v| !v) {
            if valid[first_pad..].iter().any(|&v| v) {
                return Err(Error::Contract(
                    "padding may only appear as a suffix".into(),
                ));
            }
        }
        Ok(Self { ids, valid })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Replaces token ids at padded positions; the mask is untouched.
    pub fn with_pad_content(&self, filler: usize) -> Self {
        let ids = self
            .ids
            .iter()
            .zip(&self.valid)
            .map(|(&id, &v)| if v { id } else { filler })
            .collect();
        Self {
            ids,
            valid: self.valid.clone(),
        }
    }
}

/// Affine projection of flattened `p × p × 3` patches plus a learned
/// spatial position embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub position: ParamId,
    pub patch: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchEmbed {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        height: usize,
        width: usize,
        patch: usize,
        dim: usize,
    ) -> Result<Self> {
        check_patch_dims(height, width, patch)?;
        let count = (height / patch) * (width / patch);
        Ok(init.scope(name, |init| Self {
            proj: Linear::init(init, "proj", patch * patch * CHANNELS, dim, true),
            position: init.normal("position", &[count, dim], 0.1),
            patch,
            height,
            width,
        }))
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn patches_per_frame(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }
}

fn check_patch_dims(height: usize, width: usize, patch: usize) -> Result<()> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::Config(format!(
            "frame {height}x{width} is not divisible into {patch}x{patch} patches"
        )));
    }
    Ok(())
}

/// Flat indices that lay out frame `t` of a `[T, h, w, 3]` tensor as
/// `P × (p·p·3)` patch rows, patches in row-major grid order.
pub fn patch_indices(t: usize, height: usize, width: usize, patch: usize) -> Vec<usize> {
    let base = t * height * width * CHANNELS;
    let mut idx = Vec::with_capacity(height * width * CHANNELS);
    for pr in 0..height / patch {
        for pc in 0..width / patch {
            for dy in 0..patch {
                for dx in 0..patch {
                    let y = pr * patch + dy;
                    let x = pc * patch + dx;
                    for ch in 0..CHANNELS {
                        idx.push(base + (y * width + x) * CHANNELS + ch);
                    }
                }
            }
        }
    }
    idx
}

/// Embeds frame `t` of `frames` (`[T, h, w, 3]`, values in `[0, 1]`) as `P × D` tokens.
pub fn patch_embed(
    g: &mut Graph,
    store: &ParamStore,
    frames: Var,
    t: usize,
    params: &PatchEmbed,
) -> Result<Var> {
    let shape = g.shape(frames).to_vec();
    if shape.len() != 4 || shape[3] != CHANNELS {
        return Err(Error::shape(
            "frames",
            format!("expected [T, h, w, 3], got {shape:?}"),
        ));
    }
    let (h, w) = (shape[1], shape[2]);
    check_patch_dims(h, w, params.patch)?;
    if (h, w) != (params.height, params.width) {
        return Err(Error::Config(format!(
            "frame size {h}x{w} differs from the configured {}x{}",
            params.height, params.width
        )));
    }
    if t >= shape[0] {
        return Err(Error::Range(format!("frame {t} of {}", shape[0])));
    }
    let p = params.patch;
    let count = params.patches_per_frame();
    let flat = g.gather(
        frames,
        patch_indices(t, h, w, p),
        vec![count, p * p * CHANNELS],
    )?;
    let tokens = params.proj.forward(g, store, flat)?;
    let pos = g.param(store, params.position);
    g.add(tokens, pos)
}

/// Self-attention stack with a final layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
}

impl EncoderStack {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        init.scope(name, |init| {
            let blocks = (0..layers)
                .map(|i| TransformerBlock::init(init, &format!("layer{i}"), cfg, ff_hidden, false))
                .collect::<Result<_>>()?;
            Ok(Self {
                blocks,
                final_norm: LayerNorm::init(init, "final_norm", cfg.model_dim),
            })
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &Mask) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, store, h, None, mask)?.out;
        }
        self.final_norm.forward(g, store, h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEncoder {
    pub patch: PatchEmbed,
    pub stack: EncoderStack,
    /// `max_T × D` temporal embeddings, one row per frame index.
    pub temporal: ParamId,
    pub max_frames: usize,
}

/// `x_v` as `(T·P) × D` rows ordered by (frame, patch).
#[derive(Debug, Clone, Copy)]
pub struct VideoFeatures {
    pub tokens: Var,
    pub frames: usize,
    pub patches_per_frame: usize,
    pub grid: (usize, usize),
}

impl VideoEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        layers: usize,
        (height, width, patch): (usize, usize, usize),
        max_frames: usize,
    ) -> Result<Self> {
        init.scope(name, |init| {
            Ok(Self {
                patch: PatchEmbed::init(init, "patch", height, width, patch, cfg.model_dim)?,
                stack: EncoderStack::init(init, "encoder", cfg, ff_hidden, layers)?,
                temporal: init.normal("temporal", &[max_frames, cfg.model_dim], 0.1),
                max_frames,
            })
        })
    }

    /// Per-frame encoding without the temporal embedding.
    pub fn encode_frame(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Var,
        t: usize,
    ) -> Result<Var> {
        let tokens = patch_embed(g, store, frames, t, &self.patch)?;
        let p = self.patch.patches_per_frame();
        self.stack.forward(g, store, tokens, &Mask::none(p, p))
    }
}

/// `x_v[t, p] = Encoder(patch_embed(I_t))[p] + Ω_t`, flattened frame-major.
pub fn encode_video(
    g: &mut Graph,
    store: &ParamStore,
    frames: Var,
    enc: &VideoEncoder,
) -> Result<VideoFeatures> {
    let t_count = g.shape(frames).first().copied().unwrap_or(0);
    if t_count == 0 {
        return Err(Error::Contract("clip has no frames".into()));
    }
    if t_count > enc.max_frames {
        return Err(Error::Capacity(format!(
            "{t_count} frames exceed the {} temporal embeddings",
            enc.max_frames
        )));
    }
    let omega = g.param(store, enc.temporal);
    let mut per_frame = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let h = enc.encode_frame(g, store, frames, t)?;
        let omega_t = g.slice_rows(omega, t, 1)?;
        per_frame.push(g.add_row(h, omega_t)?);
    }
    let tokens = if per_frame.len() == 1 {
        per_frame[0]
    } else {
        g.concat_rows(&per_frame)?
    };
    Ok(VideoFeatures {
        tokens,
        frames: t_count,
        patches_per_frame: enc.patch.patches_per_frame(),
        grid: enc.patch.grid(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioEncoder {
    pub token_embedding: ParamId,
    pub position: ParamId,
    pub stack: EncoderStack,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl AudioEncoder {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        layers: usize,
        vocab_size: usize,
        max_len: usize,
    ) -> Result<Self> {
        init.scope(name, |init| {
            Ok(Self {
                token_embedding: init.normal("token_embedding", &[vocab_size, cfg.model_dim], 0.1),
                position: init.normal("position", &[max_len, cfg.model_dim], 0.1),
                stack: EncoderStack::init(init, "encoder", cfg, ff_hidden, layers)?,
                vocab_size,
                max_len,
            })
        })
    }

    /// Token-embedding rows for `ids` (the saliency probe point).
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Tokenization(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        let table = g.param(store, self.token_embedding);
        g.select_rows(table, ids)
    }

    /// Adds positions to already-embedded tokens and runs the masked stack.
    pub fn encode_embedded(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        embedded: Var,
        valid: &[bool],
    ) -> Result<Var> {
        let s = g.shape(embedded)[0];
        if s > self.max_len {
            return Err(Error::Capacity(format!(
                "audio caption of {s} tokens exceeds the {} positions",
                self.max_len
            )));
        }
        let pos = g.param(store, self.position);
        let pos = g.slice_rows(pos, 0, s)?;
        let x = g.add(embedded, pos)?;
        self.stack.forward(g, store, x, &key_mask(s, valid))
    }
}

/// `x_a = g(A)`: embedding, positions and the padding-masked encoder stack.
pub fn encode_audio_caption(
    g: &mut Graph,
    store: &ParamStore,
    caption: &AudioCaption,
    enc: &AudioEncoder,
) -> Result<Var> {
    if caption.ids()[0] != CLS {
        log::debug!("audio caption does not start with [CLS]; pooling uses its first token anyway");
    }
    let emb = enc.embed(g, store, caption.ids())?;
    enc.encode_embedded(g, store, emb, caption.valid())
}

/// Key-padding mask, or no mask when every key is valid.
pub fn key_mask(rows: usize, key_valid: &[bool]) -> Mask {
    if key_valid.iter().all(|&v| v) {
        Mask::none(rows, key_valid.len())
    } else {
        Mask::padding(rows, key_valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn video_encoder(h: usize, w: usize, p: usize, max_t: usize) -> (ParamStore, VideoEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut init = Init::new(&mut store, &mut rng);
        let cfg = AttentionConfig::new(16, 2).unwrap();
        let enc = VideoEncoder::init(&mut init, "video", cfg, 32, 1, (h, w, p), max_t).unwrap();
        (store, enc)
    }

    fn clip(t: usize, h: usize, w: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..t * h * w * 3).map(|_| rng.gen()).collect();
        VideoClip::new(t, h, w, px).unwrap()
    }

    #[test]
    fn patch_counts() {
        let (_, enc) = video_encoder(8, 8, 8, 2);
        assert_eq!(enc.patch.patches_per_frame(), 1);
        let (_, enc) = video_encoder(32, 32, 8, 2);
        assert_eq!(enc.patch.patches_per_frame(), 16);
    }

    #[test]
    fn indivisible_frame_is_config_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut store, &mut rng);
        let r = PatchEmbed::init(&mut init, "p", 30, 32, 8, 16);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn zero_frame_with_zero_bias_gives_position_embedding() {
        let (store, enc) = video_encoder(16, 16, 8, 1);
        let mut g = Graph::new();
        let frames = g.constant(Tensor::zeros(&[1, 16, 16, 3]));
        let tokens = patch_embed(&mut g, &store, frames, 0, &enc.patch).unwrap();
        assert_eq!(g.value(tokens).data(), store.get(enc.patch.position).data());
    }

    #[test]
    fn single_frame_adds_first_temporal_row_uniformly() {
        let (store, enc) = video_encoder(16, 16, 8, 3);
        let c = clip(1, 16, 16, 1);
        let mut g = Graph::new();
        let frames = g.constant(c.to_tensor());
        let feats = encode_video(&mut g, &store, frames, &enc).unwrap();
        assert_eq!(g.shape(feats.tokens), &[4, 16]);
        let plain = enc.encode_frame(&mut g, &store, frames, 0).unwrap();
        let omega = store.get(enc.temporal);
        let (a, b) = (g.value(feats.tokens), g.value(plain));
        for r in 0..4 {
            for j in 0..16 {
                assert_eq!(a.at(r, j), b.at(r, j) + omega.at(0, j));
            }
        }
    }

    #[test]
    fn too_many_frames_is_capacity_error() {
        let (store, enc) = video_encoder(8, 8, 8, 2);
        let mut g = Graph::new();
        let frames = g.constant(clip(3, 8, 8, 0).to_tensor());
        assert!(matches!(
            encode_video(&mut g, &store, frames, &enc),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn swapping_frames_changes_features() {
        let (store, enc) = video_encoder(8, 8, 4, 2);
        let a = clip(1, 8, 8, 1);
        let b = clip(1, 8, 8, 2);
        let ab = VideoClip::new(2, 8, 8, [a.pixels(), b.pixels()].concat()).unwrap();
        let ba = VideoClip::new(2, 8, 8, [b.pixels(), a.pixels()].concat()).unwrap();
        let mut g = Graph::new();
        let fa = g.constant(ab.to_tensor());
        let fb = g.constant(ba.to_tensor());
        let xa = encode_video(&mut g, &store, fa, &enc).unwrap().tokens;
        let xb = encode_video(&mut g, &store, fb, &enc).unwrap().tokens;
        // rows of frame a sit at 0..4 in `xa` and 4..8 in `xb`
        let va = g.value(xa);
        let vb = g.value(xb);
        let mut differs = false;
        for r in 0..4 {
            for j in 0..16 {
                differs |= va.at(r, j) != vb.at(r + 4, j);
            }
        }
        assert!(differs);
        assert_ne!(va, vb);
    }

    #[test]
    fn zero_temporal_embedding_equals_framewise_encoding() {
        let (mut store, enc) = video_encoder(8, 8, 4, 3);
        store.get_mut(enc.temporal).data_mut().fill(0.0);
        let c = clip(3, 8, 8, 9);
        let mut g = Graph::new();
        let frames = g.constant(c.to_tensor());
        let x = encode_video(&mut g, &store, frames, &enc).unwrap().tokens;
        let x = g.value(x).clone();
        for t in 0..3 {
            // independent single-frame clip through its own graph
            let single = VideoClip::new(1, 8, 8, c.frame(t).to_vec()).unwrap();
            let mut g2 = Graph::new();
            let f = g2.constant(single.to_tensor());
            let y = enc.encode_frame(&mut g2, &store, f, 0).unwrap();
            let y = g2.value(y);
            for p in 0..4 {
                for j in 0..16 {
                    assert!((x.at(t * 4 + p, j) - y.at(p, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn audio_caption_rejects_interior_padding() {
        assert!(AudioCaption::new(vec![1, 5, 0, 6], vec![true, true, false, true]).is_err());
        assert!(AudioCaption::new(vec![1, 5, 2, 0], vec![true, true, true, false]).is_ok());
    }
}
