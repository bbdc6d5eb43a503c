//! The full captioning model: encoders, combiner and decoder wired per
//! variant, plus teacher-forced losses and caption generation.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combiner::{aggregate, co_attend, pool_first, Combiner, LayerCapture};
use crate::decoder::{beam_search, emittable, greedy_decode, CaptionDecoder, Hypothesis};
use crate::encoders::{
    encode_video, AudioCaption, AudioEncoder, VideoClip, VideoEncoder, CHANNELS,
};
use crate::error::{Error, Result};
use crate::losses::{caption_nll, combined_loss, nce_loss, LossWeights};
use crate::nn::{AttentionConfig, Graph, Init, ParamStore, Tensor, Var};
use crate::vocab::{CLS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Video branch only; audio captions are never read.
    VisionBased,
    /// Audio-caption branch only; frames are never read.
    AudioBased,
    /// Co-attention fusion trained with the caption loss alone.
    Fusion,
    /// Co-attention fusion trained with caption plus contrastive loss.
    Micap,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::VisionBased,
        Variant::AudioBased,
        Variant::Fusion,
        Variant::Micap,
    ];

    pub fn uses_video(self) -> bool {
        self != Variant::AudioBased
    }

    pub fn uses_audio(self) -> bool {
        self != Variant::VisionBased
    }

    pub fn uses_nce(self) -> bool {
        self == Variant::Micap
    }

    /// Short name accepted on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Variant::VisionBased => "vision",
            Variant::AudioBased => "audio",
            Variant::Fusion => "fusion",
            Variant::Micap => "micap",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::VisionBased => "vision_based",
            Variant::AudioBased => "audio_based",
            Variant::Fusion => "fusion",
            Variant::Micap => "micap",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vision" | "vision_based" => Ok(Variant::VisionBased),
            "audio" | "audio_based" => Ok(Variant::AudioBased),
            "fusion" => Ok(Variant::Fusion),
            "micap" => Ok(Variant::Micap),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub encoder_layers: usize,
    pub fusion_layers: usize,
    pub decoder_layers: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub patch: usize,
    pub max_frames: usize,
    /// Padded audio-caption length `S`.
    pub audio_len: usize,
    /// Generation bound, counting `[EOS]`; also the decoder's position count.
    pub max_len: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: 32×32 frames, patch 8, T ≤ 4, S = 12.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            dim: 64,
            heads: 4,
            ff_mult: 4,
            encoder_layers: 2,
            fusion_layers: 2,
            decoder_layers: 2,
            frame_height: 32,
            frame_width: 32,
            patch: 8,
            max_frames: 4,
            audio_len: 12,
            max_len: 20,
            vocab_size,
            dropout: 0.0,
        }
    }

    /// Full-resolution preset: 224×224 frames and S = 67.
    pub fn full_resolution(vocab_size: usize) -> Self {
        Self {
            frame_height: 224,
            frame_width: 224,
            patch: 16,
            max_frames: 12,
            audio_len: 67,
            ..Self::desk(vocab_size)
        }
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        let mut cfg = AttentionConfig::new(self.dim, self.heads)?;
        cfg.dropout = self.dropout;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.attention()?;
        let positive = [
            ("ff_mult", self.ff_mult),
            ("encoder_layers", self.encoder_layers),
            ("fusion_layers", self.fusion_layers),
            ("decoder_layers", self.decoder_layers),
            ("max_frames", self.max_frames),
            ("audio_len", self.audio_len),
            ("max_len", self.max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= EOS + 1 {
            return Err(Error::Config(
                "vocabulary must contain at least one word".into(),
            ));
        }
        if self.patch == 0
            || !self.frame_height.is_multiple_of(self.patch)
            || !self.frame_width.is_multiple_of(self.patch)
        {
            return Err(Error::Config(format!(
                "frame {}x{} is not divisible into {}x{} patches",
                self.frame_height, self.frame_width, self.patch, self.patch
            )));
        }
        Ok(())
    }
}

/// One model input: the clip and its padded audio caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub clip: VideoClip,
    pub audio: AudioCaption,
}

/// A training instance: input plus ground-truth caption word ids
/// (no `[CLS]` / `[EOS]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: ModelInput,
    pub caption: Vec<usize>,
}

/// `([CLS] w₁ … wₙ, w₁ … wₙ [EOS])`, truncated to `max_len` positions.
pub fn teacher_forcing(words: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let mut prefix = Vec::with_capacity(words.len() + 1);
    prefix.push(CLS);
    prefix.extend_from_slice(words);
    let mut targets = words.to_vec();
    targets.push(EOS);
    prefix.truncate(max_len);
    targets.truncate(max_len);
    (prefix, targets)
}

/// Graph handles produced by one fused forward pass.
#[derive(Debug, Clone)]
pub struct Fused {
    /// Pixel input (`[T, h, w, 3]`), present when the video branch ran.
    pub frames: Option<Var>,
    /// Audio token-embedding rows, present when the audio branch ran.
    pub audio_embedding: Option<Var>,
    pub z_v: Option<Var>,
    pub z_a: Option<Var>,
    pub z_va: Var,
    /// Which `z_va` rows the decoder may attend to.
    pub memory_valid: Vec<bool>,
    pub c_v: Option<Var>,
    pub c_a: Option<Var>,
    pub capture: Vec<LayerCapture>,
    /// `(T, P, (grid_rows, grid_cols))` when the video branch ran.
    pub video_layout: Option<(usize, usize, (usize, usize))>,
}

/// Captured co-attention weights of one layer as plain tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    pub video_audio: Vec<Tensor>,
    pub audio_video: Vec<Tensor>,
}

/// Plain-tensor view of a fused forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub z_v: Option<Tensor>,
    pub z_a: Option<Tensor>,
    pub z_va: Tensor,
    pub c_v: Option<Tensor>,
    pub c_a: Option<Tensor>,
    pub attention: Vec<LayerAttention>,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: Var,
    pub caption: Var,
    pub nce: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Micap {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub video: VideoEncoder,
    pub audio: AudioEncoder,
    pub combiner: Combiner,
    pub decoder: CaptionDecoder,
}

impl Micap {
    /// Builds the model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.attention()?;
        let ff = config.ff_mult * config.dim;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut params, &mut rng);
        let video = VideoEncoder::init(
            &mut init,
            "video",
            cfg,
            ff,
            config.encoder_layers,
            (config.frame_height, config.frame_width, config.patch),
            config.max_frames,
        )?;
        let audio = AudioEncoder::init(
            &mut init,
            "audio",
            cfg,
            ff,
            config.encoder_layers,
            config.vocab_size,
            config.audio_len,
        )?;
        let combiner = Combiner::init(&mut init, "combiner", cfg, ff, config.fusion_layers)?;
        let decoder = CaptionDecoder::init(
            &mut init,
            "decoder",
            cfg,
            ff,
            config.decoder_layers,
            config.vocab_size,
            config.max_len,
        )?;
        Ok(Self {
            config,
            params,
            video,
            audio,
            combiner,
            decoder,
        })
    }

    fn check_input(&self, input: &ModelInput, variant: Variant) -> Result<()> {
        if variant.uses_video() {
            let c = &input.clip;
            if (c.height(), c.width()) != (self.config.frame_height, self.config.frame_width) {
                return Err(Error::Config(format!(
                    "clip is {}x{}, model expects {}x{}",
                    c.height(),
                    c.width(),
                    self.config.frame_height,
                    self.config.frame_width
                )));
            }
        }
        if variant.uses_audio() && input.audio.len() != self.config.audio_len {
            return Err(Error::Config(format!(
                "audio caption has {} positions, model expects {}",
                input.audio.len(),
                self.config.audio_len
            )));
        }
        Ok(())
    }

    /// Encoders and combiner for one sample. `track_pixels` makes the pixel
    /// input differentiable.
    pub fn fuse(
        &self,
        g: &mut Graph,
        input: &ModelInput,
        variant: Variant,
        track_pixels: bool,
    ) -> Result<Fused> {
        self.fuse_with_frames(g, None, input, variant, track_pixels)
    }

    /// [`Micap::fuse`] with the clip's pixels optionally replaced by a
    /// `[T, h, w, 3]` tensor of the same shape.
    pub fn fuse_with_frames(
        &self,
        g: &mut Graph,
        frames_override: Option<Tensor>,
        input: &ModelInput,
        variant: Variant,
        track_pixels: bool,
    ) -> Result<Fused> {
        self.check_input(input, variant)?;
        let store = &self.params;
        let (mut frames, mut x_v, mut video_layout) = (None, None, None);
        if variant.uses_video() {
            let t = match frames_override {
                Some(t) => {
                    let c = &input.clip;
                    let want = [c.frame_count(), c.height(), c.width(), CHANNELS];
                    if t.shape() != want {
                        return Err(Error::shape(
                            "frames",
                            format!("expected {want:?}, got {:?}", t.shape()),
                        ));
                    }
                    t
                }
                None => input.clip.to_tensor(),
            };
            let f = if track_pixels {
                g.input(t)
            } else {
                g.constant(t)
            };
            let feats = encode_video(g, store, f, &self.video)?;
            frames = Some(f);
            x_v = Some(self.combiner.prepend_vcls(g, store, feats.tokens)?);
            video_layout = Some((feats.frames, feats.patches_per_frame, feats.grid));
        }
        let (mut audio_embedding, mut x_a) = (None, None);
        if variant.uses_audio() {
            let emb = self.audio.embed(g, store, input.audio.ids())?;
            x_a = Some(
                self.audio
                    .encode_embedded(g, store, emb, input.audio.valid())?,
            );
            audio_embedding = Some(emb);
        }
        let audio_valid = input.audio.valid();
        let (z_v, z_a, capture, memory_valid) = match (x_v, x_a) {
            (Some(xv), Some(xa)) => {
                let nv = g.shape(xv)[0];
                let video_valid = vec![true; nv];
                let co = co_attend(
                    g,
                    store,
                    xv,
                    xa,
                    &self.combiner.video_blocks,
                    &self.combiner.audio_blocks,
                    &video_valid,
                    audio_valid,
                )?;
                let mut valid = video_valid;
                valid.extend_from_slice(audio_valid);
                (Some(co.z_v), Some(co.z_a), co.layers, valid)
            }
            (Some(xv), None) => {
                let nv = g.shape(xv)[0];
                (Some(xv), None, Vec::new(), vec![true; nv])
            }
            (None, Some(xa)) => (None, Some(xa), Vec::new(), audio_valid.to_vec()),
            (None, None) => unreachable!("every variant reads at least one modality"),
        };
        let z_va = aggregate(g, store, z_v, z_a, &self.combiner.norm)?;
        let c_v = z_v
            .map(|z| pool_first(g, store, z, &self.combiner.pool_video))
            .transpose()?;
        let c_a = z_a
            .map(|z| pool_first(g, store, z, &self.combiner.pool_audio))
            .transpose()?;
        Ok(Fused {
            frames,
            audio_embedding,
            z_v,
            z_a,
            z_va,
            memory_valid,
            c_v,
            c_a,
            capture,
            video_layout,
        })
    }

    /// Plain-tensor fusion outputs with all captured attention maps.
    pub fn fusion_output(&self, input: &ModelInput, variant: Variant) -> Result<FusionOutput> {
        let mut g = Graph::new();
        let f = self.fuse(&mut g, input, variant, false)?;
        let val = |v: Option<Var>| v.map(|v| g.value(v).clone());
        let attention = f
            .capture
            .iter()
            .map(|l| LayerAttention {
                video_audio: l.video_audio.iter().map(|&w| g.value(w).clone()).collect(),
                audio_video: l.audio_video.iter().map(|&w| g.value(w).clone()).collect(),
            })
            .collect();
        Ok(FusionOutput {
            z_v: val(f.z_v),
            z_a: val(f.z_a),
            z_va: g.value(f.z_va).clone(),
            c_v: val(f.c_v),
            c_a: val(f.c_a),
            attention,
        })
    }

    /// Caption loss (and, for `Micap`, the contrastive term) averaged over
    /// the batch.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        batch: &[&Example],
        variant: Variant,
        tau: f64,
        weights: LossWeights,
    ) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut caption_terms = Vec::with_capacity(batch.len());
        let (mut cvs, mut cas) = (Vec::new(), Vec::new());
        for ex in batch {
            let fused = self.fuse(g, &ex.input, variant, false)?;
            let (prefix, targets) = teacher_forcing(&ex.caption, self.config.max_len);
            let out = self.decoder.decode_step(
                g,
                &self.params,
                &prefix,
                fused.z_va,
                &fused.memory_valid,
            )?;
            let valid = vec![true; targets.len()];
            caption_terms.push(caption_nll(g, out.logits, &targets, &valid)?);
            if variant.uses_nce() {
                cvs.push(fused.c_v.expect("fusion variants pool video"));
                cas.push(fused.c_a.expect("fusion variants pool audio"));
            }
        }
        let stacked = g.concat_rows(&caption_terms)?;
        let caption = g.mean(stacked);
        let (total, nce) = if variant.uses_nce() {
            let c_v = g.concat_rows(&cvs)?;
            let c_a = g.concat_rows(&cas)?;
            let nce = nce_loss(g, c_v, c_a, tau)?;
            (combined_loss(g, caption, nce, weights)?, Some(nce))
        } else {
            let c = if weights.caption == 1.0 {
                caption
            } else {
                g.scale(caption, weights.caption)
            };
            (c, None)
        };
        Ok(BatchLoss {
            total,
            caption,
            nce,
        })
    }

    /// `(correct, total)` teacher-forced next-token predictions, using the
    /// same emittable-argmax rule as greedy decoding.
    pub fn teacher_forced_hits(
        &self,
        example: &Example,
        variant: Variant,
    ) -> Result<(usize, usize)> {
        let mut g = Graph::new();
        let fused = self.fuse(&mut g, &example.input, variant, false)?;
        let (prefix, targets) = teacher_forcing(&example.caption, self.config.max_len);
        let out = self.decoder.decode_step(
            &mut g,
            &self.params,
            &prefix,
            fused.z_va,
            &fused.memory_valid,
        )?;
        let logits = g.value(out.logits);
        let mut correct = 0;
        for (t, &target) in targets.iter().enumerate() {
            if argmax_emittable(logits.row(t)) == Some(target) {
                correct += 1;
            }
        }
        Ok((correct, targets.len()))
    }

    /// Fused memory `z_va` and its validity flags as plain values.
    pub fn memory(&self, input: &ModelInput, variant: Variant) -> Result<(Tensor, Vec<bool>)> {
        let mut g = Graph::new();
        let f = self.fuse(&mut g, input, variant, false)?;
        Ok((g.value(f.z_va).clone(), f.memory_valid))
    }

    /// Next-token logits for `prefix` over a fixed memory.
    pub fn next_logits(
        &self,
        memory: &Tensor,
        memory_valid: &[bool],
        prefix: &[usize],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let m = g.constant(memory.clone());
        let out = self
            .decoder
            .decode_step(&mut g, &self.params, prefix, m, memory_valid)?;
        let logits = g.value(out.logits);
        Ok(logits.row(prefix.len() - 1).to_vec())
    }

    /// Beam search (`width = 1` is greedy) over the fused memory.
    pub fn generate(
        &self,
        input: &ModelInput,
        variant: Variant,
        width: usize,
    ) -> Result<Hypothesis> {
        let (memory, valid) = self.memory(input, variant)?;
        self.generate_from_memory(&memory, &valid, width)
    }

    pub fn generate_from_memory(
        &self,
        memory: &Tensor,
        valid: &[bool],
        width: usize,
    ) -> Result<Hypothesis> {
        let step = |prefix: &[usize]| self.next_logits(memory, valid, prefix);
        if width == 1 {
            greedy_decode(step, self.config.max_len)
        } else {
            beam_search(step, width, self.config.max_len)
        }
    }

    /// Generation that also returns the captured fusion outputs.
    pub fn generate_with_capture(
        &self,
        input: &ModelInput,
        variant: Variant,
        width: usize,
    ) -> Result<(Hypothesis, FusionOutput)> {
        let fusion = self.fusion_output(input, variant)?;
        let (_, valid) = self.memory(input, variant)?;
        let hyp = self.generate_from_memory(&fusion.z_va, &valid, width)?;
        Ok((hyp, fusion))
    }
}

/// Highest-logit emittable token; ties go to the lowest id.
pub fn argmax_emittable(logits: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in logits.iter().enumerate() {
        if emittable(i) && best.is_none_or(|b| x > logits[b]) {
            best = Some(i);
        }
    }
    best
}
