//! Explanation surfaces: cross-attention heatmaps, input-gradient saliency
//! and pooled-embedding export.

pub mod embeddings;
pub mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use embeddings::{
    alignment_summary, export_pair_embeddings, read_embeddings, write_embeddings, AlignmentSummary,
    EmbeddingDump, EmbeddingRecord,
};
pub use render::{heatmap_rgb, render_heatmap, to_ppm, to_svg, upsample_nearest, ImageFormat};

use crate::encoders::{patch_indices, CHANNELS};
use crate::error::{Error, Result};
use crate::model::{Micap, ModelInput, Variant};
use crate::nn::{Graph, Tensor, Var};
use crate::vocab::CLS;

/// Which captured attention a heatmap is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Video queries over audio-caption keys.
    VideoAudio,
    /// Audio queries over video-patch keys.
    AudioVideo,
    /// Decoder self-attention over the generated prefix.
    Decoder,
}

impl Branch {
    pub fn target(self) -> Target {
        match self {
            Branch::VideoAudio => Target::AudioTokens,
            Branch::AudioVideo => Target::VideoPatches,
            Branch::Decoder => Target::DecoderTokens,
        }
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "video_audio" => Ok(Branch::VideoAudio),
            "audio_video" => Ok(Branch::AudioVideo),
            "decoder" => Ok(Branch::Decoder),
            _ => Err(Error::Config(format!("unknown branch {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    VideoPatches,
    AudioTokens,
    DecoderTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerSel {
    #[default]
    Last,
    Index(usize),
}

impl LayerSel {
    fn resolve(self, layers: usize) -> Result<usize> {
        match self {
            LayerSel::Last if layers > 0 => Ok(layers - 1),
            LayerSel::Last => Err(Error::Range("model has no attention layers".into())),
            LayerSel::Index(i) if i < layers => Ok(i),
            LayerSel::Index(i) => Err(Error::Range(format!("layer {i} of {layers}"))),
        }
    }
}

impl FromStr for LayerSel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "last" {
            return Ok(LayerSel::Last);
        }
        s.parse()
            .map(LayerSel::Index)
            .map_err(|_| Error::Config(format!("layer must be \"last\" or an index, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAgg {
    #[default]
    Mean,
    Max,
    Head(usize),
}

impl fmt::Display for HeadAgg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadAgg::Mean => f.write_str("mean"),
            HeadAgg::Max => f.write_str("max"),
            HeadAgg::Head(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for HeadAgg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HeadAgg::Mean),
            "max" => Ok(HeadAgg::Max),
            _ => s
                .trim_start_matches("head")
                .trim_start_matches(':')
                .parse()
                .map(HeadAgg::Head)
                .map_err(|_| {
                    Error::Config(format!(
                        "heads must be mean, max or a head index, got {s:?}"
                    ))
                }),
        }
    }
}

/// Aggregates one query row across per-head weight matrices.
pub fn aggregate_heads(heads: &[Tensor], row: usize, agg: HeadAgg) -> Result<Vec<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Range("no attention heads captured".into()))?;
    if row >= first.rows() {
        return Err(Error::Range(format!("query row {row} of {}", first.rows())));
    }
    let cols = first.cols();
    Ok(match agg {
        HeadAgg::Head(k) => heads
            .get(k)
            .ok_or_else(|| Error::Range(format!("head {k} of {}", heads.len())))?
            .row(row)
            .to_vec(),
        HeadAgg::Mean => {
            let mut out = vec![0.0; cols];
            for h in heads {
                for (o, &w) in out.iter_mut().zip(h.row(row)) {
                    *o += w;
                }
            }
            out.iter_mut().for_each(|o| *o /= heads.len() as f64);
            out
        }
        HeadAgg::Max => (0..cols)
            .map(|j| {
                heads
                    .iter()
                    .map(|h| h.at(row, j))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect(),
    })
}

/// Divides by the maximum. Scores must be finite and non-negative with a
/// positive maximum.
pub fn normalize_by_max(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Numeric(
            "heatmap scores must be finite and non-negative".into(),
        ));
    }
    let max = raw.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Numeric("heatmap is all zero".into()));
    }
    Ok(raw.iter().map(|x| x / max).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHeatmap {
    pub target: Target,
    /// `[frames, rows, cols]`; non-video targets use `[1, 1, n]`.
    pub shape: [usize; 3],
    /// Aggregated weights before normalization.
    pub raw: Vec<f64>,
    /// `raw / max(raw)`.
    pub scores: Vec<f64>,
    pub layer: usize,
    pub heads: HeadAgg,
    pub token_index: usize,
    pub token: usize,
}

impl AttentionHeatmap {
    fn new(
        target: Target,
        shape: [usize; 3],
        raw: Vec<f64>,
        layer: usize,
        heads: HeadAgg,
        token_index: usize,
        token: usize,
    ) -> Result<Self> {
        debug_assert_eq!(raw.len(), shape.iter().product::<usize>());
        let scores = normalize_by_max(&raw)?;
        Ok(Self {
            target,
            shape,
            raw,
            scores,
            layer,
            heads,
            token_index,
            token,
        })
    }

    /// Scores of frame `t` as a `rows × cols` row-major grid.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.scores[t * n..(t + 1) * n]
    }

    /// Flat index of the highest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

fn check_token(caption: &[usize], token_index: usize) -> Result<usize> {
    caption.get(token_index).copied().ok_or_else(|| {
        Error::Range(format!(
            "token {token_index} of a {}-token caption",
            caption.len()
        ))
    })
}

fn patch_grid(model: &Micap) -> (usize, usize) {
    let c = &model.config;
    (c.frame_height / c.patch, c.frame_width / c.patch)
}

/// Heatmap for generated token `token_index` of `caption`.
///
/// Co-attention branches read the summary query row (`[VCLS]` for video,
/// the audio `[CLS]` for audio); video keys exclude `[VCLS]` and audio keys
/// exclude padding. The decoder branch reads the query row that predicts
/// `caption[token_index]`.
#[allow(clippy::too_many_arguments)]
pub fn extract_cross_attention(
    model: &Micap,
    input: &ModelInput,
    variant: Variant,
    caption: &[usize],
    branch: Branch,
    token_index: usize,
    layer: LayerSel,
    heads: HeadAgg,
) -> Result<AttentionHeatmap> {
    let token = check_token(caption, token_index)?;
    match branch {
        Branch::VideoAudio | Branch::AudioVideo => {
            if !(variant.uses_video() && variant.uses_audio()) {
                return Err(Error::Config(format!(
                    "variant {variant} has no co-attention"
                )));
            }
            let fusion = model.fusion_output(input, variant)?;
            let l = layer.resolve(fusion.attention.len())?;
            let captured = &fusion.attention[l];
            if branch == Branch::VideoAudio {
                let row = aggregate_heads(&captured.video_audio, 0, heads)?;
                let raw: Vec<f64> = row
                    .iter()
                    .zip(input.audio.valid())
                    .filter(|(_, &v)| v)
                    .map(|(&w, _)| w)
                    .collect();
                AttentionHeatmap::new(
                    Target::AudioTokens,
                    [1, 1, raw.len()],
                    raw,
                    l,
                    heads,
                    token_index,
                    token,
                )
            } else {
                let row = aggregate_heads(&captured.audio_video, 0, heads)?;
                let (gr, gc) = patch_grid(model);
                let raw = row[1..].to_vec();
                let frames = raw.len() / (gr * gc);
                AttentionHeatmap::new(
                    Target::VideoPatches,
                    [frames, gr, gc],
                    raw,
                    l,
                    heads,
                    token_index,
                    token,
                )
            }
        }
        Branch::Decoder => {
            let (memory, valid) = model.memory(input, variant)?;
            let l = layer.resolve(model.decoder.layers.len())?;
            let mut prefix = vec![CLS];
            prefix.extend_from_slice(&caption[..token_index]);
            let mut g = Graph::new();
            let m = g.constant(memory);
            let out = model
                .decoder
                .decode_step(&mut g, &model.params, &prefix, m, &valid)?;
            let mats: Vec<Tensor> = out.self_weights[l]
                .iter()
                .map(|&w| g.value(w).clone())
                .collect();
            let raw = aggregate_heads(&mats, token_index, heads)?;
            AttentionHeatmap::new(
                Target::DecoderTokens,
                [1, 1, raw.len()],
                raw,
                l,
                heads,
                token_index,
                token,
            )
        }
    }
}

/// Gradient saliency of one generated token's logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Saliency {
    pub token_index: usize,
    pub token: usize,
    pub logit: f64,
    /// d logit / d pixel, `[T, h, w, 3]`, pixels scaled to `[0, 1]`.
    pub pixel_grad: Option<Tensor>,
    /// Per-patch L2 norm of `pixel_grad`, `[T, rows, cols]`, max-normalized.
    pub video: Option<Tensor>,
    /// d logit / d token embedding, `S × D`.
    pub audio_grad: Option<Tensor>,
    /// Per-token L2 norm of `audio_grad`, max-normalized.
    pub audio: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn token_logit_var(
    g: &mut Graph,
    model: &Micap,
    frames: Option<Tensor>,
    input: &ModelInput,
    variant: Variant,
    caption: &[usize],
    token_index: usize,
    track: bool,
) -> Result<(Option<Var>, Option<Var>, Var)> {
    let token = check_token(caption, token_index)?;
    let fused = model.fuse_with_frames(g, frames, input, variant, track)?;
    let mut prefix = vec![CLS];
    prefix.extend_from_slice(&caption[..token_index]);
    let out =
        model
            .decoder
            .decode_step(g, &model.params, &prefix, fused.z_va, &fused.memory_valid)?;
    let row = g.slice_rows(out.logits, token_index, 1)?;
    let logit = g.pick(row, &[token])?;
    Ok((fused.frames, fused.audio_embedding, logit))
}

/// Logit of `caption[token_index]` with the clip pixels optionally
/// replaced by `frames`.
pub fn token_logit(
    model: &Micap,
    frames: Option<Tensor>,
    input: &ModelInput,
    variant: Variant,
    caption: &[usize],
    token_index: usize,
) -> Result<f64> {
    let mut g = Graph::new();
    let (_, _, logit) = token_logit_var(
        &mut g,
        model,
        frames,
        input,
        variant,
        caption,
        token_index,
        false,
    )?;
    Ok(g.value(logit).item())
}

fn normalize_or_zero(v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.into_iter().map(|x| x / max).collect()
    } else {
        v
    }
}

fn l2(xs: impl Iterator<Item = f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

pub fn input_saliency(
    model: &Micap,
    input: &ModelInput,
    variant: Variant,
    caption: &[usize],
    token_index: usize,
) -> Result<Saliency> {
    let token = check_token(caption, token_index)?;
    let mut g = Graph::new();
    let (frames, emb, logit) = token_logit_var(
        &mut g,
        model,
        None,
        input,
        variant,
        caption,
        token_index,
        true,
    )?;
    g.backward(logit)?;
    let grad_of = |v: Var| {
        let shape = g.shape(v).to_vec();
        let data = g
            .grad(v)
            .map_or_else(|| vec![0.0; shape.iter().product()], <[f64]>::to_vec);
        Tensor::new(shape, data)
    };
    let (mut pixel_grad, mut video) = (None, None);
    if let Some(f) = frames {
        let grad = grad_of(f)?;
        let c = &model.config;
        let (gr, gc) = patch_grid(model);
        let t_count = input.clip.frame_count();
        let per_patch = c.patch * c.patch * CHANNELS;
        let mut norms = Vec::with_capacity(t_count * gr * gc);
        for t in 0..t_count {
            let idx = patch_indices(t, c.frame_height, c.frame_width, c.patch);
            for chunk in idx.chunks(per_patch) {
                norms.push(l2(chunk.iter().map(|&i| grad.data()[i])));
            }
        }
        video = Some(Tensor::new(
            vec![t_count, gr, gc],
            normalize_or_zero(norms),
        )?);
        pixel_grad = Some(grad);
    }
    let (mut audio_grad, mut audio) = (None, None);
    if let Some(e) = emb {
        let grad = grad_of(e)?;
        let norms = (0..grad.rows())
            .map(|r| l2(grad.row(r).iter().copied()))
            .collect();
        audio = Some(normalize_or_zero(norms));
        audio_grad = Some(grad);
    }
    Ok(Saliency {
        token_index,
        token,
        logit: g.value(logit).item(),
        pixel_grad,
        video,
        audio_grad,
        audio,
    })
}
