//! Autoregressive caption decoder and greedy / beam-search generation.
//!
//! Generation is written against a `step` closure that maps a prefix
//! (starting with `[CLS]`) to next-token logits, so the search logic can be
//! checked independently of the network.

use std::cmp::Ordering;

use rand::Rng;

use crate::encoders::key_mask;
use crate::error::{Error, Result};
use crate::nn::{
    AttentionConfig, Graph, Init, LayerNorm, Linear, Mask, MultiHeadAttention, ParamId, ParamStore,
    TransformerBlock, Var,
};
use crate::vocab::{CLS, EOS, PAD};

/// Causal self-attention sub-layer followed by a cross-attention block over
/// the fused memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross: TransformerBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionDecoder {
    pub token_embedding: ParamId,
    pub position: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
    /// Vocabulary projection `W`, no bias.
    pub proj: Linear,
    pub vocab_size: usize,
    /// Longest prefix the decoder accepts; also the generation bound.
    pub max_len: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    /// `len(prefix) × |V|`.
    pub logits: Var,
    pub self_weights: Vec<Vec<Var>>,
    pub cross_weights: Vec<Vec<Var>>,
}

impl CaptionDecoder {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cfg: AttentionConfig,
        ff_hidden: usize,
        layers: usize,
        vocab_size: usize,
        max_len: usize,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let d = cfg.model_dim;
        init.scope(name, |init| {
            let layers = (0..layers)
                .map(|i| {
                    init.scope(&format!("layer{i}"), |init| {
                        Ok(DecoderLayer {
                            norm_self: LayerNorm::init(init, "norm_self", d),
                            self_attn: MultiHeadAttention::init(init, "self_attn", cfg)?,
                            cross: TransformerBlock::init(init, "cross", cfg, ff_hidden, true)?,
                        })
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Self {
                token_embedding: init.normal("token_embedding", &[vocab_size, d], 0.1),
                position: init.normal("position", &[max_len, d], 0.1),
                layers,
                final_norm: LayerNorm::init(init, "final_norm", d),
                proj: Linear::init(init, "proj", d, vocab_size, false),
                vocab_size,
                max_len,
            })
        })
    }

    /// Logits for every prefix position; row `t` depends only on
    /// `prefix[..=t]` and the memory.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &[usize],
        memory: Var,
        memory_valid: &[bool],
    ) -> Result<DecoderOutput> {
        if prefix.first() != Some(&CLS) {
            return Err(Error::Contract(
                "decoder prefix must start with [CLS]".into(),
            ));
        }
        if prefix.len() > self.max_len {
            return Err(Error::Capacity(format!(
                "prefix of {} tokens exceeds max_len {}",
                prefix.len(),
                self.max_len
            )));
        }
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Tokenization(format!(
                "token id {bad} outside vocabulary"
            )));
        }
        if memory_valid.len() != g.shape(memory)[0] {
            return Err(Error::shape("memory mask", "one flag per memory row"));
        }
        let n = prefix.len();
        let table = g.param(store, self.token_embedding);
        let tokens = g.select_rows(table, prefix)?;
        let pos = g.param(store, self.position);
        let pos = g.slice_rows(pos, 0, n)?;
        let mut x = g.add(tokens, pos)?;

        let causal = Mask::causal(n);
        let to_memory = key_mask(n, memory_valid);
        let mut self_weights = Vec::with_capacity(self.layers.len());
        let mut cross_weights = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let xn = layer.norm_self.forward(g, store, x)?;
            let att = layer.self_attn.forward(g, store, xn, xn, &causal)?;
            x = g.add(x, att.out)?;
            let cross = layer.cross.forward(g, store, x, Some(memory), &to_memory)?;
            x = cross.out;
            self_weights.push(att.weights);
            cross_weights.push(cross.weights);
        }
        let x = self.final_norm.forward(g, store, x)?;
        let logits = self.proj.forward(g, store, x)?;
        Ok(DecoderOutput {
            logits,
            self_weights,
            cross_weights,
        })
    }
}

/// Tokens generation may emit: everything except `[PAD]` and `[CLS]`.
pub fn emittable(token: usize) -> bool {
    token != PAD && token != CLS
}

/// Log-probabilities over emittable tokens; `[PAD]` and `[CLS]` get `-inf`.
pub fn next_token_log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| emittable(*i))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .enumerate()
            .filter(|(i, _)| emittable(*i))
            .map(|(_, &x)| (x - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if emittable(i) {
                x - lse
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// A generated sequence without the leading `[CLS]`; includes `[EOS]` when
/// `finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Self {
            tokens: Vec::new(),
            score: 0.0,
            finished: false,
        }
    }

    fn extend(&self, token: usize, log_prob: f64) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        Self {
            tokens,
            score: self.score + log_prob,
            finished: token == EOS,
        }
    }

    /// Caption tokens with `[EOS]` removed.
    pub fn words(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Higher score first; ties go to the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Live hypotheses, sorted best first, at most `width` of them.
#[derive(Debug, Clone)]
pub struct Beam {
    pub hypotheses: Vec<Hypothesis>,
    pub width: usize,
}

impl Beam {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(Self {
            hypotheses: vec![Hypothesis::root()],
            width,
        })
    }
}

fn prefix_of(h: &Hypothesis) -> Vec<usize> {
    let mut p = Vec::with_capacity(h.tokens.len() + 1);
    p.push(CLS);
    p.extend_from_slice(&h.tokens);
    p
}

/// Appends the argmax emittable token until `[EOS]` or `max_len` tokens.
/// Ties resolve to the lowest token id.
pub fn greedy_decode<F>(mut step: F, max_len: usize) -> Result<Hypothesis>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut h = Hypothesis::root();
    while h.tokens.len() < max_len {
        let logits = step(&prefix_of(&h))?;
        let mut best: Option<usize> = None;
        for (i, &x) in logits.iter().enumerate() {
            if !emittable(i) {
                continue;
            }
            if !x.is_finite() {
                return Err(Error::Numeric(format!("non-finite logit for token {i}")));
            }
            if best.is_none_or(|b| x > logits[b]) {
                best = Some(i);
            }
        }
        let tok = best.ok_or_else(|| Error::Contract("no emittable token".into()))?;
        let lp = next_token_log_probs(&logits)[tok];
        h = h.extend(tok, lp);
        if h.finished {
            break;
        }
    }
    Ok(h)
}

/// Length-bounded beam search over summed log-probabilities, with no length
/// normalization. Each step keeps the `width` best extensions; those ending
/// in `[EOS]` move to the finished pool. Stops once the best finished score
/// is at least the best live score.
pub fn beam_search<F>(mut step: F, width: usize, max_len: usize) -> Result<Hypothesis>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut beam = Beam::new(width)?;
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates = Vec::with_capacity(beam.hypotheses.len() * 8);
        for h in &beam.hypotheses {
            let logits = step(&prefix_of(h))?;
            if logits.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("non-finite decoder logits".into()));
            }
            let lp = next_token_log_probs(&logits);
            for (tok, &p) in lp.iter().enumerate() {
                if emittable(tok) {
                    candidates.push(h.extend(tok, p));
                }
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        let (done, live): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|h| h.finished);
        finished.extend(done);
        finished.sort_by(rank);
        beam.hypotheses = live;
        match (finished.first(), beam.hypotheses.first()) {
            (_, None) => break,
            (Some(f), Some(l)) if f.score >= l.score => break,
            _ => {}
        }
    }
    Ok(finished
        .into_iter()
        .next()
        .or_else(|| beam.hypotheses.into_iter().next())
        .expect("beam search always holds a hypothesis"))
}
