//! Caption negative log-likelihood, symmetric InfoNCE and their sum.
//!
//! Each loss has a graph form (differentiable) and a plain form over tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

pub const DEFAULT_TAU: f64 = 0.07;

/// Mean over valid positions of `-log softmax(logits[t])[targets[t]]`.
pub fn caption_nll(g: &mut Graph, logits: Var, targets: &[usize], valid: &[bool]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    check_caption_operands(&shape, targets, valid)?;
    let n_valid = valid.iter().filter(|&&v| v).count();
    let lp = g.log_softmax_rows(logits);
    let picked = g.pick(lp, targets)?;
    let w = valid
        .iter()
        .map(|&v| if v { -1.0 / n_valid as f64 } else { 0.0 })
        .collect();
    let w = g.constant(Tensor::new(g.shape(picked).to_vec(), w)?);
    let terms = g.mul(picked, w)?;
    Ok(g.sum(terms))
}

fn check_caption_operands(shape: &[usize], targets: &[usize], valid: &[bool]) -> Result<()> {
    if shape.len() != 2 {
        return Err(Error::shape(
            "logits",
            format!("expected a matrix, got {shape:?}"),
        ));
    }
    if targets.len() != shape[0] || valid.len() != shape[0] {
        return Err(Error::shape(
            "targets",
            format!(
                "{} targets / {} flags for {} positions",
                targets.len(),
                valid.len(),
                shape[0]
            ),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= shape[1]) {
        return Err(Error::Tokenization(format!(
            "target id {bad} outside vocabulary of {}",
            shape[1]
        )));
    }
    if !valid.iter().any(|&v| v) {
        return Err(Error::Contract("every caption position is padding".into()));
    }
    Ok(())
}

/// Plain-value [`caption_nll`].
pub fn caption_nll_value(logits: &Tensor, targets: &[usize], valid: &[bool]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let loss = caption_nll(&mut g, l, targets, valid)?;
    Ok(g.value(loss).item())
}

/// `aᵀv / (‖a‖‖v‖)`, clamped to `[-1, 1]`.
pub fn cosine_sim(a: &[f64], v: &[f64]) -> Result<f64> {
    if a.len() != v.len() {
        return Err(Error::shape(
            "v",
            format!("length {} differs from {}", v.len(), a.len()),
        ));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nv == 0.0 {
        return Err(Error::Contract("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = a.iter().zip(v).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nv)).clamp(-1.0, 1.0))
}

/// Paired pooled features; row `i` of `video` matches row `i` of `audio`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub video: Tensor,
    pub audio: Tensor,
    pub tau: f64,
}

impl ContrastiveBatch {
    pub fn new(video: Tensor, audio: Tensor, tau: f64) -> Result<Self> {
        check_contrastive(video.shape(), audio.shape(), tau)?;
        Ok(Self { video, audio, tau })
    }

    pub fn len(&self) -> usize {
        self.video.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_contrastive(video: &[usize], audio: &[usize], tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if video.len() != 2 || video != audio {
        return Err(Error::shape(
            "C_a",
            format!("{audio:?} does not match C_v {video:?}"),
        ));
    }
    if video[0] < 2 {
        return Err(Error::Contract(format!(
            "contrastive batch needs B >= 2, got {}",
            video[0]
        )));
    }
    Ok(())
}

/// Symmetric InfoNCE over cosine similarities `S = norm(C_a) norm(C_v)ᵀ / τ`:
/// `½ · mean_i [ -log softmax(S)_ii - log softmax(Sᵀ)_ii ]`.
pub fn nce_loss(g: &mut Graph, c_v: Var, c_a: Var, tau: f64) -> Result<Var> {
    let (vs, as_) = (g.shape(c_v).to_vec(), g.shape(c_a).to_vec());
    check_contrastive(&vs, &as_, tau)?;
    let b = vs[0];
    let nv = g.l2_normalize_rows(c_v)?;
    let na = g.l2_normalize_rows(c_a)?;
    let s = g.matmul_t(na, nv, false, true)?;
    let s = g.scale(s, 1.0 / tau);
    let diag: Vec<usize> = (0..b).collect();
    let a2v = g.log_softmax_rows(s);
    let a2v = g.pick(a2v, &diag)?;
    let st = g.transpose(s)?;
    let v2a = g.log_softmax_rows(st);
    let v2a = g.pick(v2a, &diag)?;
    let both = g.add(a2v, v2a)?;
    let total = g.sum(both);
    Ok(g.scale(total, -0.5 / b as f64))
}

/// Plain-value [`nce_loss`].
pub fn nce_loss_value(batch: &ContrastiveBatch) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(batch.video.clone());
    let a = g.constant(batch.audio.clone());
    let loss = nce_loss(&mut g, v, a, batch.tau)?;
    Ok(g.value(loss).item())
}

/// Term weights for the combined objective; both default to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub caption: f64,
    pub nce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            caption: 1.0,
            nce: 1.0,
        }
    }
}

/// `w_nce · L_nce + w_caption · L_caption`.
pub fn combined_loss(g: &mut Graph, caption: Var, nce: Var, weights: LossWeights) -> Result<Var> {
    let c = if weights.caption == 1.0 {
        caption
    } else {
        g.scale(caption, weights.caption)
    };
    let n = if weights.nce == 1.0 {
        nce
    } else {
        g.scale(nce, weights.nce)
    };
    g.add(n, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_vocab() {
        let logits = Tensor::filled(&[3, 10], 0.7);
        let v = caption_nll_value(&logits, &[1, 4, 9], &[true; 3]).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn pad_positions_are_ignored() {
        let mut logits = Tensor::filled(&[2, 4], 0.0);
        let a = caption_nll_value(&logits, &[1, 0], &[true, false]).unwrap();
        logits.data_mut()[4..].copy_from_slice(&[9.0, -3.0, 2.0, 5.0]);
        let b = caption_nll_value(&logits, &[1, 0], &[true, false]).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            caption_nll_value(&logits, &[1, 0], &[false, false]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cosine_edge_cases() {
        let x = [0.3, -1.2, 2.0];
        assert!((cosine_sim(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_sim(&x, &x.map(|v| -v)).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn identical_features_give_ln_b() {
        for b in [2, 4, 8] {
            let t = Tensor::filled(&[b, 5], 0.4);
            let batch = ContrastiveBatch::new(t.clone(), t, DEFAULT_TAU).unwrap();
            assert!((nce_loss_value(&batch).unwrap() - (b as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn contrastive_validation() {
        let t = Tensor::filled(&[1, 3], 1.0);
        assert!(matches!(
            ContrastiveBatch::new(t.clone(), t, 0.07),
            Err(Error::Contract(_))
        ));
        let t = Tensor::filled(&[2, 3], 1.0);
        assert!(matches!(
            ContrastiveBatch::new(t.clone(), t, 0.0),
            Err(Error::Config(_))
        ));
    }
}
