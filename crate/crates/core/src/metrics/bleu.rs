use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ngrams;
use crate::error::{Error, Result};

/// Corpus-level BLEU components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Modified precisions for n = 1..=4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub score: f64,
}

/// Per-sample reference length closest to `hyp_len`; ties pick the shorter.
pub fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Clipped n-gram matches and hypothesis n-gram count for one sample.
pub fn clipped_counts(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let hyp_counts = ngrams(hyp, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let matched = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    let total = hyp.len().saturating_sub(n - 1);
    (matched, total)
}

/// Corpus BLEU-4 without smoothing; any zero precision gives 0.
pub fn bleu4_stats(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<BleuStats> {
    if hyps.is_empty() {
        return Err(Error::Contract("BLEU of an empty corpus".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c, mut r) = (0, 0);
    for (h, rs) in hyps.iter().zip(refs) {
        for n in 1..=4 {
            let (m, t) = clipped_counts(h, rs, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        c += h.len();
        r += closest_ref_len(h.len(), rs);
    }
    let precisions = std::array::from_fn(|i| {
        if total[i] == 0 {
            0.0
        } else {
            matched[i] as f64 / total[i] as f64
        }
    });
    let brevity_penalty = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp()
    };
    Ok(BleuStats {
        precisions,
        brevity_penalty,
        hypothesis_length: c,
        reference_length: r,
        score,
    })
}

pub fn bleu4(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(bleu4_stats(hyps, refs)?.score)
}
