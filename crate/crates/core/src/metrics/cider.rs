//! CIDEr-D: TF-IDF n-gram cosine with clipping and a gaussian length
//! penalty, scaled by 10.

use std::collections::{HashMap, HashSet};

use super::ngrams;
use crate::error::{Error, Result};

pub const SIGMA: f64 = 6.0;
pub const MAX_N: usize = 4;

type Vectors<'a> = [HashMap<&'a [String], f64>; MAX_N];

struct Doc<'a> {
    vec: Vectors<'a>,
    norm: [f64; MAX_N],
    len: usize,
}

fn tfidf<'a>(words: &'a [String], df: &HashMap<&[String], usize>, log_n: f64) -> Doc<'a> {
    let mut vec: Vectors<'a> = Default::default();
    let mut norm = [0.0; MAX_N];
    for n in 1..=MAX_N {
        for (g, c) in ngrams(words, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            let w = c as f64 * (log_n - d.ln());
            norm[n - 1] += w * w;
            vec[n - 1].insert(g, w);
        }
        norm[n - 1] = norm[n - 1].sqrt();
    }
    Doc {
        vec,
        norm,
        len: words.len(),
    }
}

fn similarity(h: &Doc<'_>, r: &Doc<'_>) -> f64 {
    let delta = h.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..MAX_N {
        let mut val = 0.0;
        for (g, &wh) in &h.vec[n] {
            if let Some(&wr) = r.vec[n].get(g) {
                val += wh.min(wr) * wr;
            }
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= h.norm[n] * r.norm[n];
        } else {
            val = 0.0;
        }
        total += val * penalty;
    }
    total / MAX_N as f64
}

/// Per-sample CIDEr-D scores; document frequencies count samples whose
/// reference set contains the n-gram.
pub fn cider_d_per_sample(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<Vec<f64>> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Contract("CIDEr of an empty corpus".into()));
    }
    if hyps.len() < 2 {
        log::warn!("CIDEr-D document frequencies are degenerate for a single-sample corpus");
    }
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for rs in refs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in rs {
            for n in 1..=MAX_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_default() += 1;
        }
    }
    let log_n = (refs.len() as f64).ln();
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, rs)| {
            if rs.is_empty() {
                return 0.0;
            }
            let hd = tfidf(h, &df, log_n);
            let sum: f64 = rs
                .iter()
                .map(|r| similarity(&hd, &tfidf(r, &df, log_n)))
                .sum();
            10.0 * sum / rs.len() as f64
        })
        .collect())
}

/// Corpus CIDEr-D: mean of the per-sample scores.
pub fn cider_d(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    let s = cider_d_per_sample(hyps, refs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
