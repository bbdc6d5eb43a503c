//! Caption metrics: corpus BLEU-4, ROUGE-L, METEOR-lite and CIDEr-D.
//!
//! All text goes through [`crate::vocab::normalize_tokens`] first.

pub mod bleu;
pub mod cider;
pub mod meteor;
pub mod rouge;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bleu::{bleu4, bleu4_stats, BleuStats};
pub use cider::{cider_d, cider_d_per_sample};
pub use meteor::{meteor_lite, stem};
pub use rouge::{lcs_len, rouge_l};

use crate::error::{Error, Result};
use crate::vocab::normalize_tokens;

/// Counts of contiguous `n`-grams.
pub fn ngrams(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || words.len() < n {
        return out;
    }
    for w in words.windows(n) {
        *out.entry(w).or_default() += 1;
    }
    out
}

/// Normalized tokens plus the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCaption {
    pub text: String,
    pub tokens: Vec<String>,
}

impl TokenizedCaption {
    pub fn new(text: &str) -> Self {
        Self {
            text: text.to_string(),
            tokens: normalize_tokens(text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub bleu: String,
    pub meteor: String,
    pub cider: String,
    pub tokenization: String,
}

impl Default for ReportMeta {
    fn default() -> Self {
        Self {
            bleu: "corpus BLEU-4, closest reference length, no smoothing".into(),
            meteor:
                "meteor_lite: exact + Snowball-stem stages, no synonyms; alpha=0.9 beta=3 gamma=0.5"
                    .into(),
            cider: "CIDEr-D, sigma=6, clipped, x10".into(),
            tokenization: "lowercase, punctuation to spaces, whitespace split".into(),
        }
    }
}

/// Corpus scores in their native ranges (BLEU, ROUGE-L, METEOR in `[0, 1]`,
/// CIDEr in `[0, 10]`); `avg` is on the 0–100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    pub avg: f64,
    pub samples: usize,
    pub per_sample: Vec<SampleScores>,
    pub meta: ReportMeta,
}

/// Mean of the four scores, each multiplied by 100.
pub fn average_score(bleu4: f64, rouge_l: f64, meteor: f64, cider: f64) -> f64 {
    100.0 * (bleu4 + rouge_l + meteor + cider) / 4.0
}

pub fn evaluate_tokens(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<EvalReport> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    let bleu4 = bleu4(hyps, refs)?;
    let ciders = cider_d_per_sample(hyps, refs)?;
    let per_sample: Vec<SampleScores> = hyps
        .iter()
        .zip(refs)
        .zip(&ciders)
        .map(|((h, rs), &cider)| SampleScores {
            rouge_l: rouge_l(h, rs),
            meteor: meteor_lite(h, rs),
            cider,
        })
        .collect();
    let n = per_sample.len() as f64;
    let rouge = per_sample.iter().map(|s| s.rouge_l).sum::<f64>() / n;
    let meteor = per_sample.iter().map(|s| s.meteor).sum::<f64>() / n;
    let cider = ciders.iter().sum::<f64>() / n;
    Ok(EvalReport {
        bleu4,
        rouge_l: rouge,
        meteor,
        cider,
        avg: average_score(bleu4, rouge, meteor, cider),
        samples: per_sample.len(),
        per_sample,
        meta: ReportMeta::default(),
    })
}

/// Scores raw hypothesis strings against raw reference strings.
pub fn evaluate_corpus<S: AsRef<str>>(hyps: &[S], refs: &[Vec<S>]) -> Result<EvalReport> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| normalize_tokens(s.as_ref())).collect();
    let r: Vec<Vec<Vec<String>>> = refs
        .iter()
        .map(|rs| rs.iter().map(|s| normalize_tokens(s.as_ref())).collect())
        .collect();
    evaluate_tokens(&h, &r)
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub video_id: String,
    pub hypothesis: String,
    pub references: Vec<String>,
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json("results record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("results line {}", i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}

/// Evaluates a results file.
pub fn evaluate_records(records: &[ResultRecord]) -> Result<EvalReport> {
    let hyps: Vec<&str> = records.iter().map(|r| r.hypothesis.as_str()).collect();
    let refs: Vec<Vec<&str>> = records
        .iter()
        .map(|r| r.references.iter().map(String::as_str).collect())
        .collect();
    evaluate_corpus(&hyps, &refs)
}
