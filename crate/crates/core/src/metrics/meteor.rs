//! METEOR restricted to exact and stem matching (no synonym stage).

use rust_stemmers::{Algorithm, Stemmer};

pub const ALPHA_WEIGHT: f64 = 9.0;
pub const GAMMA: f64 = 0.5;
pub const BETA: f64 = 3.0;

/// Snowball English stem of a lowercase word.
pub fn stem(word: &str) -> String {
    Stemmer::create(Algorithm::English).stem(word).into_owned()
}

/// Word alignment between hypothesis and reference positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `(hyp_index, ref_index)` pairs sorted by hypothesis index.
    pub pairs: Vec<(usize, usize)>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.pairs.len()
    }

    /// Maximal runs adjacent in both hypothesis and reference.
    pub fn chunks(&self) -> usize {
        if self.pairs.is_empty() {
            return 0;
        }
        1 + self
            .pairs
            .windows(2)
            .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
            .count()
    }
}

/// Exact stage, then stem stage on the leftovers. Within a stage each
/// hypothesis word takes the reference position that continues the previous
/// word's match if possible, else the leftmost free one.
pub fn align(hyp: &[String], reference: &[String]) -> Alignment {
    let stemmer = Stemmer::create(Algorithm::English);
    let hyp_stems: Vec<String> = hyp.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    let ref_stems: Vec<String> = reference
        .iter()
        .map(|w| stemmer.stem(w).into_owned())
        .collect();
    let mut hyp_to_ref: Vec<Option<usize>> = vec![None; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let stages: [(&[String], &[String]); 2] = [(hyp, reference), (&hyp_stems, &ref_stems)];
    for (hs, rs) in stages {
        for i in 0..hs.len() {
            if hyp_to_ref[i].is_some() {
                continue;
            }
            let free = |j: usize| !ref_used[j] && hs[i] == rs[j];
            let continued = i
                .checked_sub(1)
                .and_then(|p| hyp_to_ref[p])
                .map(|j| j + 1)
                .filter(|&j| j < rs.len() && free(j));
            if let Some(j) = continued.or_else(|| (0..rs.len()).find(|&j| free(j))) {
                hyp_to_ref[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }
    Alignment {
        pairs: hyp_to_ref
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
            .collect(),
    }
}

/// METEOR-lite against one reference.
pub fn meteor_single(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(hyp, reference);
    let m = a.matches();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = (1.0 + ALPHA_WEIGHT) * p * r / (r + ALPHA_WEIGHT * p);
    let penalty = GAMMA * (a.chunks() as f64 / m as f64).powf(BETA);
    f_mean * (1.0 - penalty)
}

/// Best METEOR-lite score over the references.
pub fn meteor_lite(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter()
        .map(|r| meteor_single(hyp, r))
        .fold(0.0, f64::max)
}
