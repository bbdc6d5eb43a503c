pub const BETA: f64 = 1.2;

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure against one reference.
pub fn rouge_l_single(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    let b2 = BETA * BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Best ROUGE-L F-measure over the references.
pub fn rouge_l(hyp: &[String], refs: &[Vec<String>]) -> f64 {
    refs.iter()
        .map(|r| rouge_l_single(hyp, r))
        .fold(0.0, f64::max)
}
