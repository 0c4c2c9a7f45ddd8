use crate::textdata::TokenId;

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure with `beta = 1.2`, maximized over references.
pub fn rouge_l(cand: &[TokenId], refs: &[Vec<TokenId>]) -> f64 {
    refs.iter()
        .map(|r| {
            if cand.is_empty() || r.is_empty() {
                return 0.0;
            }
            let lcs = lcs_len(cand, r);
            if lcs == 0 {
                return 0.0;
            }
            let p = lcs as f64 / cand.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            ((1.0 + b2) * p * rec) / (rec + b2 * p)
        })
        .fold(0.0, f64::max)
}
