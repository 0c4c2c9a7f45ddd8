use super::ngram::NGramCounts;
use super::MetricError;
use crate::textdata::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BleuLevel {
    /// Pools clipped matches and lengths over the whole corpus; unsmoothed.
    Corpus,
    /// Mean of per-sentence scores with add-one smoothing on higher orders.
    Sentence,
}

/// Sufficient statistics of one candidate against its references.
#[derive(Clone, Debug, Default, PartialEq)]
struct BleuStats {
    matches: [usize; 4],
    totals: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn add(&mut self, other: &BleuStats) {
        for k in 0..4 {
            self.matches[k] += other.matches[k];
            self.totals[k] += other.totals[k];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }
}

fn stats(cand: &[TokenId], refs: &[Vec<TokenId>], n: usize) -> BleuStats {
    let cc = NGramCounts::new(cand);
    let rc: Vec<NGramCounts> = refs.iter().map(|r| NGramCounts::new(r)).collect();
    let mut s = BleuStats { cand_len: cand.len(), ..Default::default() };
    for k in 1..=n {
        for (gram, &count) in cc.order(k) {
            let max_ref = rc.iter().map(|r| r.order(k).get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            s.matches[k - 1] += count.min(max_ref);
        }
        s.totals[k - 1] = cc.total(k);
    }
    // closest reference length, ties toward the shorter one
    s.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(cand.len()), len))
        .unwrap_or(0);
    s
}

fn combine(s: &BleuStats, n: usize, smooth: bool) -> f64 {
    if s.cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        let (m, t) = (s.matches[k], s.totals[k]);
        let p = if m > 0 {
            m as f64 / t as f64
        } else if smooth && k > 0 {
            1.0 / (t as f64 + 1.0)
        } else {
            return 0.0;
        };
        log_sum += p.ln();
    }
    let bp = if s.cand_len > s.ref_len { 1.0 } else { (1.0 - s.ref_len as f64 / s.cand_len as f64).exp() };
    bp * (log_sum / n as f64).exp()
}

fn check_order(n: usize) -> Result<(), MetricError> {
    if !(1..=4).contains(&n) {
        return Err(MetricError::Config(format!("BLEU order must be in 1..=4, got {n}")));
    }
    Ok(())
}

/// Smoothed BLEU-`n` of one sentence.
pub fn sentence_bleu(cand: &[TokenId], refs: &[Vec<TokenId>], n: usize) -> Result<f64, MetricError> {
    check_order(n)?;
    if refs.is_empty() {
        return Err(MetricError::Config("empty reference set".into()));
    }
    Ok(combine(&stats(cand, refs, n), n, true))
}

/// BLEU-`n` over parallel lists of candidates and reference sets.
pub fn bleu(cands: &[Vec<TokenId>], refsets: &[Vec<Vec<TokenId>>], n: usize, level: BleuLevel) -> Result<f64, MetricError> {
    check_order(n)?;
    if cands.len() != refsets.len() {
        return Err(MetricError::Config(format!("{} candidates for {} reference sets", cands.len(), refsets.len())));
    }
    if refsets.iter().any(Vec::is_empty) {
        return Err(MetricError::Config("empty reference set".into()));
    }
    if cands.is_empty() {
        return Ok(0.0);
    }
    match level {
        BleuLevel::Corpus => {
            let mut total = BleuStats::default();
            for (c, r) in cands.iter().zip(refsets) {
                total.add(&stats(c, r, n));
            }
            Ok(combine(&total, n, false))
        }
        BleuLevel::Sentence => {
            let sum: f64 = cands.iter().zip(refsets).map(|(c, r)| combine(&stats(c, r, n), n, true)).sum();
            Ok(sum / cands.len() as f64)
        }
    }
}
