use std::collections::{BTreeMap, BTreeSet};

use super::ngram::{NGram, NGramCounts, MAX_N};
use crate::textdata::TokenId;

/// Gaussian length-penalty width of CIDEr-D.
pub const CIDER_D_SIGMA: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CiderVariant {
    Plain,
    D,
}

/// Document frequencies over images: an n-gram counts once per image no
/// matter how many of its references contain it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdfTable {
    df: [BTreeMap<NGram, usize>; MAX_N],
    num_images: usize,
}

impl IdfTable {
    /// `reference_corpus[i]` holds the references (content tokens) of image `i`.
    pub fn build(reference_corpus: &[Vec<Vec<TokenId>>]) -> Self {
        let mut df: [BTreeMap<NGram, usize>; MAX_N] = Default::default();
        for refs in reference_corpus {
            let counts: Vec<NGramCounts> = refs.iter().map(|r| NGramCounts::new(r)).collect();
            for (k, table) in df.iter_mut().enumerate() {
                let unique: BTreeSet<&NGram> = counts.iter().flat_map(|c| c.order(k + 1).keys()).collect();
                for gram in unique {
                    *table.entry(gram.clone()).or_default() += 1;
                }
            }
        }
        Self { df, num_images: reference_corpus.len() }
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn df(&self, gram: &[TokenId]) -> usize {
        self.df[gram.len() - 1].get(gram).copied().unwrap_or(0)
    }

    /// `ln(N / df)`, with unseen n-grams treated as `df = 1`.
    pub fn idf(&self, gram: &[TokenId]) -> f64 {
        let n = (self.num_images.max(1)) as f64;
        n.ln() - (self.df(gram).max(1) as f64).ln()
    }
}

struct TfIdf {
    vecs: Vec<BTreeMap<NGram, f64>>,
    sq_norms: Vec<f64>,
    len: usize,
}

fn tfidf(tokens: &[TokenId], idf: &IdfTable) -> TfIdf {
    let counts = NGramCounts::new(tokens);
    let mut vecs = Vec::with_capacity(MAX_N);
    let mut sq_norms = Vec::with_capacity(MAX_N);
    for n in 1..=MAX_N {
        let v: BTreeMap<NGram, f64> =
            counts.order(n).iter().map(|(g, &c)| (g.clone(), c as f64 * idf.idf(g))).collect();
        sq_norms.push(v.values().map(|x| x * x).sum());
        vecs.push(v);
    }
    TfIdf { vecs, sq_norms, len: tokens.len() }
}

fn similarity(cand: &TfIdf, reference: &TfIdf, variant: CiderVariant) -> [f64; MAX_N] {
    let mut out = [0.0; MAX_N];
    for k in 0..MAX_N {
        let mut val = 0.0;
        for (gram, &h) in &cand.vecs[k] {
            if let Some(&r) = reference.vecs[k].get(gram) {
                val += match variant {
                    CiderVariant::Plain => h * r,
                    CiderVariant::D => h.min(r) * r,
                };
            }
        }
        let norm = (cand.sq_norms[k] * reference.sq_norms[k]).sqrt();
        val = if norm != 0.0 { val / norm } else { 0.0 };
        if variant == CiderVariant::D {
            let delta = cand.len as f64 - reference.len as f64;
            val *= (-(delta * delta) / (2.0 * CIDER_D_SIGMA * CIDER_D_SIGMA)).exp();
        }
        out[k] = val;
    }
    out
}

/// CIDEr / CIDEr-D of one candidate: per-order tf-idf cosine averaged over
/// references, averaged over orders 1..=4, times 10.
pub fn cider(cand: &[TokenId], refs: &[Vec<TokenId>], idf: &IdfTable, variant: CiderVariant) -> f64 {
    if refs.is_empty() {
        return 0.0;
    }
    let c = tfidf(cand, idf);
    let mut per_order = [0.0; MAX_N];
    for r in refs {
        let sim = similarity(&c, &tfidf(r, idf), variant);
        for k in 0..MAX_N {
            per_order[k] += sim[k];
        }
    }
    let mean: f64 = per_order.iter().sum::<f64>() / MAX_N as f64;
    mean / refs.len() as f64 * 10.0
}
