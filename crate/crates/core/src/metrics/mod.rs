//! Caption evaluators: BLEU-1..4, ROUGE-L, CIDEr and CIDEr-D.
//!
//! All metrics work on content token ids (see [`Caption::words`]), so they
//! are invariant under any consistent relabeling of the vocabulary.

mod bleu;
mod cider;
mod ngram;
mod rouge;

pub use bleu::{bleu, sentence_bleu, BleuLevel};
pub use cider::{cider, CiderVariant, IdfTable, CIDER_D_SIGMA};
pub use ngram::{NGram, NGramCounts, MAX_N};
pub use rouge::{lcs_len, rouge_l, ROUGE_BETA};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textdata::{Caption, Example, TokenId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric configuration error: {0}")]
    Config(String),
    #[error("metric {0} is not supported (needs external resources)")]
    Unsupported(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "BLEU1")]
    Bleu1,
    #[serde(rename = "BLEU2")]
    Bleu2,
    #[serde(rename = "BLEU3")]
    Bleu3,
    #[serde(rename = "BLEU4")]
    Bleu4,
    #[serde(rename = "ROUGE_L")]
    RougeL,
    #[serde(rename = "CIDER")]
    Cider,
    #[serde(rename = "CIDER_D")]
    CiderD,
}

impl Default for MetricId {
    fn default() -> Self {
        MetricId::CiderD
    }
}

impl MetricId {
    pub const ALL: [MetricId; 7] = [
        MetricId::Bleu1,
        MetricId::Bleu2,
        MetricId::Bleu3,
        MetricId::Bleu4,
        MetricId::RougeL,
        MetricId::Cider,
        MetricId::CiderD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Bleu1 => "BLEU1",
            MetricId::Bleu2 => "BLEU2",
            MetricId::Bleu3 => "BLEU3",
            MetricId::Bleu4 => "BLEU4",
            MetricId::RougeL => "ROUGE_L",
            MetricId::Cider => "CIDER",
            MetricId::CiderD => "CIDER_D",
        }
    }

    fn bleu_order(self) -> Option<usize> {
        match self {
            MetricId::Bleu1 => Some(1),
            MetricId::Bleu2 => Some(2),
            MetricId::Bleu3 => Some(3),
            MetricId::Bleu4 => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        match norm.as_str() {
            "BLEU1" | "BLEU_1" => Ok(MetricId::Bleu1),
            "BLEU2" | "BLEU_2" => Ok(MetricId::Bleu2),
            "BLEU3" | "BLEU_3" => Ok(MetricId::Bleu3),
            "BLEU4" | "BLEU_4" => Ok(MetricId::Bleu4),
            "ROUGE_L" | "ROUGEL" => Ok(MetricId::RougeL),
            "CIDER" => Ok(MetricId::Cider),
            "CIDER_D" | "CIDERD" => Ok(MetricId::CiderD),
            "METEOR" | "SPICE" => Err(MetricError::Unsupported(norm)),
            _ => Err(MetricError::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Per-sentence score `s` of the chosen metric (smoothed BLEU for BLEU-n).
pub fn sentence_reward(cand: &Caption, refs: &[Caption], idf: &IdfTable, q: MetricId) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::Config("empty reference set".into()));
    }
    let c = cand.words();
    let r: Vec<Vec<TokenId>> = refs.iter().map(Caption::words).collect();
    Ok(sentence_score(&c, &r, idf, q))
}

fn sentence_score(cand: &[TokenId], refs: &[Vec<TokenId>], idf: &IdfTable, q: MetricId) -> f64 {
    match q {
        MetricId::RougeL => rouge_l(cand, refs),
        MetricId::Cider => cider(cand, refs, idf, CiderVariant::Plain),
        MetricId::CiderD => cider(cand, refs, idf, CiderVariant::D),
        bleu_q => sentence_bleu(cand, refs, bleu_q.bleu_order().expect("bleu metric")).expect("valid order"),
    }
}

/// Corpus-level score: pooled BLEU, mean sentence score for the others.
pub fn corpus_score(q: MetricId, cands: &[Caption], refsets: &[Vec<Caption>], idf: &IdfTable) -> Result<f64, MetricError> {
    if cands.len() != refsets.len() {
        return Err(MetricError::Config(format!("{} candidates for {} reference sets", cands.len(), refsets.len())));
    }
    if refsets.iter().any(Vec::is_empty) {
        return Err(MetricError::Config("empty reference set".into()));
    }
    let c: Vec<Vec<TokenId>> = cands.iter().map(Caption::words).collect();
    let r: Vec<Vec<Vec<TokenId>>> = refsets.iter().map(|rs| rs.iter().map(Caption::words).collect()).collect();
    if let Some(n) = q.bleu_order() {
        return bleu(&c, &r, n, BleuLevel::Corpus);
    }
    if c.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = c.iter().zip(&r).map(|(c, r)| sentence_score(c, r, idf, q)).sum();
    Ok(total / c.len() as f64)
}

/// IDF over the references of a dataset.
pub fn build_idf(examples: &[Example]) -> IdfTable {
    let corpus: Vec<Vec<Vec<TokenId>>> =
        examples.iter().map(|e| e.references.iter().map(Caption::words).collect()).collect();
    IdfTable::build(&corpus)
}

/// One line of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub split: String,
    pub metric: MetricId,
    pub level: String,
    pub value: f64,
}
