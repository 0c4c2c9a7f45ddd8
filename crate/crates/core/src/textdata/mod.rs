//! Text side of the pipeline: vocabulary, captions, datasets and the
//! real/fake/wrong pair batches the discriminators train on.

mod batch;
mod jsonl;
mod synthetic;
mod vocab;

pub use batch::{assemble_pairs, make_pair_batches, sample_derangement, PairBatch, PairKind, PairTriple};
pub use jsonl::{load_jsonl_dataset, write_jsonl_dataset, RawExample};
pub use synthetic::{gen_synthetic_dataset, gen_synthetic_scenes, GrammarSpec, Scene};
pub use vocab::{tokenize, Caption, TokenId, Vocabulary, BOS, DEFAULT_T_MAX, EOS, PAD, SPECIAL_TOKENS, UNK};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("corpus produced an empty vocabulary")]
    EmptyVocabulary,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grammar spec error: {0}")]
    Spec(String),
    #[error("{path}: line {line}: parse error: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: line {line}: schema error: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One image with its feature vector and encoded reference captions.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image_id: u64,
    pub feature: Vec<f64>,
    pub references: Vec<Caption>,
}

/// Encodes raw examples against a vocabulary.
pub fn encode_examples(raw: &[RawExample], vocab: &Vocabulary, t_max: usize) -> Result<Vec<Example>, TextError> {
    let mut dim = None;
    raw.iter()
        .map(|r| {
            if r.captions.is_empty() {
                return Err(TextError::Config(format!("image {} has no reference captions", r.image_id)));
            }
            if r.feature.iter().any(|v| !v.is_finite()) {
                return Err(TextError::Config(format!("image {} has a non-finite feature", r.image_id)));
            }
            match dim {
                None => dim = Some(r.feature.len()),
                Some(d) if d != r.feature.len() => {
                    return Err(TextError::Config(format!(
                        "image {} has feature dimension {} (expected {d})",
                        r.image_id,
                        r.feature.len()
                    )))
                }
                _ => {}
            }
            Ok(Example {
                image_id: r.image_id,
                feature: r.feature.clone(),
                references: r.captions.iter().map(|c| vocab.encode(c, t_max)).collect(),
            })
        })
        .collect()
}

/// All reference captions of a dataset, for vocabulary construction.
pub fn caption_corpus(raw: &[RawExample]) -> Vec<&str> {
    raw.iter().flat_map(|r| r.captions.iter().map(String::as_str)).collect()
}
