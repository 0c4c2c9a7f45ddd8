use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::generator::{beam_search, greedy_batch, Generator};
use crate::metrics::{corpus_score, IdfTable, MetricId};
use crate::textdata::{Caption, Example};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Decodes every example and scores the captions corpus-level.
pub fn evaluate_generator(
    gen: &Generator,
    data: &[Example],
    metrics: &[MetricId],
    mode: DecodeMode,
    idf: &IdfTable,
) -> Result<(Vec<Caption>, BTreeMap<MetricId, f64>), TrainError> {
    let caps: Vec<Caption> = match mode {
        DecodeMode::Greedy => {
            let feats: Vec<&[f64]> = data.iter().map(|e| e.feature.as_slice()).collect();
            greedy_batch(gen, &feats)?.into_iter().map(|d| d.caption).collect()
        }
        DecodeMode::Beam(k) => data
            .par_iter()
            .map(|e| beam_search(gen, &e.feature, k).map(|d| d.caption))
            .collect::<Result<_, _>>()?,
    };
    let refs: Vec<Vec<Caption>> = data.iter().map(|e| e.references.clone()).collect();
    let mut scores = BTreeMap::new();
    for &m in metrics {
        scores.insert(m, corpus_score(m, &caps, &refs, idf)?);
    }
    Ok((caps, scores))
}
