use rand::seq::index::sample;
use rand::seq::SliceRandom;

use super::{Caption, Example, TextError, TokenId};
use crate::numcore::Tensor;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairKind {
    Real,
    Fake,
    Wrong,
}

/// A batch of (image feature, caption) pairs of one kind.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub kind: PairKind,
    /// `d x B`, one feature per column.
    pub features: Tensor,
    /// `B` rows of exactly `t_max` ids, PAD after the caption.
    pub captions: Vec<Vec<TokenId>>,
    /// Unpadded caption lengths.
    pub lengths: Vec<usize>,
    /// Image each feature column belongs to.
    pub feature_image_ids: Vec<u64>,
    /// Image each caption was written for (or generated from).
    pub caption_image_ids: Vec<u64>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn feature(&self, col: usize) -> Vec<f64> {
        let (d, b) = self.features.dims2();
        (0..d).map(|r| self.features.data()[r * b + col]).collect()
    }

    pub fn features_by_column(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|c| self.feature(c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTriple {
    pub real: PairBatch,
    pub fake: PairBatch,
    pub wrong: PairBatch,
}

fn feature_matrix(examples: &[&Example]) -> Tensor {
    let d = examples[0].feature.len();
    let b = examples.len();
    let mut data = vec![0.0; d * b];
    for (c, ex) in examples.iter().enumerate() {
        for (r, v) in ex.feature.iter().enumerate() {
            data[r * b + c] = *v;
        }
    }
    Tensor::matrix(d, b, data).expect("consistent feature dims")
}

fn batch(
    kind: PairKind,
    examples: &[&Example],
    captions: &[&Caption],
    caption_ids: Vec<u64>,
    t_max: usize,
) -> PairBatch {
    PairBatch {
        kind,
        features: feature_matrix(examples),
        captions: captions.iter().map(|c| c.padded(t_max)).collect(),
        lengths: captions.iter().map(|c| c.len().min(t_max)).collect(),
        feature_image_ids: examples.iter().map(|e| e.image_id).collect(),
        caption_image_ids: caption_ids,
    }
}

/// Uniformly random permutation of `0..n` with no fixed point (`n >= 2`),
/// by rejection from uniform shuffles.
pub fn sample_derangement(n: usize, rng: &mut SeededRng) -> Result<Vec<usize>, TextError> {
    if n < 2 {
        return Err(TextError::Config("a derangement needs at least two rows".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Builds the three pair kinds for a fixed set of examples.
///
/// Real pairs use one uniformly chosen reference per example; `fakes[i]` is
/// the generated caption for `examples[i]`; wrong pairs move the real
/// captions through a random derangement so no caption keeps its image.
pub fn assemble_pairs(
    examples: &[&Example],
    fakes: &[Caption],
    t_max: usize,
    rng: &mut SeededRng,
) -> Result<PairTriple, TextError> {
    if examples.len() < 2 {
        return Err(TextError::Config("pair batches need at least two examples to form wrong pairs".into()));
    }
    if fakes.len() != examples.len() {
        return Err(TextError::Config(format!("{} fake captions for {} examples", fakes.len(), examples.len())));
    }
    let real_caps: Vec<&Caption> = examples.iter().map(|e| &e.references[rng.below(e.references.len())]).collect();
    let ids: Vec<u64> = examples.iter().map(|e| e.image_id).collect();
    let perm = sample_derangement(examples.len(), rng)?;
    let wrong_caps: Vec<&Caption> = perm.iter().map(|&j| real_caps[j]).collect();
    let wrong_ids: Vec<u64> = perm.iter().map(|&j| ids[j]).collect();
    let fake_refs: Vec<&Caption> = fakes.iter().collect();
    Ok(PairTriple {
        real: batch(PairKind::Real, examples, &real_caps, ids.clone(), t_max),
        fake: batch(PairKind::Fake, examples, &fake_refs, ids, t_max),
        wrong: batch(PairKind::Wrong, examples, &wrong_caps, wrong_ids, t_max),
    })
}

/// Samples `batch_size` distinct examples and assembles real, fake and wrong
/// pairs. `sampler` produces one generated caption per chosen example.
pub fn make_pair_batches<F>(
    data: &[Example],
    mut sampler: F,
    batch_size: usize,
    t_max: usize,
    rng: &mut SeededRng,
) -> Result<PairTriple, TextError>
where
    F: FnMut(&[&Example], &mut SeededRng) -> Result<Vec<Caption>, TextError>,
{
    if batch_size < 2 {
        return Err(TextError::Config("batch_size 1 cannot form a wrong pair".into()));
    }
    if batch_size > data.len() {
        return Err(TextError::Config(format!(
            "batch_size {batch_size} exceeds dataset size {}",
            data.len()
        )));
    }
    let picks: Vec<&Example> = sample(rng, data.len(), batch_size).into_iter().map(|i| &data[i]).collect();
    let fakes = sampler(&picks, rng)?;
    assemble_pairs(&picks, &fakes, t_max, rng)
}
