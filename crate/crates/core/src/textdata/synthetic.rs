//! Desk-scale stand-in for an image-caption corpus.
//!
//! Each "image" is a latent scene `(subject, attribute, relation, object)`.
//! Its feature vector is a fixed block-diagonal random projection of the
//! one-hot scene encoding plus Gaussian noise: the feature dimensions are
//! split into four contiguous blocks and each scene slot only writes into
//! its own block. References are filled-in sentence templates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{RawExample, TextError};
use crate::rng::SeededRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarSpec {
    pub subjects: Vec<String>,
    pub attributes: Vec<String>,
    pub relations: Vec<String>,
    pub objects: Vec<String>,
    /// Sentence templates with `{S}`, `{A}`, `{R}` and `{O}` slots.
    pub templates: Vec<String>,
    pub refs_per_scene: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    /// Seeds the projection, independently of the dataset seed, so that
    /// splits drawn with different seeds share one feature space.
    pub projection_seed: u64,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for GrammarSpec {
    fn default() -> Self {
        Self {
            subjects: words(&["cat", "dog", "man", "woman", "boy", "girl", "bird", "horse", "cow", "sheep"]),
            attributes: words(&["red", "small", "big", "black", "white", "young", "old", "brown"]),
            relations: words(&[
                "sitting on",
                "next to",
                "under",
                "behind",
                "near",
                "looking at",
                "in front of",
                "walking past",
                "standing by",
            ]),
            objects: words(&[
                "table", "car", "tree", "bench", "bed", "fence", "chair", "boat", "wall", "house", "road", "field",
            ]),
            templates: words(&[
                "a {A} {S} {R} the {O}",
                "the {A} {S} is {R} a {O}",
                "a {S} that is {A} {R} a {O}",
                "there is a {A} {S} {R} the {O}",
                "the {S} {R} the {O}",
                "a photo of a {A} {S} {R} a {O}",
            ]),
            refs_per_scene: 5,
            feature_dim: 64,
            noise_std: 0.1,
            projection_seed: 1234,
        }
    }
}

/// Indices into the four symbol sets of a [`GrammarSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Scene {
    pub subject: usize,
    pub attribute: usize,
    pub relation: usize,
    pub object: usize,
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<(), TextError> {
        let sets = [
            ("subjects", &self.subjects),
            ("attributes", &self.attributes),
            ("relations", &self.relations),
            ("objects", &self.objects),
            ("templates", &self.templates),
        ];
        for (name, set) in sets {
            if set.is_empty() {
                return Err(TextError::Spec(format!("{name} must not be empty")));
            }
            if set.iter().any(|s| s.trim().is_empty()) {
                return Err(TextError::Spec(format!("{name} contains a blank entry")));
            }
        }
        if self.refs_per_scene == 0 {
            return Err(TextError::Spec("refs_per_scene must be at least 1".into()));
        }
        if self.feature_dim < 4 {
            return Err(TextError::Spec("feature_dim must be at least 4 (one block per scene slot)".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(TextError::Spec("noise_std must be a finite non-negative number".into()));
        }
        Ok(())
    }

    fn set_sizes(&self) -> [usize; 4] {
        [self.subjects.len(), self.attributes.len(), self.relations.len(), self.objects.len()]
    }

    /// Feature range `[start, end)` written by scene slot `slot` (0..4 for
    /// subject, attribute, relation, object).
    pub fn block_range(&self, slot: usize) -> std::ops::Range<usize> {
        let base = self.feature_dim / 4;
        let start = slot * base;
        let end = if slot == 3 { self.feature_dim } else { start + base };
        start..end
    }

    /// Per-slot projection matrices, `block_len x set_size`, row-major.
    fn projection(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.projection_seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..4)
            .map(|slot| {
                let rows = self.block_range(slot).len();
                let cols = self.set_sizes()[slot];
                (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
            })
            .collect()
    }

    /// Noise-free feature of a scene.
    pub fn clean_feature(&self, scene: &Scene) -> Vec<f64> {
        self.feature_with(&self.projection(), scene)
    }

    fn feature_with(&self, proj: &[Vec<f64>], scene: &Scene) -> Vec<f64> {
        let picks = [scene.subject, scene.attribute, scene.relation, scene.object];
        let sizes = self.set_sizes();
        let mut out = vec![0.0; self.feature_dim];
        for slot in 0..4 {
            let range = self.block_range(slot);
            for (r, dim) in range.enumerate() {
                out[dim] = proj[slot][r * sizes[slot] + picks[slot]];
            }
        }
        out
    }

    /// Fills template `t` for a scene.
    pub fn render(&self, template: usize, scene: &Scene) -> String {
        self.templates[template]
            .replace("{S}", &self.subjects[scene.subject])
            .replace("{A}", &self.attributes[scene.attribute])
            .replace("{R}", &self.relations[scene.relation])
            .replace("{O}", &self.objects[scene.object])
    }
}

/// Draws `n` scenes and their examples. Deterministic in `(spec, n, seed)`.
pub fn gen_synthetic_scenes(spec: &GrammarSpec, n: usize, seed: u64) -> Result<Vec<(Scene, RawExample)>, TextError> {
    spec.validate()?;
    if n == 0 {
        return Err(TextError::Spec("n must be at least 1".into()));
    }
    let proj = spec.projection();
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut rng = SeededRng::from_seed(seed);
    let sizes = spec.set_sizes();
    let mut out = Vec::with_capacity(n);
    for image_id in 0..n {
        let scene = Scene {
            subject: rng.below(sizes[0]),
            attribute: rng.below(sizes[1]),
            relation: rng.below(sizes[2]),
            object: rng.below(sizes[3]),
        };
        let mut feature = spec.feature_with(&proj, &scene);
        if spec.noise_std > 0.0 {
            for v in feature.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        let k = spec.refs_per_scene;
        let templates: Vec<usize> = if k <= spec.templates.len() {
            sample(&mut rng, spec.templates.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.below(spec.templates.len())).collect()
        };
        let captions = templates.iter().map(|&t| spec.render(t, &scene)).collect();
        out.push((scene, RawExample { image_id: image_id as u64, feature, captions }));
    }
    Ok(out)
}

pub fn gen_synthetic_dataset(spec: &GrammarSpec, n: usize, seed: u64) -> Result<Vec<RawExample>, TextError> {
    Ok(gen_synthetic_scenes(spec, n, seed)?.into_iter().map(|(_, ex)| ex).collect())
}
