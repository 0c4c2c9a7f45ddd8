use advcap_core::advtrain::TrainConfig;
use advcap_core::generator::{GenConfig, Generator};
use advcap_core::numcore::Tensor;
use advcap_core::rng::SeededRng;
use advcap_core::textdata::{caption_corpus, encode_examples, gen_synthetic_dataset, Example, GrammarSpec, Vocabulary};
use rand::Rng;

pub fn uniform(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Entries with magnitude in `[lo, hi]` and random sign.
pub fn away_from_zero(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = lo + (hi - lo) * rng.uniform();
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn tiny_generator(seed: u64, vocab_size: usize, feature_dim: usize, hidden: usize, t_max: usize, scale: f64) -> Generator {
    let config = GenConfig { vocab_size, feature_dim, hidden, t_max };
    Generator::init(config, &mut SeededRng::from_seed(seed), scale).unwrap()
}

/// The synthetic caption corpus: vocabulary plus encoded train and
/// held-out splits.
pub fn corpus(spec: &GrammarSpec, train: usize, val: usize, min_count: usize) -> (Vocabulary, Vec<Example>, Vec<Example>) {
    let train_raw = gen_synthetic_dataset(spec, train, 1).unwrap();
    let val_raw = gen_synthetic_dataset(spec, val, 2).unwrap();
    let vocab = Vocabulary::build(&caption_corpus(&train_raw), min_count).unwrap();
    let t = encode_examples(&train_raw, &vocab, 16).unwrap();
    let v = encode_examples(&val_raw, &vocab, 16).unwrap();
    (vocab, t, v)
}

/// 500 train / 100 held-out images, d = 64, minimum word count 5.
pub fn desk_corpus() -> (Vocabulary, Vec<Example>, Vec<Example>) {
    corpus(&GrammarSpec::default(), 500, 100, 5)
}

/// A few dozen images with 16-dimensional features.
pub fn small_corpus() -> (Vocabulary, Vec<Example>, Vec<Example>) {
    corpus(&GrammarSpec { feature_dim: 16, ..GrammarSpec::default() }, 40, 12, 1)
}

/// Seconds-scale training run over [`small_corpus`].
pub fn small_config() -> TrainConfig {
    TrainConfig {
        hidden: 16,
        disc_hidden: 8,
        batch: 8,
        mle_epochs: 2,
        disc_epochs: 2,
        iterations: 6,
        eval_every: 2,
        patience: 0,
        eval_beam: 2,
        seed: 7,
        ..TrainConfig::default()
    }
}
