//! Conditional-GAN-augmented self-critical sequence training for image
//! captioning at desk scale.
//!
//! * [`numcore`]: reverse-mode autodiff, ADAM, gradient checking
//! * [`textdata`]: vocabulary, captions, synthetic scenes, JSONL datasets, pair batches
//! * [`metrics`]: BLEU-1..4, ROUGE-L, CIDEr, CIDEr-D
//! * [`generator`]: image-conditioned LSTM decoder with sampling, greedy, beam and ensemble decoding
//! * [`discriminator`]: CNN and RNN real/fake/wrong discriminators
//! * [`advtrain`]: combined reward, SCST updates, the alternating trainer and sweeps
//! * [`checkpoint`]: binary checkpoint format

pub mod advtrain;
pub mod checkpoint;
pub mod discriminator;
pub mod generator;
pub mod metrics;
pub mod numcore;
pub mod rng;
pub mod textdata;
