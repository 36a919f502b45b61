//! Fixtures for the matching-network benchmarks.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtmm_core::pairs::{synth_dataset, SynthConfig, SynthDataset};
use vtmm_core::{MatchingNetwork, NetDims, SentenceEmbedder};

/// Full-size network with seeded Glorot weights.
pub fn network(seed: u64) -> MatchingNetwork {
    MatchingNetwork::new(NetDims::default(), seed).expect("default dims are valid")
}

/// `rows × cols` matrix of uniform values in [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Matching video and text batches sized for `net`.
pub fn batch(net: &MatchingNetwork, rows: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let dims = net.dims();
    (
        random_matrix(rows, dims.video_in, seed),
        random_matrix(rows, dims.text_in, seed + 1),
    )
}

/// Synthetic dataset plus an encoder over its precomputed text vectors.
pub fn synth(num_classes: usize, videos_per_class: usize) -> (SynthDataset, SentenceEmbedder) {
    let synth = synth_dataset(&SynthConfig {
        num_classes,
        videos_per_class,
        ..SynthConfig::default()
    })
    .expect("synthetic dataset");
    let table: HashMap<String, Vec<f64>> = synth.text_embeddings.clone().into_iter().collect();
    let encoder = SentenceEmbedder::precomputed(table).expect("embedding table");
    (synth, encoder)
}
