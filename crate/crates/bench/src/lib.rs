//! Input builders shared by the benchmarks.

use gumbel_mmt::data::{self, Example};
use gumbel_mmt::{ModelConfig, SyntheticTaskSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::new([rows, cols], data).expect("shape matches data")
}

/// Desk-scale model and task used by the training benchmarks.
pub fn desk_setup() -> (ModelConfig, Vec<Example>) {
    let spec = SyntheticTaskSpec {
        n_train: 16,
        n_val: 1,
        n_test: 1,
        ..SyntheticTaskSpec::default()
    };
    let data = data::generate(&spec).expect("default task is valid");
    let cfg = ModelConfig {
        n_enc_layers: 2,
        n_dec_layers: 2,
        d_model: 64,
        d_ffn: 128,
        d_image: spec.d_image,
        n_regions: spec.n_regions,
        vocab_src: spec.src_vocab_size(),
        vocab_tgt: spec.tgt_vocab_size(),
        ..ModelConfig::default()
    };
    (cfg, data.train)
}
