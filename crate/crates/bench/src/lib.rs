//! Shared fixtures for the criterion benchmarks.

use fqc_core::qconv::{ConvMode, QConvConfig, QConvLayer};
use fqc_core::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A seeded `size x size x channels` input with values in `[-1, 1)`.
pub fn random_input(size: usize, channels: usize, seed: u64) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..size * size * channels).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor3::new(size, size, channels, values).expect("shape matches value count")
}

/// Default 3x3, four-qubit layer over the given input shape.
pub fn layer(size: usize, channels: usize, mode: ConvMode, seed: u64) -> QConvLayer {
    let cfg = QConvConfig {
        mode,
        ..QConvConfig::new((size, size, channels), 4)
    };
    QConvLayer::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).expect("valid layer config")
}
