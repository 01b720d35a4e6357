//! Analytic backward passes against central finite differences.

mod common;

use common::gradcheck::{check_layers, check_model, GRAD_TOL};
use noma_beam::cnn::{ArchConfig, Encoding, PoolDivisor};

#[test]
fn layers_match_finite_differences_on_random_shapes() {
    for seed in 0..20 {
        let err = check_layers(seed);
        assert!(err <= GRAD_TOL, "shape seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn full_model_matches_finite_differences_on_reference_geometries() {
    let arch = ArchConfig {
        channels: 4,
        blocks: 4,
        ..ArchConfig::default()
    };
    for (enc, seed) in [(Encoding::Tcnn, 1), (Encoding::Fcnn, 2)] {
        let err = check_model(enc, 4, 3, arch, 3, seed);
        assert!(err <= GRAD_TOL, "{enc}: max relative error {err:e}");
    }
}

#[test]
fn full_model_with_valid_count_pooling() {
    let arch = ArchConfig {
        channels: 3,
        blocks: 2,
        pool_divisor: PoolDivisor::ValidCount,
        ..ArchConfig::default()
    };
    let err = check_model(Encoding::Fcnn, 2, 2, arch, 4, 5);
    assert!(err <= GRAD_TOL, "max relative error {err:e}");
}
