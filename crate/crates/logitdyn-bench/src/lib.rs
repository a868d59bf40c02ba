//! Shared state builders for the criterion benchmarks.

use logitdyn::{FeatureVector, OneHotLabel, ParameterMatrix, ProbVector, ScenarioConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Deterministic feature vector of the given dimension.
pub fn bench_features(d: usize, seed: u64) -> FeatureVector {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    FeatureVector::new(
        (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .expect("finite draws")
}

/// Deterministic weight matrix scaled so logits stay in a moderate range.
pub fn bench_weights(v: usize, d: usize, seed: u64) -> ParameterMatrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let scale = 0.5 / (d as f64).sqrt();
    let data: Vec<f64> = (0..v * d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParameterMatrix::from_vec(data, v, d).expect("finite entries")
}

/// Deterministic interior probability vector.
pub fn bench_probs(v: usize, seed: u64) -> ProbVector {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|x| x / total).collect()).expect("valid simplex point")
}

pub fn bench_label(index: usize, v: usize) -> OneHotLabel {
    OneHotLabel::new(index, v).expect("valid label")
}

/// A cut-down scenario that exercises the full pipeline quickly.
pub fn reduced_scenario() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::squeeze_toy();
    cfg.d = 200;
    cfg.sft_epochs = 5;
    cfg.post_steps = 10;
    cfg
}
