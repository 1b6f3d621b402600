//! Inputs shared by the benchmarks.

use adaseg::losses::LossConfig;
use adaseg::metrics::BinaryVolume;
use adaseg::{BatchPrediction, Model, ModelSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Batch of `n` slices with `k` structures, every third slot unannotated.
pub fn batch(n: usize, k: usize, side: usize, seed: u64) -> BatchPrediction {
    let mut r = rng(seed);
    let pixels = side * side;
    let preds = (0..n * k * pixels).map(|_| r.gen_range(0.01..0.99)).collect();
    let truths = (0..n * k)
        .map(|slot| (slot % 3 != 2).then(|| (0..pixels).map(|_| r.gen_bool(0.3) as u8).collect()))
        .collect();
    let indices = (0..n).map(|i| ("p0".to_string(), i)).collect();
    BatchPrediction::new(indices, k, pixels, preds, truths).expect("valid batch")
}

pub fn loss_config() -> LossConfig {
    LossConfig::default()
}

/// Two overlapping balls in a `d`×`side`×`side` volume.
pub fn volume_pair(d: usize, side: usize) -> (BinaryVolume, BinaryVolume) {
    let ball = |cx: f64, r: f64| {
        let mut v = Vec::with_capacity(d * side * side);
        for z in 0..d {
            for y in 0..side {
                for x in 0..side {
                    let c = side as f64 / 2.0;
                    let dz = (z as f64 - d as f64 / 2.0) * 2.0;
                    let dist = ((x as f64 - cx).powi(2) + (y as f64 - c).powi(2) + dz * dz).sqrt();
                    v.push((dist < r) as u8);
                }
            }
        }
        BinaryVolume::new((d, side, side), v).expect("valid volume")
    };
    let c = side as f64 / 2.0;
    (ball(c, side as f64 / 4.0), ball(c + 3.0, side as f64 / 4.5))
}

pub fn model(depth: usize, base_filters: usize, side: usize) -> Model {
    let spec = ModelSpec {
        depth,
        base_filters,
        out_channels: 3,
        input_size: (side, side),
        ..ModelSpec::default()
    };
    Model::build(spec, 0).expect("valid spec")
}

pub fn images(n: usize, side: usize, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..n * side * side).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec([n, 1, side, side], data).expect("valid tensor")
}
