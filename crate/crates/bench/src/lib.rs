//! Deterministic inputs shared by the benchmarks.

use aliasfree::nn::FeatureMap;
use ndarray::{Array1, Array2, Array3};

/// A sum of incommensurate sinusoids, different in every channel.
pub fn test_signal(channels: usize, time: usize) -> FeatureMap {
    FeatureMap::new(Array2::from_shape_fn((channels, time), |(c, t)| {
        let t = t as f64;
        0.05 * ((0.031 + 0.007 * c as f64) * t).sin() + 0.02 * (0.4137 * t + c as f64).sin()
    }))
    .expect("nonempty")
}

pub fn weights3(a: usize, b: usize, k: usize) -> Array3<f64> {
    Array3::from_shape_fn((a, b, k), |(i, j, l)| (((i * 31 + j * 7 + l) % 13) as f64 - 6.0) / (6.0 * (b * k) as f64))
}

pub fn weights2(a: usize, b: usize) -> Array2<f64> {
    Array2::from_shape_fn((a, b), |(i, j)| (((i * 5 + j * 3) % 11) as f64 - 5.0) / (5.0 * b as f64))
}

pub fn bias(n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |i| 0.001 * i as f64)
}
