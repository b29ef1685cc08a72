//! Seeded synthetic classification sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;
use crate::svmio::Dataset;

fn point_in_annulus(rng: &mut ChaCha8Rng, inner: f64, outer: f64) -> Vec<f64> {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    // uniform in area
    let r = (inner * inner + rng.random::<f64>() * (outer * outer - inner * inner)).sqrt();
    vec![r * theta.cos(), r * theta.sin()]
}

/// `n` points in the plane, half uniform in the unit disc (label 0) and half
/// uniform in the annulus `1.5 <= r <= 2.5` (label 1).
pub fn annulus<T: Scalar>(n: usize, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (label, p) = if i % 2 == 0 { (0, point_in_annulus(&mut rng, 0.0, 1.0)) } else { (1, point_in_annulus(&mut rng, 1.5, 2.5)) };
        features.push(p.into_iter().map(T::lit).collect());
        labels.push(label);
    }
    Dataset::from_raw(features, labels).expect("well-formed synthetic data")
}

/// `n` points in `dim` dimensions from `classes` unit-variance Gaussian blobs
/// whose centres sit at distance `spread` along distinct axes.
pub fn blobs<T: Scalar>(n: usize, dim: usize, classes: usize, spread: f64, seed: u64) -> Dataset<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let row = (0..dim)
            .map(|k| {
                let centre = if k == c % dim { spread } else { 0.0 };
                T::lit(centre + rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        features.push(row);
        labels.push(c as i64);
    }
    Dataset::from_raw(features, labels).expect("well-formed synthetic data")
}
