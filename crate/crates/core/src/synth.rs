//! Seeded synthetic clouds for tests and benchmarks.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Attribute, SplatCloud};

/// Independent uniform attributes in typical raw ranges.
pub fn random_cloud(n: usize, sh_rest_dim: usize, seed: u64) -> SplatCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SplatCloud::from_columns(n, sh_rest_dim, |a| {
        (0..n * a.channels(sh_rest_dim))
            .map(|_| match a {
                Attribute::Position => rng.random_range(-10.0f32..10.0),
                Attribute::ShDc => rng.random_range(-2.0f32..4.0),
                Attribute::ShRest => rng.random_range(-1.0f32..1.0),
                Attribute::Opacity => rng.random_range(-6.0f32..12.0),
                Attribute::Scale => rng.random_range(-7.0f32..1.0),
                Attribute::Rotation => rng.random_range(-1.0f32..1.0),
            })
            .collect()
    })
    .expect("generated columns have consistent sizes")
}

/// Gaussians on a wavy surface whose attributes vary smoothly with position.
pub fn smooth_cloud(n: usize, sh_rest_dim: usize, seed: u64) -> SplatCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: [f32; 4] = [0.0; 4].map(|_| rng.random_range(0.0f32..std::f32::consts::TAU));
    let uv: Vec<(f32, f32)> = (0..n)
        .map(|_| (rng.random_range(-1.0f32..1.0), rng.random_range(-1.0f32..1.0)))
        .collect();
    let wave = |u: f32, v: f32, k: usize| (2.0 * u + phase[k]).sin() * (1.5 * v + phase[(k + 1) % 4]).cos();
    SplatCloud::from_columns(n, sh_rest_dim, |a| {
        let c = a.channels(sh_rest_dim);
        let mut out = Vec::with_capacity(n * c);
        for &(u, v) in &uv {
            for ch in 0..c {
                let s = wave(u, v, ch % 4);
                out.push(match a {
                    Attribute::Position => match ch {
                        0 => 8.0 * u,
                        1 => 8.0 * v,
                        _ => 2.0 * wave(u, v, 0),
                    },
                    Attribute::ShDc => 0.5 + 1.2 * s,
                    Attribute::ShRest => 0.3 * s / (1 + ch / 3) as f32,
                    Attribute::Opacity => 3.0 + 4.0 * s,
                    Attribute::Scale => -4.0 + 1.5 * s,
                    Attribute::Rotation => 0.5 + 0.4 * s,
                });
            }
        }
        out
    })
    .expect("generated columns have consistent sizes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(random_cloud(10, 45, 1), random_cloud(10, 45, 1));
        assert_ne!(random_cloud(10, 0, 1), random_cloud(10, 0, 2));
        let c = smooth_cloud(50, 45, 3);
        assert_eq!(c.len(), 50);
        c.validate().unwrap();
    }
}
