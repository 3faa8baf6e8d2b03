//! Grid smoothness and reconstruction metrics, plus the sorting benchmark.

use std::fmt::Write as _;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::FeatureMatrix;
use crate::error::{Error, Result};
use crate::plas::{sort_grid, SortConfig};

/// Variance of the absolute differences between 4-connected neighbours,
/// pooled over all channels (population variance).
pub fn vad(grid: &[f32], side: usize, channels: usize) -> Result<f64> {
    if side < 2 {
        return Err(Error::invalid(format!("VAD needs a side of at least 2, got {side}")));
    }
    if grid.len() != side * side * channels {
        return Err(Error::invalid("grid size does not match side and channels"));
    }
    let at = |y: usize, x: usize, c: usize| f64::from(grid[(y * side + x) * channels + c]);
    let (mut n, mut sum, mut sum2) = (0usize, 0.0f64, 0.0f64);
    let mut push = |d: f64| {
        n += 1;
        sum += d;
        sum2 += d * d;
    };
    for y in 0..side {
        for x in 0..side {
            for c in 0..channels {
                if x + 1 < side {
                    push((at(y, x, c) - at(y, x + 1, c)).abs());
                }
                if y + 1 < side {
                    push((at(y, x, c) - at(y + 1, x, c)).abs());
                }
            }
        }
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mean = sum / n as f64;
    Ok((sum2 / n as f64 - mean * mean).max(0.0))
}

/// PSNR in dB between two planes; `f64::INFINITY` when they are identical.
pub fn attribute_psnr(a: &[f32], b: &[f32], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("planes must be non-empty and of equal size"));
    }
    if peak <= 0.0 {
        return Err(Error::invalid("peak must be positive"));
    }
    let mse = a
        .iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Uniform `[0, 255)` grid used by the sorting benchmark.
pub fn random_grid(side: usize, channels: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side * side * channels)
        .map(|_| rng.random_range(0.0f32..255.0))
        .collect();
    FeatureMatrix {
        rows: side * side,
        dim: channels,
        data,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub side: usize,
    pub channels: usize,
    pub seed: u64,
    pub time_s: f64,
    pub reorders: usize,
    pub vad_initial: f64,
    pub vad_final: f64,
}

pub const BENCH_CSV_HEADER: &str = "side,channels,seed,time_s,reorders,vad_initial,vad_final";

/// Sorts a fresh random grid for every `(seed, side)` pair, sequentially.
pub fn bench_sort(sides: &[usize], channels: usize, seeds: &[u64], config: &SortConfig) -> Result<Vec<BenchRow>> {
    if let Some(&s) = sides.iter().find(|&&s| s < 2) {
        return Err(Error::invalid(format!("benchmark side must be at least 2, got {s}")));
    }
    if channels == 0 {
        return Err(Error::invalid("benchmark needs at least one channel"));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        for &side in sides {
            let grid = random_grid(side, channels, seed);
            let cfg = SortConfig {
                seed,
                ..config.clone()
            };
            let report = sort_grid(&grid, side, &cfg)?;
            rows.push(BenchRow {
                side,
                channels,
                seed,
                time_s: report.time_s,
                reorders: report.reorders,
                vad_initial: report.vad_initial,
                vad_final: report.vad_final,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{},{:.6},{:.6}",
            r.side, r.channels, r.seed, r.time_s, r.reorders, r.vad_initial, r.vad_final
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vad_of_constant_grid_is_zero() {
        assert_eq!(vad(&[7.0; 3 * 3 * 2], 3, 2).unwrap(), 0.0);
    }

    #[test]
    fn vad_hand_example() {
        // pairs: |0-1|, |2-3|, |0-2|, |1-3| = {1, 1, 2, 2}
        assert_eq!(vad(&[0.0, 1.0, 2.0, 3.0], 2, 1).unwrap(), 0.25);
    }

    #[test]
    fn vad_rejects_tiny_grid() {
        assert!(vad(&[1.0], 1, 1).is_err());
    }

    #[test]
    fn vad_matches_uniform_closed_form() {
        // Var|X - Y| for X, Y ~ U(0, 255): E|d|^2 = 255^2/6, E|d| = 255/3.
        let g = random_grid(512, 3, 1);
        let v = vad(&g.data, 512, 3).unwrap();
        let expected = 255.0f64.powi(2) / 6.0 - (255.0f64 / 3.0).powi(2);
        assert!((expected - 3612.5).abs() < 1e-9);
        assert!((v - expected).abs() / expected < 0.02, "{v}");
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(attribute_psnr(&[0.5, 1.0], &[0.5, 1.0], 1.0).unwrap(), f64::INFINITY);
        assert!((attribute_psnr(&[0.0], &[1.0], 1.0).unwrap()).abs() < 1e-12);
        let p = attribute_psnr(&[0.0, 0.0, 0.0, 0.0], &[0.5, -0.5, 0.5, -0.5], 1.0).unwrap();
        assert!((p - 6.020599913279624).abs() < 1e-9);
        assert!(attribute_psnr(&[0.0], &[0.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn bench_csv_shape() {
        let rows = bench_sort(&[8, 16], 3, &[1, 2], &SortConfig::default()).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = bench_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BENCH_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("8,3,1,"));
        assert!(bench_sort(&[1], 3, &[0], &SortConfig::default()).is_err());
    }
}
