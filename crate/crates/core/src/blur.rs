//! Separable Gaussian blur over `height x width x channels` grids.
//!
//! Taps that would fall outside the grid are dropped and the remaining
//! weights renormalized, so constants are preserved and no border values
//! are invented.

use rayon::prelude::*;

/// Unnormalized 1D Gaussian taps `exp(-d^2 / 2 sigma^2)` for `d` in `-half..=half`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    half: usize,
    taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(half_width: usize, sigma: f64) -> Self {
        assert!(sigma > 0.0, "sigma must be positive");
        let taps = (0..=2 * half_width)
            .map(|i| {
                let d = i as f64 - half_width as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        GaussianKernel {
            half: half_width,
            taps,
        }
    }

    /// Kernel used to build sorting targets: half-width `ceil(radius)`, sigma `radius / 2`.
    pub fn for_radius(radius: f64) -> Self {
        assert!(radius > 0.0, "blur radius must be positive");
        GaussianKernel::new(radius.ceil() as usize, radius / 2.0)
    }

    pub fn half_width(&self) -> usize {
        self.half
    }

    /// Tap for offset `d` (`|d| <= half_width`).
    pub fn tap(&self, d: isize) -> f64 {
        self.taps[(d + self.half as isize) as usize]
    }

    /// Sum of the taps that land inside `0..len` around position `i`.
    fn norms(&self, len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let (lo, hi) = self.window(i, len);
                (lo..hi).map(|j| self.tap(j as isize - i as isize)).sum()
            })
            .collect()
    }

    fn window(&self, i: usize, len: usize) -> (usize, usize) {
        (i.saturating_sub(self.half), (i + self.half + 1).min(len))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Forward,
    Adjoint,
}

/// Applies the renormalized blur to a row-major `height x width x channels` grid.
pub fn blur(
    input: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    kernel: &GaussianKernel,
) -> Vec<f64> {
    assert_eq!(input.len(), height * width * channels);
    let tmp = horizontal(input, height, width, channels, kernel, Mode::Forward);
    vertical(&tmp, height, width, channels, kernel, Mode::Forward)
}

/// Transpose of [`blur`] as a linear operator, for backpropagating through it.
pub fn blur_adjoint(
    input: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    kernel: &GaussianKernel,
) -> Vec<f64> {
    assert_eq!(input.len(), height * width * channels);
    let tmp = vertical(input, height, width, channels, kernel, Mode::Adjoint);
    horizontal(&tmp, height, width, channels, kernel, Mode::Adjoint)
}

// Forward: out[i] = sum_j k(j - i) in[j] / norm[i], evaluated as
// in[i] + sum_j k(j - i) (in[j] - in[i]) / norm[i] so constants come out exact.
// Adjoint: out[j] = sum_i k(j - i) in[i] / norm[i]; the kernel is symmetric.
fn horizontal(
    input: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    kernel: &GaussianKernel,
    mode: Mode,
) -> Vec<f64> {
    let norms = kernel.norms(width);
    let row_len = width * channels;
    let mut out = vec![0.0; input.len()];
    out.par_chunks_mut(row_len.max(1))
        .zip(input.par_chunks(row_len.max(1)))
        .take(height)
        .for_each(|(dst, src)| {
            let scaled: Vec<f64>;
            let src = if mode == Mode::Adjoint {
                scaled = src
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v / norms[k / channels])
                    .collect();
                &scaled[..]
            } else {
                src
            };
            for x in 0..width {
                let (lo, hi) = kernel.window(x, width);
                let acc = &mut dst[x * channels..(x + 1) * channels];
                let center = &src[x * channels..(x + 1) * channels];
                for j in lo..hi {
                    let w = kernel.tap(j as isize - x as isize);
                    let other = &src[j * channels..(j + 1) * channels];
                    for ((a, v), c) in acc.iter_mut().zip(other).zip(center) {
                        if mode == Mode::Forward {
                            *a += w * (v - c);
                        } else {
                            *a += w * v;
                        }
                    }
                }
                if mode == Mode::Forward {
                    for (a, c) in acc.iter_mut().zip(center) {
                        *a = c + *a / norms[x];
                    }
                }
            }
        });
    out
}

fn vertical(
    input: &[f64],
    height: usize,
    width: usize,
    channels: usize,
    kernel: &GaussianKernel,
    mode: Mode,
) -> Vec<f64> {
    let norms = kernel.norms(height);
    let row_len = width * channels;
    let mut out = vec![0.0; input.len()];
    out.par_chunks_mut(row_len.max(1))
        .take(height)
        .enumerate()
        .for_each(|(y, dst)| {
            let (lo, hi) = kernel.window(y, height);
            let center = &input[y * row_len..(y + 1) * row_len];
            for j in lo..hi {
                let w = kernel.tap(j as isize - y as isize);
                let src = &input[j * row_len..(j + 1) * row_len];
                if mode == Mode::Forward {
                    for ((a, v), c) in dst.iter_mut().zip(src).zip(center) {
                        *a += w * (v - c);
                    }
                } else {
                    let w = w / norms[j];
                    for (a, v) in dst.iter_mut().zip(src) {
                        *a += w * v;
                    }
                }
            }
            if mode == Mode::Forward {
                for (a, c) in dst.iter_mut().zip(center) {
                    *a = c + *a / norms[y];
                }
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense 2D convolution with the full 2D kernel renormalized over the in-grid window.
    fn dense_blur(input: &[f64], h: usize, w: usize, c: usize, half: usize, sigma: f64) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for yy in 0..h {
                        for xx in 0..w {
                            let dy = yy as f64 - y as f64;
                            let dx = xx as f64 - x as f64;
                            if dy.abs() > half as f64 || dx.abs() > half as f64 {
                                continue;
                            }
                            let k = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
                            acc += k * input[(yy * w + xx) * c + ch];
                            norm += k;
                        }
                    }
                    out[(y * w + x) * c + ch] = acc / norm;
                }
            }
        }
        out
    }

    #[test]
    fn constant_grid_is_preserved() {
        let g = vec![3.25; 7 * 5 * 2];
        let out = blur(&g, 7, 5, 2, &GaussianKernel::for_radius(4.0));
        assert!(out.iter().all(|&v| v == 3.25));
        let g = vec![0.1; 6 * 6];
        let out = blur(&g, 6, 6, 1, &GaussianKernel::new(2, 3.0));
        assert!(out.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn impulse_gives_symmetric_unit_stencil() {
        let mut g = vec![0.0; 25];
        g[12] = 1.0;
        let out = blur(&g, 5, 5, 1, &GaussianKernel::for_radius(1.0));
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        for y in 0..5 {
            for x in 0..5 {
                let v = out[y * 5 + x];
                let inside = (1..4).contains(&y) && (1..4).contains(&x);
                assert_eq!(v > 0.0, inside, "({y},{x})");
                assert!((v - out[x * 5 + y]).abs() < 1e-15);
                assert!((v - out[y * 5 + (4 - x)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn separable_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g: Vec<f64> = (0..8 * 8 * 2).map(|_| rng.random_range(0.0..1.0)).collect();
        let got = blur(&g, 8, 8, 2, &GaussianKernel::for_radius(2.0));
        let want = dense_blur(&g, 8, 8, 2, 2, 1.0);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let got = blur(&g, 8, 16, 1, &GaussianKernel::new(2, 3.0));
        let want = dense_blur(&g, 8, 16, 1, 2, 3.0);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w, c) = (6, 9, 3);
        let u: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = GaussianKernel::new(2, 3.0);
        let bu = blur(&u, h, w, c, &k);
        let btv = blur_adjoint(&v, h, w, c, &k);
        let lhs: f64 = bu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&btv).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
