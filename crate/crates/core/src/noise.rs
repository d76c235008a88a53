//! Seeded space-time white noise on the periodic grid and the mollified
//! velocity increments built from it.
//!
//! Every slice is regenerated on demand from `(seed, time_index)`: the key is
//! derived from the seed and the time index selects an independent ChaCha
//! stream, so replicas and time steps can be produced in any order.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::covariance::{CovarianceSpec, ScaleParams};
use crate::error::{LabError, Result};
use crate::grid::Grid1d;

/// Supports up to this many cells are convolved directly; wider ones go through the FFT.
pub const DIRECT_CONV_MAX_CELLS: usize = 64;

/// The mollifier must span at least this many cells per unit of `eps`.
pub const MIN_CELLS_PER_EPS: f64 = 4.0;

/// SplitMix64 finaliser; used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A random stream identified by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub grid: Grid1d,
    pub dt: f64,
    pub seed: u64,
}

impl NoiseGrid {
    pub fn new(grid: Grid1d, dt: f64, seed: u64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::Validation(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { grid, dt, seed })
    }

    /// Noise of an independent replica with the same grid.
    pub fn replica(&self, r: u64) -> Self {
        Self {
            seed: mix_seed(self.seed, r),
            ..*self
        }
    }

    /// Fills `out` with the white increments of step `time_index`, each `N(0, dt dx)`.
    pub fn fill_white(&self, time_index: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.grid.nx);
        let scale = (self.dt * self.grid.dx()).sqrt();
        let mut rng = stream_rng(self.seed, time_index);
        for v in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = scale * z;
        }
    }
}

/// White increments `xi_{k, j} ~ N(0, dt dx)`, a pure function of `(seed, time_index)`.
pub fn sample_white_increments(noise: &NoiseGrid, time_index: u64) -> Vec<f64> {
    let mut out = vec![0.0; noise.grid.nx];
    noise.fill_white(time_index, &mut out);
    out
}

/// Increment of a mollified field over one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldIncrement {
    pub values: Vec<f64>,
    pub eps: f64,
    pub time_index: u64,
}

/// Cached convolution kernel `rho_eps` on a fixed grid.
#[derive(Clone)]
pub struct FieldGenerator {
    grid: Grid1d,
    eps: f64,
    amp: f64,
    cov: CovarianceSpec,
    /// `w[m + o] = rho_eps(o dx)` for `o = -m..=m`.
    weights: Vec<f64>,
    half: usize,
    spectrum: Option<Arc<FftConv>>,
}

struct FftConv {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

impl std::fmt::Debug for FieldGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldGenerator")
            .field("eps", &self.eps)
            .field("half", &self.half)
            .field("fft", &self.spectrum.is_some())
            .finish()
    }
}

impl FieldGenerator {
    pub fn new(grid: Grid1d, cov: &CovarianceSpec, p: &ScaleParams) -> Result<Self> {
        let dx = grid.dx();
        if p.eps < MIN_CELLS_PER_EPS * dx {
            return Err(LabError::Resolution(format!(
                "mollifier at eps = {} spans fewer than {} cells (dx = {dx})",
                p.eps, MIN_CELLS_PER_EPS
            )));
        }
        let half = (p.eps / dx).ceil() as usize;
        if 2 * half + 1 > grid.nx {
            return Err(LabError::Resolution(format!(
                "mollifier support 2 eps = {} exceeds the domain",
                2.0 * p.eps
            )));
        }
        let amp = p.rho_amplitude();
        let weights: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let o = i as f64 - half as f64;
                amp * cov.rho.density(o * dx / p.eps)
            })
            .collect();
        let spectrum = if 2 * half + 1 > DIRECT_CONV_MAX_CELLS {
            let n = grid.nx;
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(n);
            let inverse = planner.plan_fft_inverse(n);
            let mut kernel_hat = vec![Complex::new(0.0, 0.0); n];
            for (i, w) in weights.iter().enumerate() {
                let o = i as i64 - half as i64;
                kernel_hat[o.rem_euclid(n as i64) as usize].re += *w;
            }
            forward.process(&mut kernel_hat);
            Some(Arc::new(FftConv {
                forward,
                inverse,
                kernel_hat,
            }))
        } else {
            None
        };
        Ok(Self {
            grid,
            eps: p.eps,
            amp,
            cov: cov.clone(),
            weights,
            half,
            spectrum,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `rho_eps(o dx)` for `o = -m..=m`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `rho_eps(y)` evaluated exactly.
    pub fn rho_eps(&self, y: f64) -> f64 {
        self.amp * self.cov.rho.density(y / self.eps)
    }

    /// Circular convolution `out_j = sum_i rho_eps(x_j - x_i) xi_i`.
    pub fn convolve_into(&self, xi: &[f64], out: &mut [f64]) {
        let n = self.grid.nx;
        debug_assert_eq!(xi.len(), n);
        debug_assert_eq!(out.len(), n);
        match &self.spectrum {
            Some(fc) => {
                let mut buf: Vec<Complex<f64>> = xi.iter().map(|&v| Complex::new(v, 0.0)).collect();
                fc.forward.process(&mut buf);
                for (b, k) in buf.iter_mut().zip(&fc.kernel_hat) {
                    *b *= *k;
                }
                fc.inverse.process(&mut buf);
                let inv_n = 1.0 / n as f64;
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o = b.re * inv_n;
                }
            }
            None => {
                let m = self.half;
                let w = &self.weights;
                for (j, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    if j >= m && j + m < n {
                        let base = j - m;
                        for (wi, xv) in w.iter().zip(&xi[base..base + 2 * m + 1]) {
                            acc += wi * xv;
                        }
                    } else {
                        for (i, wi) in w.iter().enumerate() {
                            let src = (j + n + i - m) % n;
                            acc += wi * xi[src];
                        }
                    }
                    *o = acc;
                }
            }
        }
    }

    /// The field seen in a frame shifted by `shift`:
    /// `out_j = sum_i rho_eps(x_j + shift - x_i) xi_i`, with exact kernel
    /// weights at fractional cell offsets.
    pub fn convolve_shifted_into(&self, xi: &[f64], shift: f64, out: &mut [f64]) {
        let n = self.grid.nx;
        let dx = self.grid.dx();
        let s = shift / dx;
        let whole = s.floor();
        let frac = s - whole;
        let whole = whole as i64;
        // rho_eps((o + frac) dx) for o with |(o + frac) dx| < 2 eps... support is eps.
        let m = self.half as i64 + 1;
        let w: Vec<f64> = (-m..=m)
            .map(|o| self.rho_eps((o as f64 + frac) * dx))
            .collect();
        for (j, out_j) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let o = k as i64 - m;
                // x_j + shift - x_i = (o + frac) dx  =>  i = j + whole - o
                let i = (j as i64 + whole - o).rem_euclid(n as i64) as usize;
                acc += wk * xi[i];
            }
            *out_j = acc;
        }
    }

    pub fn mollify(&self, xi: &[f64], time_index: u64) -> FieldIncrement {
        let mut values = vec![0.0; self.grid.nx];
        self.convolve_into(xi, &mut values);
        FieldIncrement {
            values,
            eps: self.eps,
            time_index,
        }
    }
}

/// Mollified increment `W_eps = rho_eps * xi` on the periodic grid.
pub fn mollify(
    noise: &NoiseGrid,
    xi: &[f64],
    time_index: u64,
    cov: &CovarianceSpec,
    p: &ScaleParams,
) -> Result<FieldIncrement> {
    Ok(FieldGenerator::new(noise.grid, cov, p)?.mollify(xi, time_index))
}

/// Fields at several scales built from the same white increments.
pub fn coupled_family(
    noise: &NoiseGrid,
    time_index: u64,
    cov: &CovarianceSpec,
    params: &[ScaleParams],
) -> Result<Vec<FieldIncrement>> {
    let xi = sample_white_increments(noise, time_index);
    params
        .iter()
        .map(|p| mollify(noise, &xi, time_index, cov, p))
        .collect()
}

/// Little-endian `f64` dump of one white-noise slice.
pub fn dump_slice(noise: &NoiseGrid, time_index: u64) -> Vec<u8> {
    sample_white_increments(noise, time_index)
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}
