//! Periodic Gaussian random fields on the unit square.
//!
//! The kernel `exp(−(sin²(πΔx₁) + sin²(πΔx₂)) / 2ℓ²)` factorizes into a
//! product of two 1-D periodic kernels, so its covariance on the grid is the
//! Kronecker product `C ⊗ C` of a symmetric circulant `C`. The circulant is
//! diagonalized by the discrete Fourier basis; its square root `S` is again
//! circulant and a sample is `U = S Z S` for white noise `Z`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Op};
use crate::rng::normal_vec;

/// First row of the periodic 1-D kernel on `n` points.
pub fn periodic_kernel_row(n: usize, length_scale: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let s = libm::sin(PI * k as f64 / n as f64);
            libm::exp(-(s * s) / (2.0 * length_scale * length_scale))
        })
        .collect()
}

/// Dense symmetric circulant with the given first row.
pub fn circulant(row: &[f64]) -> Matrix {
    let n = row.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = row[(j + n - i) % n];
        }
    }
    m
}

/// Eigenvalues of a symmetric circulant: the cosine transform of its first row.
pub fn circulant_eigenvalues(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    (0..n)
        .map(|m| {
            row.iter()
                .enumerate()
                .map(|(k, c)| c * libm::cos(2.0 * PI * (k * m % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GrfSampler {
    n: usize,
    sqrt_cov: Matrix,
    clamped_modes: usize,
}

impl GrfSampler {
    pub fn new(grid_n: usize, length_scale: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "GRF length scale must be positive, got {length_scale}"
            )));
        }
        if grid_n == 0 {
            return Err(Error::InvalidParameter("GRF grid must be non-empty".into()));
        }
        let row = periodic_kernel_row(grid_n, length_scale);
        let eig = circulant_eigenvalues(&row);
        let mut clamped_modes = 0;
        let sqrt_eig: Vec<f64> = eig
            .iter()
            .map(|&l| {
                if l < 0.0 {
                    clamped_modes += 1;
                    0.0
                } else {
                    libm::sqrt(l)
                }
            })
            .collect();
        let n = grid_n;
        let sqrt_row: Vec<f64> = (0..n)
            .map(|k| {
                sqrt_eig
                    .iter()
                    .enumerate()
                    .map(|(m, s)| s * libm::cos(2.0 * PI * (k * m % n) as f64 / n as f64))
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        Ok(Self {
            n,
            sqrt_cov: circulant(&sqrt_row),
            clamped_modes,
        })
    }

    /// Number of (numerically) negative spectral weights set to zero.
    pub fn clamped_modes(&self) -> usize {
        self.clamped_modes
    }

    /// Symmetric circulant square root of the 1-D covariance.
    pub fn sqrt_covariance_1d(&self) -> &Matrix {
        &self.sqrt_cov
    }

    /// One sample, flattened row-major.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n;
        let z = Matrix::from_vec(n, n, normal_vec(rng, n * n)).expect("square");
        let sz = self.sqrt_cov.matmul(&z).expect("square");
        sz.mul(Op::N, &self.sqrt_cov, Op::T).expect("square").into_vec()
    }
}

/// Periodic normalized Gaussian smoothing weights with std `sigma_px` pixels.
pub fn gaussian_filter_row(n: usize, sigma_px: f64) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|k| {
            let d = k.min(n - k) as f64;
            libm::exp(-d * d / (2.0 * sigma_px * sigma_px))
        })
        .collect();
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= total);
    row
}

/// White noise convolved (periodically) with a Gaussian filter of std
/// `sigma_px` pixels, rescaled so the pointwise standard deviation is `std`.
pub fn smoothed_white_noise<R: Rng + ?Sized>(
    grid_n: usize,
    sigma_px: f64,
    std: f64,
    rng: &mut R,
) -> Vec<f64> {
    let row = gaussian_filter_row(grid_n, sigma_px);
    let point_std: f64 = row.iter().map(|w| w * w).sum();
    let g = circulant(&row);
    let z = Matrix::from_vec(grid_n, grid_n, normal_vec(rng, grid_n * grid_n)).expect("square");
    let mut u = g
        .matmul(&z)
        .and_then(|gz| gz.mul(Op::N, &g, Op::T))
        .expect("square")
        .into_vec();
    let s = std / point_std;
    u.iter_mut().for_each(|v| *v *= s);
    u
}

/// Circular autocorrelation of a row-major field along the x₁ axis,
/// for lags `0..n`.
pub fn row_autocorrelation(field: &[f64], n: usize) -> Vec<f64> {
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let var: f64 = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let mut ac = vec![0.0; n];
    for (lag, a) in ac.iter_mut().enumerate() {
        let mut s = 0.0;
        for j in 0..n {
            for i in 0..n {
                s += (field[j * n + i] - mean) * (field[j * n + (i + lag) % n] - mean);
            }
        }
        *a = s / var;
    }
    ac
}
