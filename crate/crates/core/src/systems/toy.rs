//! Noisy circle map embedded linearly in a high-dimensional ambient space.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::standard_normal;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ToyParams {
    /// Ambient dimension of the embedded state.
    pub dim: usize,
    /// Constant rotation increment per step.
    pub delta: f64,
    /// Amplitude of the `sin(2θ)` nonlinearity.
    pub alpha: f64,
    /// Scale of the angular process noise.
    pub noise_scale: f64,
    /// Number of components picked by the observation operator.
    pub observed_components: usize,
    pub obs_noise_std: f64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            dim: 100,
            delta: PI / 50.0,
            alpha: 0.01,
            noise_scale: 0.01,
            observed_components: 2,
            obs_noise_std: 0.1,
        }
    }
}

/// `θ + δ + α sin(2θ) + c ε` for an explicit standard-normal draw `eps`.
pub fn toy_step(theta: f64, eps: f64, params: &ToyParams) -> f64 {
    theta + params.delta + params.alpha * libm::sin(2.0 * theta) + params.noise_scale * eps
}

pub fn toy_step_rng<R: Rng + ?Sized>(theta: f64, params: &ToyParams, rng: &mut R) -> f64 {
    toy_step(theta, standard_normal(rng), params)
}

/// `W [cos θ, sin θ]ᵀ`.
pub fn toy_embed(theta: f64, w: &Matrix) -> Result<Vec<f64>> {
    if w.cols() != 2 {
        return Err(Error::DimensionMismatch {
            context: "toy embedding columns",
            expected: 2,
            got: w.cols(),
        });
    }
    w.matvec(&[libm::cos(theta), libm::sin(theta)])
}

/// Random embedding with i.i.d. standard-normal entries.
pub fn draw_embedding<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Matrix {
    let data = (0..dim * 2).map(|_| standard_normal(rng)).collect();
    Matrix::from_vec(dim, 2, data).expect("shape is consistent")
}

/// Physical-space model of the toy system.
///
/// States off the embedded circle are handled by rotating their in-plane
/// coordinates `c = W⁺x` at constant radius and keeping the component
/// orthogonal to `span(W)` fixed.
#[derive(Debug, Clone)]
pub struct ToySystem {
    pub params: ToyParams,
    pub embedding: Matrix,
    pinv: Matrix,
}

impl ToySystem {
    pub fn new(params: ToyParams, embedding: Matrix) -> Result<Self> {
        if embedding.shape() != (params.dim, 2) {
            return Err(Error::DimensionMismatch {
                context: "toy embedding rows",
                expected: params.dim,
                got: embedding.rows(),
            });
        }
        let gram = embedding.mul(crate::linalg::Op::T, &embedding, crate::linalg::Op::N)?;
        let det = gram[(0, 0)] * gram[(1, 1)] - gram[(0, 1)] * gram[(1, 0)];
        if !(det.abs() > 1e-12) {
            return Err(Error::InvalidParameter("toy embedding is rank deficient".into()));
        }
        let inv = Matrix::from_rows(&[
            [gram[(1, 1)] / det, -gram[(0, 1)] / det],
            [-gram[(1, 0)] / det, gram[(0, 0)] / det],
        ])?;
        let pinv = inv.mul(crate::linalg::Op::N, &embedding, crate::linalg::Op::T)?;
        Ok(Self {
            params,
            embedding,
            pinv,
        })
    }

    /// In-plane coordinates `W⁺x`.
    pub fn plane_coords(&self, x: &[f64]) -> Result<[f64; 2]> {
        let c = self.pinv.matvec(x)?;
        Ok([c[0], c[1]])
    }

    pub fn angle_of(&self, x: &[f64]) -> Result<f64> {
        let c = self.plane_coords(x)?;
        Ok(libm::atan2(c[1], c[0]))
    }

    pub fn embed(&self, theta: f64) -> Result<Vec<f64>> {
        toy_embed(theta, &self.embedding)
    }

    pub fn advance<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let c = self.plane_coords(x)?;
        let radius = libm::hypot(c[0], c[1]);
        let theta = libm::atan2(c[1], c[0]);
        let next = toy_step_rng(theta, &self.params, rng);
        let dc = [
            radius * libm::cos(next) - c[0],
            radius * libm::sin(next) - c[1],
        ];
        let shift = self.embedding.matvec(&dc)?;
        Ok(x.iter().zip(shift).map(|(a, b)| a + b).collect())
    }
}
