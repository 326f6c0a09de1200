use alloc::vec::Vec;

use crate::linalg::{norm2, Matrix};
use crate::rng::{normal_vec, substream};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Leading singular triple from power iteration on `AᵀA`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm {
    pub sigma: f64,
    /// Leading left singular vector.
    pub u: Vec<f64>,
    /// Leading right singular vector.
    pub v: Vec<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached before the tolerance.
    pub converged: bool,
}

/// Largest singular value from a seeded start vector.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> SpectralNorm {
    let v0 = normal_vec(&mut substream(0, "power-iteration", a.cols() as u64), a.cols());
    spectral_norm_from(a, &v0, tol, max_iter)
}

/// Power iteration from `v0`; stops when successive estimates differ by less
/// than `tol` relative to the estimate.
pub fn spectral_norm_from(a: &Matrix, v0: &[f64], tol: f64, max_iter: usize) -> SpectralNorm {
    let mut v = v0.to_vec();
    let nv = norm2(&v);
    if nv > 0.0 {
        v.iter_mut().for_each(|x| *x /= nv);
    } else if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
    let mut u = a.matvec(&v).expect("square shapes");
    let mut sigma = norm2(&u);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        if sigma == 0.0 {
            converged = true;
            break;
        }
        u.iter_mut().for_each(|x| *x /= sigma);
        let mut w = a.matvec_t(&u).expect("shapes");
        let nw = norm2(&w);
        if nw == 0.0 {
            converged = true;
            break;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
        u = a.matvec(&v).expect("shapes");
        let sigma_prev = sigma;
        sigma = norm2(&u);
        if (sigma - sigma_prev).abs() <= tol * sigma {
            converged = true;
            break;
        }
    }
    if sigma > 0.0 {
        u.iter_mut().for_each(|x| *x /= sigma);
    }
    SpectralNorm {
        sigma,
        u,
        v,
        iterations,
        converged,
    }
}

/// `R(A) = max(0, ‖A‖₂ − 1)²` with its (sub)gradient `2 max(0, σ₁ − 1) u vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPenalty {
    pub value: f64,
    pub grad: Matrix,
    pub norm: SpectralNorm,
}

/// Excess over the unit ball, with estimates within rounding of 1 treated
/// as on the boundary.
fn excess(sigma: f64) -> f64 {
    let e = sigma - 1.0;
    if e <= 4.0 * f64::EPSILON {
        0.0
    } else {
        e
    }
}

pub fn spectral_penalty_from_norm(a: &Matrix, norm: SpectralNorm) -> SpectralPenalty {
    let e = excess(norm.sigma);
    let mut grad = Matrix::zeros(a.rows(), a.cols());
    if e > 0.0 {
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                grad[(i, j)] = 2.0 * e * norm.u[i] * norm.v[j];
            }
        }
    }
    SpectralPenalty {
        value: e * e,
        grad,
        norm,
    }
}

pub fn spectral_penalty_grad(a: &Matrix, tol: f64, max_iter: usize) -> SpectralPenalty {
    spectral_penalty_from_norm(a, spectral_norm(a, tol, max_iter))
}

/// Penalty value only, at default tolerances.
pub fn spectral_penalty(a: &Matrix) -> f64 {
    spectral_penalty_grad(a, DEFAULT_TOL, DEFAULT_MAX_ITER).value
}
