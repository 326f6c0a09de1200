//! Advection-diffusion-reaction equation on the periodic unit square,
//!
//! `∂t u + v·∇u = μ Δu − α (sin u − u)`, `v(x) = (sin 2πx₂, sin 2πx₁)`.
//!
//! Spatial discretization is finite-volume on a uniform `n × n` grid: the
//! advective term is written in flux form `∇·(v u)` (valid because `v` is
//! divergence-free) with MUSCL/minmod reconstruction and upwind face fluxes,
//! so the scheme is conservative and the grid sum of `u` is invariant under
//! pure advection. Diffusion uses the 5-point Laplacian. Time stepping is
//! SSP-RK2 (Heun) with Courant number at most 0.5.
//!
//! Fields are flattened row-major: index `j * n + i` holds cell `(x₁ = i h,
//! x₂ = j h)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdrParams {
    pub grid_n: usize,
    /// Diffusion coefficient μ.
    pub diffusion: f64,
    /// Reaction coefficient α.
    pub reaction: f64,
    /// Multiplier on the advection velocity field (1 = physical field).
    pub velocity_scale: f64,
    /// Time between consecutive observations.
    pub obs_interval: f64,
    /// Correlation length of the initial-condition Gaussian random field.
    pub length_scale: f64,
    /// Upper bound on the advective Courant number of an internal step.
    pub max_courant: f64,
    /// Sensors per side of the uniform observation lattice.
    pub sensors_per_side: usize,
    pub obs_noise_std: f64,
    pub model_noise_std: f64,
}

impl Default for AdrParams {
    fn default() -> Self {
        Self {
            grid_n: 64,
            diffusion: 1e-3,
            reaction: 0.8,
            velocity_scale: 1.0,
            obs_interval: 0.05,
            length_scale: 0.2,
            max_courant: 0.5,
            sensors_per_side: 5,
            obs_noise_std: 0.01,
            model_noise_std: 0.0,
        }
    }
}

impl AdrParams {
    pub fn dim(&self) -> usize {
        self.grid_n * self.grid_n
    }

    /// Flat indices of the `s × s` sensor lattice, cell-centred in each block.
    pub fn sensor_indices(&self) -> Vec<usize> {
        let n = self.grid_n;
        let s = self.sensors_per_side;
        let coord = |k: usize| ((2 * k + 1) * n) / (2 * s);
        let mut idx = Vec::with_capacity(s * s);
        for j in 0..s {
            for i in 0..s {
                idx.push(coord(j) * n + coord(i));
            }
        }
        idx
    }
}

#[derive(Debug, Clone)]
pub struct AdrSolver {
    pub params: AdrParams,
    h: f64,
    internal_dt: f64,
    /// x₁-velocity on each row (depends on x₂ only).
    v1_rows: Vec<f64>,
    /// x₂-velocity on each column (depends on x₁ only).
    v2_cols: Vec<f64>,
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

impl AdrSolver {
    /// Builds a solver whose internal step is the largest one satisfying both
    /// the advective and diffusive bounds.
    pub fn new(params: AdrParams) -> Result<Self> {
        let mut s = Self::with_internal_dt(params, f64::INFINITY)?;
        s.internal_dt = s.stable_dt();
        Ok(s)
    }

    /// Builds a solver with an explicit internal step; errors if it violates
    /// the stability bounds.
    pub fn with_internal_dt(params: AdrParams, internal_dt: f64) -> Result<Self> {
        let n = params.grid_n;
        if n < 4 {
            return Err(Error::InvalidParameter(alloc::format!("ADR grid needs n >= 4, got {n}")));
        }
        if params.diffusion < 0.0 || !(params.max_courant > 0.0) || !(internal_dt > 0.0) {
            return Err(Error::InvalidParameter("ADR coefficients out of range".into()));
        }
        let h = 1.0 / n as f64;
        let vel: Vec<f64> = (0..n)
            .map(|k| params.velocity_scale * libm::sin(2.0 * PI * k as f64 * h))
            .collect();
        let solver = Self {
            h,
            internal_dt,
            v1_rows: vel.clone(),
            v2_cols: vel,
            params,
        };
        if internal_dt.is_finite() {
            let courant = solver.courant(internal_dt);
            if courant > solver.params.max_courant + 1e-12 {
                return Err(Error::CflViolation {
                    courant,
                    limit: solver.params.max_courant,
                });
            }
            let diff_number = solver.params.diffusion * internal_dt / (h * h);
            if diff_number > 0.25 + 1e-12 {
                return Err(Error::CflViolation {
                    courant: diff_number,
                    limit: 0.25,
                });
            }
        }
        Ok(solver)
    }

    fn max_speed(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Advective Courant number `dt (max|v₁| + max|v₂|) / h`.
    pub fn courant(&self, dt: f64) -> f64 {
        dt * (Self::max_speed(&self.v1_rows) + Self::max_speed(&self.v2_cols)) / self.h
    }

    fn stable_dt(&self) -> f64 {
        let speed = Self::max_speed(&self.v1_rows) + Self::max_speed(&self.v2_cols);
        let adv = if speed > 0.0 {
            self.params.max_courant * self.h / speed
        } else {
            f64::INFINITY
        };
        let diff = if self.params.diffusion > 0.0 {
            0.25 * self.h * self.h / self.params.diffusion
        } else {
            f64::INFINITY
        };
        let dt = adv.min(diff);
        if dt.is_finite() {
            dt
        } else {
            self.params.obs_interval
        }
    }

    pub fn internal_dt(&self) -> f64 {
        self.internal_dt
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    /// Semi-discrete right-hand side.
    pub fn rhs(&self, u: &[f64], out: &mut [f64]) {
        let n = self.params.grid_n;
        let inv_h = 1.0 / self.h;
        let mu_h2 = self.params.diffusion * inv_h * inv_h;
        let alpha = self.params.reaction;
        let wrap = |k: isize| -> usize { k.rem_euclid(n as isize) as usize };

        for (o, &val) in out.iter_mut().zip(u) {
            *o = -alpha * (libm::sin(val) - val);
        }

        let mut flux = vec![0.0; n];
        // x₁ direction: faces i+1/2 along each row j.
        for j in 0..n {
            let a = self.v1_rows[j];
            let row = &u[j * n..(j + 1) * n];
            for i in 0..n {
                let i = i as isize;
                let (um1, u0, u1, u2) = (
                    row[wrap(i - 1)],
                    row[wrap(i)],
                    row[wrap(i + 1)],
                    row[wrap(i + 2)],
                );
                flux[i as usize] = if a >= 0.0 {
                    a * (u0 + 0.5 * minmod(u0 - um1, u1 - u0))
                } else {
                    a * (u1 - 0.5 * minmod(u1 - u0, u2 - u1))
                };
            }
            for i in 0..n {
                let left = flux[wrap(i as isize - 1)];
                out[j * n + i] -= (flux[i] - left) * inv_h;
            }
        }
        // x₂ direction: faces j+1/2 along each column i.
        for i in 0..n {
            let b = self.v2_cols[i];
            for j in 0..n {
                let j = j as isize;
                let at = |k: isize| u[wrap(k) * n + i];
                let (um1, u0, u1, u2) = (at(j - 1), at(j), at(j + 1), at(j + 2));
                flux[j as usize] = if b >= 0.0 {
                    b * (u0 + 0.5 * minmod(u0 - um1, u1 - u0))
                } else {
                    b * (u1 - 0.5 * minmod(u1 - u0, u2 - u1))
                };
            }
            for j in 0..n {
                let below = flux[wrap(j as isize - 1)];
                out[j * n + i] -= (flux[j] - below) * inv_h;
            }
        }
        if mu_h2 != 0.0 {
            for j in 0..n {
                let jm = wrap(j as isize - 1);
                let jp = wrap(j as isize + 1);
                for i in 0..n {
                    let im = wrap(i as isize - 1);
                    let ip = wrap(i as isize + 1);
                    let c = u[j * n + i];
                    let lap = u[j * n + ip] + u[j * n + im] + u[jp * n + i] + u[jm * n + i] - 4.0 * c;
                    out[j * n + i] += mu_h2 * lap;
                }
            }
        }
    }

    /// One SSP-RK2 step of size `dt`.
    pub fn step_with(&self, u: &[f64], dt: f64) -> Result<Vec<f64>> {
        crate::error::ensure_dim("ADR field", self.dim(), u.len())?;
        let mut k = vec![0.0; u.len()];
        self.rhs(u, &mut k);
        let stage: Vec<f64> = u.iter().zip(&k).map(|(a, b)| a + dt * b).collect();
        self.rhs(&stage, &mut k);
        let out: Vec<f64> = u
            .iter()
            .zip(&stage)
            .zip(&k)
            .map(|((a, s), b)| 0.5 * a + 0.5 * (s + dt * b))
            .collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFinite("ADR step"))
        }
    }

    /// One internal step.
    pub fn step(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.step_with(u, self.internal_dt)
    }

    /// Advances by `duration` using equal sub-steps no larger than the internal step.
    pub fn advance(&self, u: &[f64], duration: f64) -> Result<Vec<f64>> {
        let substeps = libm::ceil(duration / self.internal_dt - 1e-9).max(1.0) as usize;
        let dt = duration / substeps as f64;
        let mut state = u.to_vec();
        for _ in 0..substeps {
            state = self.step_with(&state, dt)?;
        }
        Ok(state)
    }

    /// Advances one observation interval.
    pub fn advance_interval(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.advance(u, self.params.obs_interval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> AdrParams {
        AdrParams {
            grid_n: n,
            ..AdrParams::default()
        }
    }

    #[test]
    fn zero_field_stays_zero() {
        let s = AdrSolver::new(small(16)).unwrap();
        let u = vec![0.0; 256];
        assert!(s.step(&u).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_field_follows_scalar_reaction_ode() {
        let s = AdrSolver::new(small(16)).unwrap();
        let c = 0.9;
        let dt = s.internal_dt();
        let u = vec![c; 256];
        let next = s.step(&u).unwrap();
        // Scalar oracle: fine RK4 quadrature of du/dt = -α (sin u - u).
        let f = |v: f64| -0.8 * (libm::sin(v) - v);
        let mut v = c;
        let m = 1000;
        let hh = dt / m as f64;
        for _ in 0..m {
            let k1 = f(v);
            let k2 = f(v + 0.5 * hh * k1);
            let k3 = f(v + 0.5 * hh * k2);
            let k4 = f(v + hh * k3);
            v += hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        // SSP-RK2 local error is O(dt³).
        let tol = 10.0 * dt.powi(3) * 1.0;
        for x in &next {
            assert!((x - v).abs() < tol, "{x} vs {v}");
        }
        let spread = next.iter().fold(0.0f64, |m, x| m.max((x - next[0]).abs()));
        assert_eq!(spread, 0.0);
    }

    #[test]
    fn pure_diffusion_fourier_mode_decay() {
        let n = 32;
        let p = AdrParams {
            grid_n: n,
            reaction: 0.0,
            velocity_scale: 0.0,
            diffusion: 1e-2,
            ..AdrParams::default()
        };
        let s = AdrSolver::new(p).unwrap();
        let h = 1.0 / n as f64;
        let u: Vec<f64> = (0..n * n)
            .map(|idx| libm::sin(2.0 * PI * (idx % n) as f64 * h))
            .collect();
        let t = 0.5;
        let out = s.advance(&u, t).unwrap();
        let factor = libm::exp(-1e-2 * (2.0 * PI).powi(2) * t);
        // 5-point Laplacian eigenvalue differs from -(2π)² by O((2πh)²/12).
        for (a, b) in out.iter().zip(&u) {
            assert!((a - factor * b).abs() < 2e-3, "{a} vs {}", factor * b);
        }
    }

    #[test]
    fn pure_advection_conserves_grid_sum() {
        let n = 32;
        let p = AdrParams {
            grid_n: n,
            reaction: 0.0,
            diffusion: 0.0,
            ..AdrParams::default()
        };
        let s = AdrSolver::new(p).unwrap();
        let u: Vec<f64> = (0..n * n)
            .map(|k| libm::exp(-(((k % n) as f64 - 10.0).powi(2) + ((k / n) as f64 - 20.0).powi(2)) / 20.0))
            .collect();
        let mut state = u.clone();
        let sum0: f64 = u.iter().sum();
        for _ in 0..50 {
            let next = s.step(&state).unwrap();
            let before: f64 = state.iter().sum();
            let after: f64 = next.iter().sum();
            assert!(((after - before) / before).abs() < 1e-10);
            state = next;
        }
        let sum1: f64 = state.iter().sum();
        assert!(((sum1 - sum0) / sum0).abs() < 1e-10);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let r = AdrSolver::with_internal_dt(small(64), 0.01);
        assert!(matches!(r, Err(Error::CflViolation { .. })));
        let ok = AdrSolver::new(small(64)).unwrap();
        assert!(ok.courant(ok.internal_dt()) <= 0.5 + 1e-12);
    }

    #[test]
    fn sensor_lattice_has_25_distinct_points() {
        let idx = small(64).sensor_indices();
        assert_eq!(idx.len(), 25);
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 25);
        assert!(idx.iter().all(|&i| i < 64 * 64));
    }
}
