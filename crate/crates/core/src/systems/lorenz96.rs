use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::systems::ode::rk4_step;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Lorenz96Params {
    pub dim: usize,
    pub forcing: f64,
    /// RK4 integration step.
    pub dt: f64,
    /// Time between consecutive observations.
    pub obs_interval: f64,
    /// RK4 steps discarded before a trajectory is recorded.
    pub burn_in_steps: usize,
    /// Stride of the component-subsampling observation operator.
    pub obs_stride: usize,
    pub obs_noise_std: f64,
    /// Std of additive model error per observation interval (0 = perfect model).
    pub model_noise_std: f64,
}

impl Default for Lorenz96Params {
    fn default() -> Self {
        Self {
            dim: 40,
            forcing: 8.0,
            dt: 0.01,
            obs_interval: 0.1,
            burn_in_steps: 1000,
            obs_stride: 2,
            obs_noise_std: 1.0,
            model_noise_std: 0.0,
        }
    }
}

impl Lorenz96Params {
    /// RK4 steps per observation interval.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.obs_interval / self.dt;
        let steps = libm::round(ratio);
        if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "observation interval {} is not a positive multiple of dt {}",
                self.obs_interval,
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// `dx_i/dt = (x_{i+1} − x_{i−2}) x_{i−1} − x_i + F` with periodic indices.
pub fn lorenz96_rhs_into(x: &[f64], forcing: f64, out: &mut [f64]) {
    let d = x.len();
    for i in 0..d {
        let ip1 = if i + 1 == d { 0 } else { i + 1 };
        let im1 = if i == 0 { d - 1 } else { i - 1 };
        let im2 = (i + d - 2) % d;
        out[i] = (x[ip1] - x[im2]) * x[im1] - x[i] + forcing;
    }
}

pub fn lorenz96_rhs(x: &[f64], forcing: f64) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::InvalidParameter(alloc::format!(
            "Lorenz-96 needs at least 4 variables, got {}",
            x.len()
        )));
    }
    let mut out = alloc::vec![0.0; x.len()];
    lorenz96_rhs_into(x, forcing, &mut out);
    Ok(out)
}

pub fn lorenz96_rk4_step(x: &[f64], forcing: f64, dt: f64) -> Result<Vec<f64>> {
    if x.len() < 4 {
        return Err(Error::InvalidParameter("Lorenz-96 needs at least 4 variables".into()));
    }
    rk4_step(|s, o| lorenz96_rhs_into(s, forcing, o), x, dt)
}

/// Integrates `steps` RK4 steps.
pub fn lorenz96_integrate(x: &[f64], forcing: f64, dt: f64, steps: usize) -> Result<Vec<f64>> {
    let mut state = x.to_vec();
    for _ in 0..steps {
        state = lorenz96_rk4_step(&state, forcing, dt)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_forcing_state_is_fixed_point() {
        let x = [8.0; 40];
        assert!(lorenz96_rhs(&x, 8.0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_state_gives_forcing() {
        let r = lorenz96_rhs(&[0.0; 10], 8.0).unwrap();
        assert!(r.iter().all(|v| *v == 8.0));
    }

    #[test]
    fn unit_basis_vector_by_index_expansion() {
        // D=5, x = e_0, F=0. Expanding (x_{i+1} - x_{i-2}) x_{i-1} - x_i by hand:
        // i=0: (x1 - x3) x4 - x0 = -1
        // i=1: (x2 - x4) x0 - x1 = 0
        // i=2: (x3 - x0) x1 - x2 = 0
        // i=3: (x4 - x1) x2 - x3 = 0
        // i=4: (x0 - x2) x3 - x4 = 0
        let mut e0 = [0.0; 5];
        e0[0] = 1.0;
        assert_eq!(lorenz96_rhs(&e0, 0.0).unwrap(), [-1.0, 0.0, 0.0, 0.0, 0.0]);
        // A less degenerate check: x = (1,2,3,4,5), F = 0.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let expected = [
            (2.0 - 4.0) * 5.0 - 1.0,
            (3.0 - 5.0) * 1.0 - 2.0,
            (4.0 - 1.0) * 2.0 - 3.0,
            (5.0 - 2.0) * 3.0 - 4.0,
            (1.0 - 3.0) * 4.0 - 5.0,
        ];
        assert_eq!(lorenz96_rhs(&x, 0.0).unwrap(), expected);
    }

    #[test]
    fn too_small_dimension_is_rejected() {
        assert!(lorenz96_rhs(&[1.0, 2.0, 3.0], 8.0).is_err());
    }

    #[test]
    fn one_step_agrees_with_two_half_steps() {
        let x = [0.0; 40];
        let full = lorenz96_rk4_step(&x, 8.0, 0.01).unwrap();
        let half = lorenz96_integrate(&x, 8.0, 0.005, 2).unwrap();
        for (a, b) in full.iter().zip(half) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn substeps_from_interval() {
        let p = Lorenz96Params {
            obs_interval: 0.2,
            ..Default::default()
        };
        assert_eq!(p.substeps().unwrap(), 20);
        let bad = Lorenz96Params {
            obs_interval: 0.015,
            ..Default::default()
        };
        assert!(bad.substeps().is_err());
    }
}
