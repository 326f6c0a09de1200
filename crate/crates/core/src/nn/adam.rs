use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_dim, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        ensure_dim("adam tensor count", self.m.len(), params.len())?;
        ensure_dim("adam gradient count", self.m.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            ensure_dim("adam parameter", m.len(), p.len())?;
            ensure_dim("adam gradient", m.len(), g.len())?;
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = [0.5];
        s.step(&mut [&mut p], &[&[1.0]]).unwrap();
        let expected = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-16);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..5 {
            s.step(&mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
    }

    #[test]
    fn two_steps_match_scalar_reimplementation() {
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let g = 0.37;
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut s = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = [1.0];
        s.step(&mut [&mut p], &[&[g]]).unwrap();
        s.step(&mut [&mut p], &[&[g]]).unwrap();
        assert!((p[0] - x).abs() < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = AdamState::new(AdamConfig::default(), &[2]);
        let mut p = [0.0; 3];
        assert!(s.step(&mut [&mut p], &[&[0.0; 3]]).is_err());
    }
}
