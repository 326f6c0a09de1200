//! Latent model: normalization, time-delay embedding and two-stage training
//! of the encoder, decoder, latent transition and observation encoder.

mod stage1;
mod stage2;
mod train;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Gradients, LinearOperator, Network, Trace};

pub use stage1::{
    stage1_loss, stage1_loss_with, stage1_value, state_pairs, train_autoencoder, train_stage1, PowerIteration,
    Stage1Config, Stage1Gradients, Stage1Loss, Stage1Terms, StageOneData,
};
pub use stage2::{
    estimate_gamma_tilde, gamma_from_residuals, observation_pairs, stage2_loss, stage2_loss_targets,
    train_latent_model, train_stage2, LatentTrainConfig, LatentTrainReport, Stage2Config, StageTwoData,
    GAMMA_JITTER,
};
pub use train::{TrainConfig, TrainReport};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-component mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    /// Population moments (divisor `N`) of the given rows, with the standard
    /// deviation floored at [`STD_FLOOR`].
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter().peekable();
        let dim = match iter.peek() {
            Some(r) => r.len(),
            None => return Err(Error::InvalidParameter("normalization needs at least one row".into())),
        };
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford updates keep the moments exact enough for the 1e-10 checks.
        for r in iter {
            ensure_dim("normalization row", dim, r.len())?;
            n += 1;
            for j in 0..dim {
                let d = r[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (r[j] - mean[j]);
            }
        }
        let std = m2
            .iter()
            .map(|v| libm::sqrt(v / n as f64).max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn normalize_rows(&self, x: &Matrix) -> Result<Matrix> {
        ensure_dim("normalization width", self.dim(), x.cols())?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn denormalize_rows(&self, x: &Matrix) -> Result<Matrix> {
        ensure_dim("normalization width", self.dim(), x.cols())?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub rec: f64,
    pub pred: f64,
    pub latent: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec: 1.0,
            pred: 1.0,
            latent: 1.0,
            reg: 10.0,
        }
    }
}

impl LossWeights {
    /// Reconstruction only, as used by the plain autoencoder baseline.
    pub fn reconstruction_only() -> Self {
        Self {
            rec: 1.0,
            pred: 0.0,
            latent: 0.0,
            reg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rec", self.rec), ("pred", self.pred), ("latent", self.latent), ("reg", self.reg)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(alloc::format!("loss weight {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Shape of the latent transition to learn.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PropagatorKind {
    #[default]
    Linear,
    /// Two dense layers with a LeakyReLU hidden layer of the given width.
    Nonlinear { hidden: usize },
}

/// Latent one-step map.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", content = "params", rename_all = "snake_case"))]
pub enum Propagator {
    Linear(LinearOperator),
    Nonlinear(Network),
}

pub(crate) enum PropagatorTrace {
    Linear(Matrix),
    Nonlinear(Trace),
}

impl Propagator {
    pub fn dim(&self) -> usize {
        match self {
            Propagator::Linear(op) => op.dim(),
            Propagator::Nonlinear(net) => net.input_dim(),
        }
    }

    pub fn linear_operator(&self) -> Option<&Matrix> {
        match self {
            Propagator::Linear(op) => Some(&op.a),
            Propagator::Nonlinear(_) => None,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Propagator::Linear(op) => op.apply(z),
            Propagator::Nonlinear(net) => net.forward(z),
        }
    }

    pub fn apply_batch(&self, z: &Matrix) -> Result<Matrix> {
        match self {
            Propagator::Linear(op) => op.apply_batch(z),
            Propagator::Nonlinear(net) => net.forward_batch(z),
        }
    }

    pub(crate) fn forward_traced(&self, z: &Matrix) -> Result<(Matrix, PropagatorTrace)> {
        match self {
            Propagator::Linear(op) => Ok((op.apply_batch(z)?, PropagatorTrace::Linear(z.clone()))),
            Propagator::Nonlinear(net) => {
                let (out, tr) = net.forward_traced(z)?;
                Ok((out, PropagatorTrace::Nonlinear(tr)))
            }
        }
    }

    pub(crate) fn backward(&self, trace: &PropagatorTrace, grad_out: &Matrix, grads: &mut [Vec<f64>]) -> Result<Matrix> {
        match (self, trace) {
            (Propagator::Linear(op), PropagatorTrace::Linear(z)) => {
                let n = op.dim();
                let mut ga = Matrix::from_vec(n, n, core::mem::take(&mut grads[0]))?;
                let dz = op.backward(z, grad_out, &mut ga)?;
                grads[0] = ga.into_vec();
                Ok(dz)
            }
            (Propagator::Nonlinear(net), PropagatorTrace::Nonlinear(tr)) => {
                let mut g = Gradients {
                    tensors: grads.iter_mut().map(core::mem::take).collect(),
                };
                let dz = net.backward(tr, grad_out, &mut g)?;
                for (dst, src) in grads.iter_mut().zip(g.tensors) {
                    *dst = src;
                }
                Ok(dz)
            }
            _ => Err(Error::MissingTrace),
        }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Propagator::Linear(op) => vec![op.a.as_slice()],
            Propagator::Nonlinear(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Propagator::Linear(op) => vec![op.a.as_mut_slice()],
            Propagator::Nonlinear(net) => net.params_mut(),
        }
    }

    pub fn zero_gradients(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }
}

/// Stage I product: encoder, decoder and latent transition.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
    pub propagator: Propagator,
}

impl Autoencoder {
    pub fn new(encoder: Network, decoder: Network, propagator: Propagator) -> Result<Self> {
        let n = encoder.output_dim();
        ensure_dim("decoder input", n, decoder.input_dim())?;
        ensure_dim("decoder output", encoder.input_dim(), decoder.output_dim())?;
        ensure_dim("propagator", n, propagator.dim())?;
        if let Propagator::Nonlinear(net) = &propagator {
            ensure_dim("propagator output", n, net.output_dim())?;
        }
        Ok(Self {
            encoder,
            decoder,
            propagator,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p.extend(self.propagator.params_mut());
        p
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        self.encoder
            .params()
            .into_iter()
            .chain(self.decoder.params())
            .chain(self.propagator.params())
            .map(<[f64]>::len)
            .collect()
    }

    /// `D(E(x))` on normalized rows.
    pub fn reconstruct_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.decoder.forward_batch(&self.encoder.forward_batch(x)?)
    }
}

/// Trained bundle used by the latent filter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentModel {
    pub autoencoder: Autoencoder,
    pub obs_encoder: Network,
    /// Latent observation matrix `m × n`.
    pub h: Matrix,
    /// Latent observation noise covariance `m × m`.
    pub gamma_tilde: Matrix,
    pub state_stats: NormalizationStats,
    pub obs_stats: NormalizationStats,
    pub delay: usize,
}

impl LatentModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.autoencoder.latent_dim();
        let m = self.h.rows();
        ensure_dim("H columns", n, self.h.cols())?;
        ensure_dim("obs encoder output", m, self.obs_encoder.output_dim())?;
        ensure_dim("gamma rows", m, self.gamma_tilde.rows())?;
        ensure_dim("gamma cols", m, self.gamma_tilde.cols())?;
        ensure_dim("state stats", self.autoencoder.state_dim(), self.state_stats.dim())?;
        ensure_dim("obs encoder input", self.delay * self.obs_stats.dim(), self.obs_encoder.input_dim())?;
        if self.delay == 0 {
            return Err(Error::InvalidParameter("delay must be >= 1".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.autoencoder.latent_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.autoencoder.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_stats.dim()
    }

    pub fn latent_obs_dim(&self) -> usize {
        self.h.rows()
    }

    /// `E(normalize(x))` for physical rows.
    pub fn encode_states(&self, x: &Matrix) -> Result<Matrix> {
        self.autoencoder.encoder.forward_batch(&self.state_stats.normalize_rows(x)?)
    }

    /// `denormalize(D(z))` for latent rows.
    pub fn decode_states(&self, z: &Matrix) -> Result<Matrix> {
        self.state_stats
            .denormalize_rows(&self.autoencoder.decoder.forward_batch(z)?)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.state_stats.denormalize(&self.autoencoder.decoder.forward(z)?))
    }

    /// `E_obs` applied to the delay window ending at row `k` of physical
    /// observations.
    pub fn encode_observation(&self, observations: &Matrix, k: usize) -> Result<Vec<f64>> {
        ensure_dim("observation width", self.obs_dim(), observations.cols())?;
        let window = delay_embed(observations, k, self.delay)?;
        let dy = self.obs_dim();
        let normalized: Vec<f64> = window
            .chunks(dy)
            .flat_map(|c| self.obs_stats.normalize(c))
            .collect();
        self.obs_encoder.forward(&normalized)
    }
}

/// `[y_{k−L+1}, …, y_k]` from the rows of `observations`, newest last.
/// Indices before the first row repeat the earliest available observation.
pub fn delay_embed(observations: &Matrix, k: usize, delay: usize) -> Result<Vec<f64>> {
    if delay == 0 {
        return Err(Error::InvalidParameter("delay must be >= 1".into()));
    }
    if k >= observations.rows() {
        return Err(Error::DimensionMismatch {
            context: "delay embedding index",
            expected: observations.rows(),
            got: k,
        });
    }
    let mut out = Vec::with_capacity(delay * observations.cols());
    for lag in (0..delay).rev() {
        let idx = k.saturating_sub(lag);
        out.extend_from_slice(observations.row(idx));
    }
    Ok(out)
}

/// Delay embedding of every row, one output row per input row.
pub fn delay_embed_rows(observations: &Matrix, delay: usize) -> Result<Matrix> {
    let rows: Result<Vec<Vec<f64>>> = (0..observations.rows())
        .map(|k| delay_embed(observations, k, delay))
        .collect();
    Matrix::from_rows(&rows?)
}

pub(crate) fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_embedding_order_and_padding() {
        let y = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        assert_eq!(delay_embed(&y, 2, 3).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(delay_embed(&y, 0, 3).unwrap(), [1.0, 1.0, 1.0]);
        assert_eq!(delay_embed(&y, 1, 1).unwrap(), [2.0]);
        assert_eq!(delay_embed(&y, 1, 3).unwrap(), [1.0, 1.0, 2.0]);
        let y2 = Matrix::from_rows(&[[1.0, 10.0], [2.0, 20.0]]).unwrap();
        let e = delay_embed_rows(&y2, 4).unwrap();
        assert_eq!(e.shape(), (2, 8));
        assert_eq!(e.row(1), [1.0, 10.0, 1.0, 10.0, 1.0, 10.0, 2.0, 20.0]);
    }

    #[test]
    fn normalization_round_trip() {
        let rows = [[1.0, 5.0], [3.0, 5.0], [2.0, 5.0]];
        let stats = NormalizationStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(stats.mean, [2.0, 5.0]);
        assert_eq!(stats.std[1], STD_FLOOR);
        assert_eq!(stats.normalize(&[2.0, 5.0]), [0.0, 0.0]);
        let x = [0.123, -7.5];
        let back = stats.denormalize(&stats.normalize(&x));
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let mut w = LossWeights::default();
        w.pred = -1.0;
        assert!(w.validate().is_err());
        w.pred = f64::NAN;
        assert!(w.validate().is_err());
    }
}
