use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::stage1::{train_autoencoder, Stage1Config};
use super::train::{fit, Objective, TrainConfig, TrainReport};
use super::{delay_embed_rows, gather_rows, Autoencoder, LatentModel, NormalizationStats};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{Matrix, Op};
use crate::nn::{Activation, AdamState, Gradients, Network, DEFAULT_LEAKY_SLOPE};
use crate::rng::{label, substream};
use crate::systems::Dataset;

pub const GAMMA_JITTER: f64 = 1e-6;

/// Mean squared alignment error `‖E_obs(y) − t‖²` against precomputed latent
/// targets, with gradients for the observation encoder only.
pub fn stage2_loss_targets(obs_encoder: &Network, y: &Matrix, targets: &Matrix) -> Result<(f64, Gradients)> {
    ensure_dim("stage2 batch", y.rows(), targets.rows())?;
    ensure_dim("stage2 target width", obs_encoder.output_dim(), targets.cols())?;
    if y.rows() == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let inv_b = 1.0 / y.rows() as f64;
    let (out, trace) = obs_encoder.forward_traced(y)?;
    let mut r = out;
    let mut s = 0.0;
    for (v, t) in r.as_mut_slice().iter_mut().zip(targets.as_slice()) {
        *v -= t;
        s += *v * *v;
    }
    r.scale(2.0 * inv_b);
    let mut g = obs_encoder.zero_gradients();
    obs_encoder.backward(&trace, &r, &mut g)?;
    Ok((s * inv_b, g))
}

fn latent_targets(encoder: &Network, h: &Matrix, x: &Matrix) -> Result<Matrix> {
    ensure_dim("H columns", encoder.output_dim(), h.cols())?;
    encoder.forward_batch(x)?.mul(Op::N, h, Op::T)
}

/// Stage II loss with the frozen encoder: targets are `H E(x)`.
pub fn stage2_loss(
    obs_encoder: &Network,
    encoder: &Network,
    h: &Matrix,
    y: &Matrix,
    x: &Matrix,
) -> Result<(f64, Gradients)> {
    stage2_loss_targets(obs_encoder, y, &latent_targets(encoder, h, x)?)
}

/// Normalized `(y_k^{(L)}, x_k)` pairs for every time index of the listed
/// trajectories, delay windows padded with each trajectory's first
/// observation.
pub fn observation_pairs(
    dataset: &Dataset,
    indices: &[usize],
    state_stats: &NormalizationStats,
    obs_stats: &NormalizationStats,
    delay: usize,
) -> Result<(Matrix, Matrix)> {
    let dy = obs_stats.dim();
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut rows = 0;
    for &i in indices {
        let obs = obs_stats.normalize_rows(&dataset.observations[i])?;
        let emb = delay_embed_rows(&obs, delay)?;
        let traj = &dataset.trajectories[i];
        ensure_dim("observation rows", traj.len(), emb.rows())?;
        for k in 0..emb.rows() {
            ys.extend_from_slice(emb.row(k));
            xs.extend(state_stats.normalize(traj.state(k)));
            rows += 1;
        }
    }
    Ok((
        Matrix::from_vec(rows, delay * dy, ys)?,
        Matrix::from_vec(rows, state_stats.dim(), xs)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTwoData {
    pub y: Matrix,
    pub x: Matrix,
    pub val_y: Matrix,
    pub val_x: Matrix,
}

impl StageTwoData {
    pub fn from_dataset(
        dataset: &Dataset,
        state_stats: &NormalizationStats,
        obs_stats: &NormalizationStats,
        delay: usize,
    ) -> Result<Self> {
        let (y, x) = observation_pairs(dataset, &dataset.split.train, state_stats, obs_stats, delay)?;
        let val = if dataset.split.test.is_empty() {
            &dataset.split.train
        } else {
            &dataset.split.test
        };
        let (val_y, val_x) = observation_pairs(dataset, val, state_stats, obs_stats, delay)?;
        Ok(Self { y, x, val_y, val_x })
    }
}

struct Stage2Objective<'a> {
    net: Network,
    y: &'a Matrix,
    targets: Matrix,
    val_y: &'a Matrix,
    val_targets: Matrix,
}

impl Objective for Stage2Objective<'_> {
    type Snapshot = Network;

    fn n_train(&self) -> usize {
        self.y.rows()
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.net.params().iter().map(|p| p.len()).collect()
    }

    fn loss_grad(&mut self, rows: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (l, g) = stage2_loss_targets(&self.net, &gather_rows(self.y, rows), &gather_rows(&self.targets, rows))?;
        Ok((l, g.tensors))
    }

    fn apply(&mut self, adam: &mut AdamState, grads: &[Vec<f64>]) -> Result<()> {
        let g: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam.step(&mut self.net.params_mut(), &g)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let out = self.net.forward_batch(self.val_y)?;
        let s: f64 = out
            .as_slice()
            .iter()
            .zip(self.val_targets.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(s / self.val_y.rows().max(1) as f64)
    }

    fn snapshot(&self) -> Network {
        self.net.clone()
    }

    fn restore(&mut self, snapshot: Network) {
        self.net = snapshot;
    }
}

/// Fits the observation encoder with `E`, `D` and `A` frozen.
pub fn train_stage2<R: Rng + ?Sized>(
    ae: &Autoencoder,
    h: &Matrix,
    obs_encoder: Network,
    data: &StageTwoData,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Network, TrainReport)> {
    ensure_dim("obs encoder input", data.y.cols(), obs_encoder.input_dim())?;
    ensure_dim("obs encoder output", h.rows(), obs_encoder.output_dim())?;
    let mut obj = Stage2Objective {
        net: obs_encoder,
        y: &data.y,
        targets: latent_targets(&ae.encoder, h, &data.x)?,
        val_y: &data.val_y,
        val_targets: latent_targets(&ae.encoder, h, &data.val_x)?,
    };
    let report = fit(&mut obj, cfg, "stage2", rng)?;
    Ok((obj.net, report))
}

/// Sample covariance of residual rows plus `GAMMA_JITTER · I`; diagonal
/// variances when there are fewer than `m + 1` residuals.
pub fn gamma_from_residuals(r: &Matrix) -> Matrix {
    let (n, m) = r.shape();
    let mut g = Matrix::zeros(m, m);
    if n >= 2 {
        let mean = r.column_means();
        let mut c = r.clone();
        for i in 0..n {
            for (v, mu) in c.row_mut(i).iter_mut().zip(&mean) {
                *v -= mu;
            }
        }
        let denom = 1.0 / (n - 1) as f64;
        if n > m {
            g = c.mul(Op::T, &c, Op::N).expect("shapes");
            g.scale(denom);
            g.symmetrize();
        } else {
            for j in 0..m {
                g[(j, j)] = c.row_iter().map(|row| row[j] * row[j]).sum::<f64>() * denom;
            }
        }
    }
    for j in 0..m {
        g[(j, j)] += GAMMA_JITTER;
    }
    g
}

/// `Γ̃` from residuals `E_obs(y^{(L)}) − H E(x)` over normalized validation
/// pairs.
pub fn estimate_gamma_tilde(
    obs_encoder: &Network,
    encoder: &Network,
    h: &Matrix,
    val_y: &Matrix,
    val_x: &Matrix,
) -> Result<Matrix> {
    let mut r = obs_encoder.forward_batch(val_y)?;
    r.axpy(-1.0, &latent_targets(encoder, h, val_x)?)?;
    Ok(gamma_from_residuals(&r))
}

/// Settings for the observation encoder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Stage2Config {
    pub hidden: Vec<usize>,
    pub delay: usize,
    pub train: TrainConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            delay: 1,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LatentTrainConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// Latent observation matrix; identity when absent.
    pub h: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentTrainReport {
    pub stage1: TrainReport,
    pub stage2: TrainReport,
}

/// Stage I, Stage II and `Γ̃` estimation on the dataset's split.
pub fn train_latent_model(
    dataset: &Dataset,
    cfg: &LatentTrainConfig,
    seed: u64,
) -> Result<(LatentModel, LatentTrainReport)> {
    let delay = cfg.stage2.delay;
    if delay == 0 {
        return Err(Error::InvalidParameter("delay must be >= 1".into()));
    }
    let (ae, state_stats, r1) = train_autoencoder(dataset, &cfg.stage1, seed)?;
    let n = ae.latent_dim();
    let h = cfg.h.clone().unwrap_or_else(|| Matrix::identity(n));
    ensure_dim("H columns", n, h.cols())?;
    let obs_stats = NormalizationStats::fit(
        dataset
            .split
            .train
            .iter()
            .flat_map(|&i| dataset.observations[i].row_iter()),
    )?;
    let data = StageTwoData::from_dataset(dataset, &state_stats, &obs_stats, delay)?;
    let mut dims = vec![data.y.cols()];
    dims.extend(&cfg.stage2.hidden);
    dims.push(h.rows());
    let slope = if cfg.stage1.leaky_slope > 0.0 {
        cfg.stage1.leaky_slope
    } else {
        DEFAULT_LEAKY_SLOPE
    };
    let obs_encoder = Network::init(&dims, Activation::LeakyRelu(slope), &mut substream(seed, label::TRAINING, 3))?;
    let (obs_encoder, r2) = train_stage2(
        &ae,
        &h,
        obs_encoder,
        &data,
        &cfg.stage2.train,
        &mut substream(seed, label::TRAINING, 5),
    )?;
    let gamma_tilde = estimate_gamma_tilde(&obs_encoder, &ae.encoder, &h, &data.val_y, &data.val_x)?;
    let model = LatentModel {
        autoencoder: ae,
        obs_encoder,
        h,
        gamma_tilde,
        state_stats,
        obs_stats,
        delay,
    };
    model.validate()?;
    Ok((model, LatentTrainReport { stage1: r1, stage2: r2 }))
}
