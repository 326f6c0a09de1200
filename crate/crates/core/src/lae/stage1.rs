use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::train::{fit, Objective, TrainConfig, TrainReport};
use super::{gather_rows, Autoencoder, LossWeights, NormalizationStats, Propagator, PropagatorKind};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{
    spectral_norm, spectral_norm_from, spectral_penalty_from_norm, Activation, AdamState, Gradients,
    LinearOperator, Network, SpectralNorm, DEFAULT_LEAKY_SLOPE, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::rng::{derive_seed, label, substream};
use crate::systems::{Dataset, Trajectory};

/// Power-iteration settings for the spectral penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PowerIteration {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Unweighted loss terms; `total` carries the weights. Terms whose weight is
/// zero are skipped and reported as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage1Terms {
    pub rec: f64,
    pub pred: f64,
    pub latent: f64,
    pub reg: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Gradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub propagator: Vec<Vec<f64>>,
}

impl Stage1Gradients {
    /// Tensors in the order of [`Autoencoder::params_mut`].
    pub fn into_tensors(self) -> Vec<Vec<f64>> {
        let mut t = self.encoder.tensors;
        t.extend(self.decoder.tensors);
        t.extend(self.propagator);
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Loss {
    pub terms: Stage1Terms,
    pub grads: Stage1Gradients,
    /// Leading singular triple of `A` when the penalty is active.
    pub spectral: Option<SpectralNorm>,
}

fn sq_residual(a: &Matrix, b: &Matrix) -> (f64, Matrix) {
    let mut r = a.clone();
    let mut s = 0.0;
    for (v, t) in r.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *v -= t;
        s += *v * *v;
    }
    (s, r)
}

fn check_batch(ae: &Autoencoder, x: &Matrix, x_next: &Matrix) -> Result<()> {
    ensure_dim("stage1 input width", ae.state_dim(), x.cols())?;
    ensure_dim("stage1 target width", ae.state_dim(), x_next.cols())?;
    ensure_dim("stage1 batch", x.rows(), x_next.rows())?;
    if x.rows() == 0 {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    Ok(())
}

fn leading_pair(a: &Matrix, power: &PowerIteration, warm: Option<&[f64]>) -> SpectralNorm {
    match warm {
        Some(v) if v.len() == a.cols() => spectral_norm_from(a, v, power.tol, power.max_iter),
        _ => spectral_norm(a, power.tol, power.max_iter),
    }
}

/// Composite Stage I loss at default power-iteration settings.
pub fn stage1_loss(ae: &Autoencoder, x: &Matrix, x_next: &Matrix, weights: &LossWeights) -> Result<Stage1Loss> {
    stage1_loss_with(ae, x, x_next, weights, &PowerIteration::default(), None)
}

/// Composite Stage I loss on normalized pairs `(x_k, x_{k+1})` (one pair per
/// row) with exact gradients for every parameter of `ae`. `warm` seeds the
/// power iteration with a previous right singular vector.
pub fn stage1_loss_with(
    ae: &Autoencoder,
    x: &Matrix,
    x_next: &Matrix,
    weights: &LossWeights,
    power: &PowerIteration,
    warm: Option<&[f64]>,
) -> Result<Stage1Loss> {
    check_batch(ae, x, x_next)?;
    let inv_b = 1.0 / x.rows() as f64;
    let mut terms = Stage1Terms::default();
    let mut g_enc = ae.encoder.zero_gradients();
    let mut g_dec = ae.decoder.zero_gradients();
    let mut g_prop = ae.propagator.zero_gradients();

    let (z, enc_trace) = ae.encoder.forward_traced(x)?;
    let mut dz = Matrix::zeros(z.rows(), z.cols());

    if weights.rec > 0.0 {
        let (xr, tr) = ae.decoder.forward_traced(&z)?;
        let (s, mut r) = sq_residual(&xr, x);
        terms.rec = s * inv_b;
        r.scale(2.0 * weights.rec * inv_b);
        dz.axpy(1.0, &ae.decoder.backward(&tr, &r, &mut g_dec)?)?;
    }

    if weights.pred > 0.0 || weights.latent > 0.0 {
        let (zp, prop_trace) = ae.propagator.forward_traced(&z)?;
        let mut dzp = Matrix::zeros(zp.rows(), zp.cols());
        if weights.pred > 0.0 {
            let (xp, tr) = ae.decoder.forward_traced(&zp)?;
            let (s, mut r) = sq_residual(&xp, x_next);
            terms.pred = s * inv_b;
            r.scale(2.0 * weights.pred * inv_b);
            dzp.axpy(1.0, &ae.decoder.backward(&tr, &r, &mut g_dec)?)?;
        }
        if weights.latent > 0.0 {
            let (z1, tr) = ae.encoder.forward_traced(x_next)?;
            let (s, mut r) = sq_residual(&zp, &z1);
            terms.latent = s * inv_b;
            r.scale(2.0 * weights.latent * inv_b);
            dzp.axpy(1.0, &r)?;
            r.scale(-1.0);
            ae.encoder.backward(&tr, &r, &mut g_enc)?;
        }
        dz.axpy(1.0, &ae.propagator.backward(&prop_trace, &dzp, &mut g_prop)?)?;
    }
    ae.encoder.backward(&enc_trace, &dz, &mut g_enc)?;

    let mut spectral = None;
    if weights.reg > 0.0 {
        if let Propagator::Linear(op) = &ae.propagator {
            let pen = spectral_penalty_from_norm(&op.a, leading_pair(&op.a, power, warm));
            terms.reg = pen.value;
            for (g, p) in g_prop[0].iter_mut().zip(pen.grad.as_slice()) {
                *g += weights.reg * p;
            }
            spectral = Some(pen.norm);
        }
    }
    terms.total = weights.rec * terms.rec
        + weights.pred * terms.pred
        + weights.latent * terms.latent
        + weights.reg * terms.reg;
    Ok(Stage1Loss {
        terms,
        grads: Stage1Gradients {
            encoder: g_enc,
            decoder: g_dec,
            propagator: g_prop,
        },
        spectral,
    })
}

const EVAL_CHUNK: usize = 2048;

/// Loss terms only, evaluated in row chunks.
pub fn stage1_value(
    ae: &Autoencoder,
    x: &Matrix,
    x_next: &Matrix,
    weights: &LossWeights,
    power: &PowerIteration,
) -> Result<Stage1Terms> {
    check_batch(ae, x, x_next)?;
    let mut terms = Stage1Terms::default();
    let idx: Vec<usize> = (0..x.rows()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let xb = gather_rows(x, chunk);
        let xnb = gather_rows(x_next, chunk);
        let z = ae.encoder.forward_batch(&xb)?;
        if weights.rec > 0.0 {
            terms.rec += sq_residual(&ae.decoder.forward_batch(&z)?, &xb).0;
        }
        if weights.pred > 0.0 || weights.latent > 0.0 {
            let zp = ae.propagator.apply_batch(&z)?;
            if weights.pred > 0.0 {
                terms.pred += sq_residual(&ae.decoder.forward_batch(&zp)?, &xnb).0;
            }
            if weights.latent > 0.0 {
                terms.latent += sq_residual(&zp, &ae.encoder.forward_batch(&xnb)?).0;
            }
        }
    }
    let inv_b = 1.0 / x.rows() as f64;
    terms.rec *= inv_b;
    terms.pred *= inv_b;
    terms.latent *= inv_b;
    if weights.reg > 0.0 {
        if let Propagator::Linear(op) = &ae.propagator {
            terms.reg = spectral_penalty_from_norm(&op.a, spectral_norm(&op.a, power.tol, power.max_iter)).value;
        }
    }
    terms.total = weights.rec * terms.rec
        + weights.pred * terms.pred
        + weights.latent * terms.latent
        + weights.reg * terms.reg;
    Ok(terms)
}

/// Normalized one-step pairs `(x_k, x_{k+1})` from every trajectory.
pub fn state_pairs<'a, I>(trajectories: I, stats: &NormalizationStats) -> Result<(Matrix, Matrix)>
where
    I: IntoIterator<Item = &'a Trajectory>,
{
    let mut xs = Vec::new();
    let mut xn = Vec::new();
    let mut rows = 0;
    for t in trajectories {
        ensure_dim("trajectory width", stats.dim(), t.states.cols())?;
        for k in 0..t.len().saturating_sub(1) {
            xs.extend(stats.normalize(t.state(k)));
            xn.extend(stats.normalize(t.state(k + 1)));
            rows += 1;
        }
    }
    Ok((
        Matrix::from_vec(rows, stats.dim(), xs)?,
        Matrix::from_vec(rows, stats.dim(), xn)?,
    ))
}

/// Normalized training and validation pairs for Stage I.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOneData {
    pub x: Matrix,
    pub x_next: Matrix,
    pub val_x: Matrix,
    pub val_x_next: Matrix,
}

impl StageOneData {
    pub fn from_dataset(dataset: &Dataset, stats: &NormalizationStats) -> Result<Self> {
        let (x, x_next) = state_pairs(dataset.split.train.iter().map(|&i| &dataset.trajectories[i]), stats)?;
        let val: Vec<usize> = if dataset.split.test.is_empty() {
            dataset.split.train.clone()
        } else {
            dataset.split.test.clone()
        };
        let (val_x, val_x_next) = state_pairs(val.iter().map(|&i| &dataset.trajectories[i]), stats)?;
        Ok(Self {
            x,
            x_next,
            val_x,
            val_x_next,
        })
    }
}

struct Stage1Objective<'a> {
    ae: Autoencoder,
    data: &'a StageOneData,
    weights: LossWeights,
    power: PowerIteration,
    warm: Option<Vec<f64>>,
    warnings: usize,
}

impl Objective for Stage1Objective<'_> {
    type Snapshot = Autoencoder;

    fn n_train(&self) -> usize {
        self.data.x.rows()
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.ae.param_sizes()
    }

    fn loss_grad(&mut self, rows: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
        let xb = gather_rows(&self.data.x, rows);
        let xnb = gather_rows(&self.data.x_next, rows);
        let loss = stage1_loss_with(&self.ae, &xb, &xnb, &self.weights, &self.power, self.warm.as_deref())?;
        if let Some(s) = loss.spectral {
            if !s.converged {
                self.warnings += 1;
            }
            self.warm = Some(s.v);
        }
        Ok((loss.terms.total, loss.grads.into_tensors()))
    }

    fn apply(&mut self, adam: &mut AdamState, grads: &[Vec<f64>]) -> Result<()> {
        let g: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        adam.step(&mut self.ae.params_mut(), &g)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        Ok(stage1_value(&self.ae, &self.data.val_x, &self.data.val_x_next, &self.weights, &self.power)?.total)
    }

    fn snapshot(&self) -> Autoencoder {
        self.ae.clone()
    }

    fn restore(&mut self, snapshot: Autoencoder) {
        self.ae = snapshot;
    }
}

/// Adam on the Stage I loss with early stopping; returns the best
/// checkpoint.
pub fn train_stage1<R: Rng + ?Sized>(
    ae: Autoencoder,
    data: &StageOneData,
    weights: &LossWeights,
    power: &PowerIteration,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Autoencoder, TrainReport)> {
    weights.validate()?;
    let mut obj = Stage1Objective {
        ae,
        data,
        weights: *weights,
        power: *power,
        warm: None,
        warnings: 0,
    };
    let mut report = fit(&mut obj, cfg, "stage1", rng)?;
    report.power_iteration_warnings = obj.warnings;
    Ok((obj.ae, report))
}

/// Architecture and schedule of Stage I.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Stage1Config {
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub weights: LossWeights,
    pub propagator: PropagatorKind,
    pub power: PowerIteration,
    pub train: TrainConfig,
    /// Independent initializations to train; the one with the lowest best
    /// validation loss is kept.
    pub restarts: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            hidden: vec![256, 128],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            weights: LossWeights::default(),
            propagator: PropagatorKind::Linear,
            power: PowerIteration::default(),
            train: TrainConfig::default(),
            restarts: 1,
        }
    }
}

impl Stage1Config {
    /// Freshly initialized networks for a state of dimension `dim`.
    pub fn init_autoencoder(&self, dim: usize, seed: u64) -> Result<Autoencoder> {
        let n = self.latent_dim;
        let act = Activation::LeakyRelu(self.leaky_slope);
        let mut enc_dims = vec![dim];
        enc_dims.extend(&self.hidden);
        enc_dims.push(n);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = Network::init(&enc_dims, act, &mut substream(seed, label::TRAINING, 0))?;
        let decoder = Network::init(&dec_dims, act, &mut substream(seed, label::TRAINING, 1))?;
        let propagator = match self.propagator {
            PropagatorKind::Linear => Propagator::Linear(LinearOperator::init(n)),
            PropagatorKind::Nonlinear { hidden } => Propagator::Nonlinear(Network::init(
                &[n, hidden, n],
                act,
                &mut substream(seed, label::TRAINING, 2),
            )?),
        };
        Autoencoder::new(encoder, decoder, propagator)
    }
}

const RESTART_LABEL: &str = "stage1-restart";

/// Normalization statistics from the training split, then Stage I.
pub fn train_autoencoder(
    dataset: &Dataset,
    cfg: &Stage1Config,
    seed: u64,
) -> Result<(Autoencoder, NormalizationStats, TrainReport)> {
    let stats = NormalizationStats::fit(
        dataset
            .split
            .train
            .iter()
            .flat_map(|&i| dataset.trajectories[i].states.row_iter()),
    )?;
    let data = StageOneData::from_dataset(dataset, &stats)?;
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let mut best: Option<(Autoencoder, TrainReport)> = None;
    let mut losses = Vec::with_capacity(cfg.restarts);
    for attempt in 0..cfg.restarts {
        // Attempt 0 uses the seed itself so a single restart matches a plain run.
        let s = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, RESTART_LABEL, attempt as u64)
        };
        let ae = cfg.init_autoencoder(dataset.state_dim(), s)?;
        let (ae, report) = train_stage1(
            ae,
            &data,
            &cfg.weights,
            &cfg.power,
            &cfg.train,
            &mut substream(s, label::TRAINING, 4),
        )?;
        losses.push(report.best_val_loss);
        if best
            .as_ref()
            .is_none_or(|(_, r)| report.best_val_loss < r.best_val_loss)
        {
            best = Some((ae, report));
        }
    }
    let (ae, mut report) = best.expect("at least one attempt");
    report.restart_val_losses = losses;
    Ok((ae, stats, report))
}
