//! Ensemble Kalman filters in physical and latent space.
//!
//! Every runner takes the observations `y_1, …, y_K` as the rows of a
//! matrix and returns one analysis-mean estimate per cycle. Random draws
//! come from per-member substreams keyed by `(seed, cycle, member)`, so the
//! output does not depend on evaluation order.

mod analysis;
mod localization;

use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::lae::{Autoencoder, LatentModel, NormalizationStats, Propagator};
use crate::linalg::{Matrix, Op};
use crate::rng::{derive_seed, label, normal_vec, substream, StreamRng};
use crate::systems::grf::smoothed_white_noise;
use crate::systems::{Dynamics, ObservationKind, ObservationOperator, System};

pub use analysis::{
    cholesky_with_jitter, draw_perturbation, enkf_analysis, inflate, kalman_gain, perturbation_factor, sample_stats,
    SampleStats, Taper,
};
pub use localization::{gaspari_cohn, periodic_distance, periodic_taper};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 50;
pub const DEFAULT_LOCALIZATION_RADIUS: f64 = 4.0;
/// Gaussian filter width, in pixels, of the ADR prior ensemble.
pub const ADR_PRIOR_SMOOTHING_PX: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FilterKind {
    Enkf,
    EnkfLocalized,
    AeEnkf,
    DaeEnkf,
    LaeEnkf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Enkf,
        FilterKind::EnkfLocalized,
        FilterKind::AeEnkf,
        FilterKind::DaeEnkf,
        FilterKind::LaeEnkf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Enkf => "enkf",
            FilterKind::EnkfLocalized => "enkf-localized",
            FilterKind::AeEnkf => "ae-enkf",
            FilterKind::DaeEnkf => "dae-enkf",
            FilterKind::LaeEnkf => "lae-enkf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_latent(self) -> bool {
        matches!(self, FilterKind::DaeEnkf | FilterKind::LaeEnkf)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FilterConfig {
    pub kind: FilterKind,
    pub ensemble_size: usize,
    /// Multiplicative inflation of forecast anomalies; 1 disables it.
    pub inflation: f64,
    pub localization_radius: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            kind: FilterKind::LaeEnkf,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            inflation: 1.0,
            localization_radius: DEFAULT_LOCALIZATION_RADIUS,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::EnsembleTooSmall(self.ensemble_size));
        }
        if !(self.inflation > 0.0) || !self.inflation.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("inflation {}", self.inflation)));
        }
        if self.kind == FilterKind::EnkfLocalized && !(self.localization_radius > 0.0) {
            return Err(Error::InvalidParameter(alloc::format!(
                "localization radius {}",
                self.localization_radius
            )));
        }
        Ok(())
    }
}

/// `N_e` members stored one per row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ensemble {
    pub members: Matrix,
}

impl Ensemble {
    pub fn new(members: Matrix) -> Result<Self> {
        if members.rows() < 2 {
            return Err(Error::EnsembleTooSmall(members.rows()));
        }
        if !members.is_finite() {
            return Err(Error::NonFinite("ensemble"));
        }
        Ok(Self { members })
    }

    pub fn size(&self) -> usize {
        self.members.rows()
    }

    pub fn dim(&self) -> usize {
        self.members.cols()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.members.column_means()
    }
}

/// Per-cycle analysis means `x̂_1, …, x̂_K` (one row each).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssimilationResult {
    pub kind: FilterKind,
    pub estimates: Matrix,
    /// Filled by [`AssimilationResult::score`].
    pub relative_errors: Vec<f64>,
    /// Filled by callers that can read a clock.
    pub wall_clock_s: Option<f64>,
}

impl AssimilationResult {
    fn new(kind: FilterKind, estimates: Matrix) -> Self {
        Self {
            kind,
            estimates,
            relative_errors: Vec::new(),
            wall_clock_s: None,
        }
    }

    pub fn cycles(&self) -> usize {
        self.estimates.rows()
    }

    /// Stores `‖x̂_k − x_k‖ / ‖x_k‖` for truth rows `x_1, …, x_K`.
    pub fn score(&mut self, truth: &Matrix) -> Result<()> {
        ensure_dim("truth rows", self.cycles(), truth.rows())?;
        ensure_dim("truth cols", self.estimates.cols(), truth.cols())?;
        self.relative_errors = (0..self.cycles())
            .map(|k| crate::metrics::relative_error_step(self.estimates.row(k), truth.row(k)).unwrap_or(f64::NAN))
            .collect();
        Ok(())
    }
}

/// Stream for member `j` at cycle `k` of a given phase.
fn member_stream(seed: u64, phase: &str, cycle: usize, member: usize) -> StreamRng {
    substream(derive_seed(seed, label::FILTER_NOISE, cycle as u64), phase, member as u64)
}

/// Propagates every member through `model`; member `j` draws any model noise
/// from its own stream.
pub fn enkf_forecast<M: Dynamics + ?Sized>(members: &Matrix, model: &M, seed: u64, cycle: usize) -> Result<Matrix> {
    ensure_dim("forecast state", model.state_dim(), members.cols())?;
    let mut out = Matrix::zeros(members.rows(), members.cols());
    for j in 0..members.rows() {
        let mut rng = member_stream(seed, "forecast", cycle, j);
        let next = model.advance(members.row(j), &mut rng)?;
        out.row_mut(j).copy_from_slice(&next);
    }
    Ok(out)
}

/// Observation perturbations `η_j ~ N(0, Γ)` for cycle `k`, one per row.
pub fn draw_perturbations(factor: Option<&Matrix>, dim: usize, n: usize, seed: u64, cycle: usize) -> Matrix {
    let mut eta = Matrix::zeros(n, dim);
    for j in 0..n {
        let mut rng = member_stream(seed, "perturbation", cycle, j);
        eta.row_mut(j)
            .copy_from_slice(&draw_perturbation(factor, dim, &mut rng));
    }
    eta
}

/// Map applied to every forecast member before the physical analysis.
pub trait Projector {
    fn project(&self, members: &Matrix) -> Result<Matrix>;
}

/// No-op projector; with it the AE-EnKF reduces to the EnKF.
pub struct IdentityProjector;

impl Projector for IdentityProjector {
    fn project(&self, members: &Matrix) -> Result<Matrix> {
        Ok(members.clone())
    }
}

/// `x ↦ denormalize(D(E(normalize(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderProjector {
    pub autoencoder: Autoencoder,
    pub stats: NormalizationStats,
}

impl Projector for AutoencoderProjector {
    fn project(&self, members: &Matrix) -> Result<Matrix> {
        let x = self.stats.normalize_rows(members)?;
        self.stats
            .denormalize_rows(&self.autoencoder.reconstruct_batch(&x)?)
    }
}

fn physical_filter<M: Dynamics + ?Sized>(
    model: &M,
    obs_op: &ObservationOperator,
    projector: Option<&dyn Projector>,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<Matrix> {
    cfg.validate()?;
    let d = model.state_dim();
    ensure_dim("initial ensemble width", d, initial.cols())?;
    ensure_dim("initial ensemble size", cfg.ensemble_size, initial.rows())?;
    obs_op.validate(d)?;
    let dy = obs_op.obs_dim();
    ensure_dim("observation width", dy, observations.cols())?;
    let gamma = obs_op.noise_covariance();
    let factor = perturbation_factor(&gamma)?;
    let taper = if cfg.kind == FilterKind::EnkfLocalized {
        match &obs_op.kind {
            ObservationKind::Subsample { indices } => Some(periodic_taper(d, indices, cfg.localization_radius)?),
            ObservationKind::Linear { .. } => {
                return Err(Error::InvalidParameter(
                    "localization requires a component-subsampling observation operator".into(),
                ))
            }
        }
    } else {
        None
    };
    let n = cfg.ensemble_size;
    let mut members = initial.clone();
    let mut estimates = Matrix::zeros(observations.rows(), d);
    for k in 0..observations.rows() {
        let cycle = k + 1;
        let mut forecast = enkf_forecast(&members, model, cfg.seed, cycle)?;
        if let Some(p) = projector {
            forecast = p.project(&forecast)?;
        }
        inflate(&mut forecast, cfg.inflation);
        let predicted = obs_op.apply_rows(&forecast)?;
        let eta = draw_perturbations(factor.as_ref(), dy, n, cfg.seed, cycle);
        members = enkf_analysis(&forecast, &predicted, observations.row(k), &gamma, &eta, taper.as_ref())?;
        estimates.row_mut(k).copy_from_slice(&members.column_means());
    }
    Ok(estimates)
}

/// Physical-space EnKF with the true model and observation operator;
/// Gaspari–Cohn localized when `cfg.kind` is [`FilterKind::EnkfLocalized`].
pub fn run_enkf<M: Dynamics + ?Sized>(
    model: &M,
    obs_op: &ObservationOperator,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<AssimilationResult> {
    let est = physical_filter(model, obs_op, None, initial, observations, cfg)?;
    let kind = if cfg.kind == FilterKind::EnkfLocalized {
        FilterKind::EnkfLocalized
    } else {
        FilterKind::Enkf
    };
    Ok(AssimilationResult::new(kind, est))
}

/// EnKF whose forecast members pass through `projector` before each
/// physical analysis.
pub fn run_ae_enkf<M: Dynamics + ?Sized, P: Projector + ?Sized>(
    model: &M,
    obs_op: &ObservationOperator,
    projector: &P,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<AssimilationResult> {
    let cfg = FilterConfig {
        kind: FilterKind::AeEnkf,
        ..cfg.clone()
    };
    let est = physical_filter(model, obs_op, Some(&ProjectorRef(projector)), initial, observations, &cfg)?;
    Ok(AssimilationResult::new(FilterKind::AeEnkf, est))
}

struct ProjectorRef<'a, P: ?Sized>(&'a P);

impl<P: Projector + ?Sized> Projector for ProjectorRef<'_, P> {
    fn project(&self, members: &Matrix) -> Result<Matrix> {
        self.0.project(members)
    }
}

/// Latent ensemble filter: encode the prior, propagate with the latent map,
/// assimilate encoded observations with `Γ̃` and decode the latent mean.
pub fn run_latent_enkf(
    model: &LatentModel,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<AssimilationResult> {
    cfg.validate()?;
    model.validate()?;
    ensure_dim("initial ensemble width", model.state_dim(), initial.cols())?;
    ensure_dim("initial ensemble size", cfg.ensemble_size, initial.rows())?;
    ensure_dim("observation width", model.obs_dim(), observations.cols())?;
    let kind = match model.autoencoder.propagator {
        Propagator::Linear(_) => FilterKind::LaeEnkf,
        Propagator::Nonlinear(_) => FilterKind::DaeEnkf,
    };
    let m = model.latent_obs_dim();
    let n = cfg.ensemble_size;
    let factor = perturbation_factor(&model.gamma_tilde)?;
    let mut z = model.encode_states(initial)?;
    let mut estimates = Matrix::zeros(observations.rows(), model.state_dim());
    for k in 0..observations.rows() {
        let cycle = k + 1;
        let mut zf = model.autoencoder.propagator.apply_batch(&z)?;
        inflate(&mut zf, cfg.inflation);
        let predicted = zf.mul(Op::N, &model.h, Op::T)?;
        let y_tilde = model.encode_observation(observations, k)?;
        let eta = draw_perturbations(factor.as_ref(), m, n, cfg.seed, cycle);
        z = enkf_analysis(&zf, &predicted, &y_tilde, &model.gamma_tilde, &eta, None)?;
        estimates
            .row_mut(k)
            .copy_from_slice(&model.decode(&z.column_means())?);
    }
    Ok(AssimilationResult::new(kind, estimates))
}

/// LAE-EnKF; requires a linear latent operator.
pub fn run_lae_enkf(
    model: &LatentModel,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<AssimilationResult> {
    if !matches!(model.autoencoder.propagator, Propagator::Linear(_)) {
        return Err(Error::InvalidParameter("LAE-EnKF needs a linear latent operator".into()));
    }
    run_latent_enkf(model, initial, observations, cfg)
}

/// DAE-EnKF; requires a nonlinear latent propagator.
pub fn run_dae_enkf(
    model: &LatentModel,
    initial: &Matrix,
    observations: &Matrix,
    cfg: &FilterConfig,
) -> Result<AssimilationResult> {
    if !matches!(model.autoencoder.propagator, Propagator::Nonlinear(_)) {
        return Err(Error::InvalidParameter("DAE-EnKF needs a nonlinear latent propagator".into()));
    }
    run_latent_enkf(model, initial, observations, cfg)
}

/// Prior ensemble shared by all filters for a given seed: uniform angles
/// embedded through `W` for the toy system, `spread`-scaled Gaussian
/// perturbations of one attractor state for Lorenz-96, and smoothed white
/// noise with pointwise std `spread` for ADR.
pub fn make_initial_ensemble(system: &System, ensemble_size: usize, spread: f64, seed: u64) -> Result<Matrix> {
    if ensemble_size < 2 {
        return Err(Error::EnsembleTooSmall(ensemble_size));
    }
    let mut rng = substream(seed, label::INIT_ENSEMBLE, 0);
    let d = system.state_dim();
    let mut out = Matrix::zeros(ensemble_size, d);
    match system {
        System::Toy(toy) => {
            use rand::Rng;
            for j in 0..ensemble_size {
                let theta = rng.random_range(-core::f64::consts::PI..=core::f64::consts::PI);
                out.row_mut(j).copy_from_slice(&toy.embed(theta)?);
            }
        }
        System::Lorenz96(_) => {
            let center = system.sample_initial_state(&mut rng)?;
            for j in 0..ensemble_size {
                let e = normal_vec(&mut rng, d);
                for ((v, c), e) in out.row_mut(j).iter_mut().zip(&center).zip(e) {
                    *v = c + spread * e;
                }
            }
        }
        System::Adr(s) => {
            for j in 0..ensemble_size {
                let u = smoothed_white_noise(s.params.grid_n, ADR_PRIOR_SMOOTHING_PX, spread, &mut rng);
                out.row_mut(j).copy_from_slice(&u);
            }
        }
    }
    Ok(out)
}
