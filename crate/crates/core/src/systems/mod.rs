//! Dynamical testbeds, observation operators and twin-experiment datasets.

pub mod adr;
pub mod grf;
pub mod lorenz96;
pub mod ode;
pub mod toy;

use alloc::vec::Vec;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::rng::{label, normal_vec, substream, StreamRng};

pub use adr::{AdrParams, AdrSolver};
pub use grf::GrfSampler;
pub use lorenz96::Lorenz96Params;
pub use toy::{ToyParams, ToySystem};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SystemSpec {
    Toy(ToyParams),
    Adr(AdrParams),
    Lorenz96(Lorenz96Params),
}

impl SystemSpec {
    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::Toy(p) => p.dim,
            SystemSpec::Adr(p) => p.dim(),
            SystemSpec::Lorenz96(p) => p.dim,
        }
    }

    /// Physical time between consecutive assimilation cycles.
    pub fn cycle_dt(&self) -> f64 {
        match self {
            SystemSpec::Toy(_) => 1.0,
            SystemSpec::Adr(p) => p.obs_interval,
            SystemSpec::Lorenz96(p) => p.obs_interval,
        }
    }

    pub fn obs_noise_std(&self) -> f64 {
        match self {
            SystemSpec::Toy(p) => p.obs_noise_std,
            SystemSpec::Adr(p) => p.obs_noise_std,
            SystemSpec::Lorenz96(p) => p.obs_noise_std,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SystemSpec::Toy(_) => "toy",
            SystemSpec::Adr(_) => "adr",
            SystemSpec::Lorenz96(_) => "lorenz96",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum ObservationKind {
    Subsample { indices: Vec<usize> },
    Linear { matrix: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationOperator {
    pub kind: ObservationKind,
    pub noise_std: f64,
}

impl ObservationOperator {
    pub fn subsample(indices: Vec<usize>, noise_std: f64) -> Self {
        Self {
            kind: ObservationKind::Subsample { indices },
            noise_std,
        }
    }

    pub fn linear(matrix: Matrix, noise_std: f64) -> Self {
        Self {
            kind: ObservationKind::Linear { matrix },
            noise_std,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match &self.kind {
            ObservationKind::Subsample { indices } => indices.len(),
            ObservationKind::Linear { matrix } => matrix.rows(),
        }
    }

    /// Checks the operator against a state dimension.
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidParameter("observation noise std must be >= 0".into()));
        }
        match &self.kind {
            ObservationKind::Subsample { indices } => {
                let mut seen = indices.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != indices.len() || indices.iter().any(|&i| i >= state_dim) {
                    return Err(Error::InvalidParameter(
                        "subsample indices must be distinct and within the state".into(),
                    ));
                }
                Ok(())
            }
            ObservationKind::Linear { matrix } => {
                ensure_dim("observation matrix columns", state_dim, matrix.cols())?;
                if matrix.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonFinite("observation matrix"))
                }
            }
        }
    }

    /// Noise-free `H(x)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ObservationKind::Subsample { indices } => indices
                .iter()
                .map(|&i| {
                    x.get(i).copied().ok_or(Error::DimensionMismatch {
                        context: "observation index",
                        expected: i + 1,
                        got: x.len(),
                    })
                })
                .collect(),
            ObservationKind::Linear { matrix } => matrix.matvec(x),
        }
    }

    /// Applies `H` to each row.
    pub fn apply_rows(&self, states: &Matrix) -> Result<Matrix> {
        let rows: Result<Vec<Vec<f64>>> = states.row_iter().map(|r| self.apply(r)).collect();
        let rows = rows?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.obs_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Diagonal observation-noise covariance `σ² I`.
    pub fn noise_covariance(&self) -> Matrix {
        let v = self.noise_std * self.noise_std;
        Matrix::from_diag(&alloc::vec![v; self.obs_dim()])
    }
}

/// `H(x) + η`, `η ~ N(0, σ² I)`.
pub fn observe<R: Rng + ?Sized>(x: &[f64], op: &ObservationOperator, rng: &mut R) -> Result<Vec<f64>> {
    let mut y = op.apply(x)?;
    if op.noise_std > 0.0 {
        let noise = normal_vec(rng, y.len());
        for (v, e) in y.iter_mut().zip(noise) {
            *v += op.noise_std * e;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    /// `(K+1) × D`, one state per row.
    pub states: Matrix,
    pub dt: f64,
    pub t0: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn state(&self, k: usize) -> &[f64] {
        self.states.row(k)
    }
}

/// Forward model used by physical-space filters for one assimilation cycle.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn advance(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>>;
}

/// A concrete system together with its observation operator.
#[derive(Debug, Clone)]
pub enum System {
    Toy(ToySystem),
    Lorenz96(Lorenz96Params),
    Adr(AdrSolver),
}

impl System {
    pub fn spec(&self) -> SystemSpec {
        match self {
            System::Toy(t) => SystemSpec::Toy(t.params.clone()),
            System::Lorenz96(p) => SystemSpec::Lorenz96(p.clone()),
            System::Adr(s) => SystemSpec::Adr(s.params.clone()),
        }
    }

    fn model_noise(&self) -> f64 {
        match self {
            System::Toy(_) => 0.0,
            System::Lorenz96(p) => p.model_noise_std,
            System::Adr(s) => s.params.model_noise_std,
        }
    }

    /// Draws an initial state for a training or truth trajectory.
    pub fn sample_initial_state(&self, rng: &mut StreamRng) -> Result<Vec<f64>> {
        match self {
            System::Toy(t) => {
                let theta = rng.random_range(-core::f64::consts::PI..=core::f64::consts::PI);
                t.embed(theta)
            }
            System::Lorenz96(p) => {
                let x: Vec<f64> = normal_vec(rng, p.dim).iter().map(|e| p.forcing + e).collect();
                lorenz96::lorenz96_integrate(&x, p.forcing, p.dt, p.burn_in_steps)
            }
            System::Adr(s) => {
                let sampler = GrfSampler::new(s.params.grid_n, s.params.length_scale)?;
                Ok(sampler.sample(rng))
            }
        }
    }
}

impl Dynamics for System {
    fn state_dim(&self) -> usize {
        match self {
            System::Toy(t) => t.params.dim,
            System::Lorenz96(p) => p.dim,
            System::Adr(s) => s.dim(),
        }
    }

    fn advance(&self, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        ensure_dim("model state", self.state_dim(), x.len())?;
        let mut next = match self {
            System::Toy(t) => t.advance(x, rng)?,
            System::Lorenz96(p) => lorenz96::lorenz96_integrate(x, p.forcing, p.dt, p.substeps()?)?,
            System::Adr(s) => s.advance_interval(x)?,
        };
        let q = self.model_noise();
        if q > 0.0 {
            for (v, e) in next.iter_mut().zip(normal_vec(rng, x.len())) {
                *v += q * e;
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone)]
pub struct Testbed {
    pub system: System,
    pub observation: ObservationOperator,
}

impl Testbed {
    /// Builds the system and its observation operator; random pieces (the toy
    /// embedding and observed components) come from the data stream of `seed`.
    pub fn build(spec: &SystemSpec, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, label::DATA, 0);
        match spec {
            SystemSpec::Toy(p) => {
                let w = toy::draw_embedding(p.dim, &mut rng);
                if p.observed_components > p.dim {
                    return Err(Error::InvalidParameter("too many observed components".into()));
                }
                let mut idx = sample_indices(&mut rng, p.dim, p.observed_components).into_vec();
                idx.sort_unstable();
                Self::from_parts(spec, Some(w), ObservationOperator::subsample(idx, p.obs_noise_std))
            }
            SystemSpec::Lorenz96(p) => {
                if p.obs_stride == 0 {
                    return Err(Error::InvalidParameter("observation stride must be >= 1".into()));
                }
                let idx = (0..p.dim).step_by(p.obs_stride).collect();
                Self::from_parts(spec, None, ObservationOperator::subsample(idx, p.obs_noise_std))
            }
            SystemSpec::Adr(p) => Self::from_parts(
                spec,
                None,
                ObservationOperator::subsample(p.sensor_indices(), p.obs_noise_std),
            ),
        }
    }

    /// Reassembles a testbed from stored parts.
    pub fn from_parts(
        spec: &SystemSpec,
        embedding: Option<Matrix>,
        observation: ObservationOperator,
    ) -> Result<Self> {
        let system = match spec {
            SystemSpec::Toy(p) => {
                let w = embedding.ok_or_else(|| Error::InvalidParameter("toy system needs its embedding".into()))?;
                System::Toy(ToySystem::new(p.clone(), w)?)
            }
            SystemSpec::Lorenz96(p) => {
                if p.dim < 4 {
                    return Err(Error::InvalidParameter("Lorenz-96 needs at least 4 variables".into()));
                }
                p.substeps()?;
                System::Lorenz96(p.clone())
            }
            SystemSpec::Adr(p) => System::Adr(AdrSolver::new(p.clone())?),
        };
        observation.validate(system.state_dim())?;
        Ok(Self {
            system,
            observation,
        })
    }

    pub fn embedding(&self) -> Option<&Matrix> {
        match &self.system {
            System::Toy(t) => Some(&t.embedding),
            _ => None,
        }
    }

    /// Runs one trajectory of `k_steps` cycles from `x0`, returning states and
    /// noisy observations of every state.
    pub fn simulate(
        &self,
        x0: Vec<f64>,
        k_steps: usize,
        rng: &mut StreamRng,
    ) -> Result<(Trajectory, Matrix)> {
        let d = self.system.state_dim();
        let mut states = Matrix::zeros(k_steps + 1, d);
        let mut obs = Matrix::zeros(k_steps + 1, self.observation.obs_dim());
        let mut x = x0;
        for k in 0..=k_steps {
            if k > 0 {
                x = self.system.advance(&x, rng)?;
            }
            states.row_mut(k).copy_from_slice(&x);
            let y = observe(&x, &self.observation, rng)?;
            obs.row_mut(k).copy_from_slice(&y);
        }
        Ok((
            Trajectory {
                states,
                dt: self.system.spec().cycle_dt(),
                t0: 0.0,
            },
            obs,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// First `round(fraction · n)` trajectories train, the rest test.
    pub fn by_index(n: usize, train_fraction: f64) -> Self {
        let n_train = (libm::round(train_fraction * n as f64) as usize).min(n);
        Self {
            train: (0..n_train).collect(),
            test: (n_train..n).collect(),
        }
    }
}

/// Paired state/observation trajectories plus everything needed to rebuild
/// the testbed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub seed: u64,
    pub observation: ObservationOperator,
    pub embedding: Option<Matrix>,
    pub trajectories: Vec<Trajectory>,
    /// One `(K+1) × D_y` matrix per trajectory.
    pub observations: Vec<Matrix>,
    pub split: Split,
}

impl Dataset {
    pub fn testbed(&self) -> Result<Testbed> {
        Testbed::from_parts(&self.spec, self.embedding.clone(), self.observation.clone())
    }

    pub fn state_dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.obs_dim()
    }

    /// Number of cycles `K` per trajectory.
    pub fn cycles(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len().saturating_sub(1))
    }
}

/// Generates `n_traj` independent trajectories of `k_steps` cycles.
///
/// Trajectory `i` draws from its own stream derived from `(seed, i)`, so the
/// result does not depend on generation order.
pub fn generate_dataset(
    spec: &SystemSpec,
    n_traj: usize,
    k_steps: usize,
    seed: u64,
    train_fraction: f64,
) -> Result<Dataset> {
    if k_steps == 0 || n_traj == 0 {
        return Err(Error::InvalidParameter("dataset needs K >= 1 and at least one trajectory".into()));
    }
    let bed = Testbed::build(spec, seed)?;
    let mut trajectories = Vec::with_capacity(n_traj);
    let mut observations = Vec::with_capacity(n_traj);
    for i in 0..n_traj {
        let mut rng = substream(seed, label::TRAJECTORY, i as u64);
        let x0 = bed.system.sample_initial_state(&mut rng)?;
        let (traj, obs) = bed.simulate(x0, k_steps, &mut rng)?;
        trajectories.push(traj);
        observations.push(obs);
    }
    Ok(Dataset {
        spec: spec.clone(),
        seed,
        embedding: bed.embedding().cloned(),
        observation: bed.observation,
        trajectories,
        observations,
        split: Split::by_index(n_traj, train_fraction),
    })
}
