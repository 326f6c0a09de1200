//! Dataset directories: `metadata.json` plus `states.laet`
//! (`n_traj × (K+1) × D`) and `observations.laet` (`n_traj × (K+1) × D_y`).

use std::fs;
use std::path::Path;

use laenkf_core::systems::{Dataset, ObservationOperator, Split, SystemSpec, Trajectory};
use laenkf_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const METADATA_FILE: &str = "metadata.json";
pub const STATES_FILE: &str = "states.laet";
pub const OBSERVATIONS_FILE: &str = "observations.laet";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u32,
    pub system: SystemSpec,
    pub seed: u64,
    pub n_traj: usize,
    pub cycles: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub dt: f64,
    pub t0: f64,
    pub observation: ObservationOperator,
    /// Toy embedding `W` (`D × 2`), absent for other systems.
    pub embedding: Option<Matrix>,
    pub split: Split,
    pub config_hash: Option<String>,
    pub states_file: String,
    pub observations_file: String,
}

pub fn save_dataset(dir: &Path, ds: &Dataset, config_hash: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = ds
        .trajectories
        .first()
        .ok_or_else(|| Error::Format("dataset has no trajectories".into()))?;
    let meta = DatasetMetadata {
        format_version: FORMAT_VERSION,
        system: ds.spec.clone(),
        seed: ds.seed,
        n_traj: ds.trajectories.len(),
        cycles: ds.cycles(),
        state_dim: ds.state_dim(),
        obs_dim: ds.obs_dim(),
        dt: first.dt,
        t0: first.t0,
        observation: ds.observation.clone(),
        embedding: ds.embedding.clone(),
        split: ds.split.clone(),
        config_hash: config_hash.map(str::to_owned),
        states_file: STATES_FILE.into(),
        observations_file: OBSERVATIONS_FILE.into(),
    };
    let states: Vec<Matrix> = ds.trajectories.iter().map(|t| t.states.clone()).collect();
    Tensor::stack(&states)?.save(&dir.join(STATES_FILE))?;
    Tensor::stack(&ds.observations)?.save(&dir.join(OBSERVATIONS_FILE))?;
    crate::write_json(&dir.join(METADATA_FILE), &meta)
}

pub fn load_metadata(dir: &Path) -> Result<DatasetMetadata> {
    let meta: DatasetMetadata = crate::read_json(&dir.join(METADATA_FILE))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", meta.format_version)));
    }
    Ok(meta)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta = load_metadata(dir)?;
    let states = Tensor::load(&dir.join(&meta.states_file))?.unstack()?;
    let observations = Tensor::load(&dir.join(&meta.observations_file))?.unstack()?;
    if states.len() != meta.n_traj || observations.len() != meta.n_traj {
        return Err(Error::Format("trajectory count disagrees with metadata".into()));
    }
    for (s, o) in states.iter().zip(&observations) {
        if s.shape() != (meta.cycles + 1, meta.state_dim) || o.shape() != (meta.cycles + 1, meta.obs_dim) {
            return Err(Error::Format("tensor shape disagrees with metadata".into()));
        }
    }
    let ds = Dataset {
        spec: meta.system,
        seed: meta.seed,
        observation: meta.observation,
        embedding: meta.embedding,
        trajectories: states
            .into_iter()
            .map(|states| Trajectory {
                states,
                dt: meta.dt,
                t0: meta.t0,
            })
            .collect(),
        observations,
        split: meta.split,
    };
    ds.testbed()?;
    Ok(ds)
}
