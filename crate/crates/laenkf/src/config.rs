//! Experiment configuration files.
//!
//! Presets are TOML documents. A top-level `include = ["other.preset", …]`
//! pulls in other files (paths relative to the including file); included
//! documents are merged in order, then the including file is laid over them.
//! Tables merge key by key, every other value is replaced wholesale.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use laenkf_core::filters::{FilterKind, DEFAULT_ENSEMBLE_SIZE, DEFAULT_LOCALIZATION_RADIUS};
use laenkf_core::lae::{LatentTrainConfig, Stage1Config, Stage2Config};
use laenkf_core::systems::SystemSpec;
use laenkf_core::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAX_INCLUDE_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_traj: usize,
    /// Cycles `K` per training trajectory.
    pub cycles: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_traj: 500,
            cycles: 100,
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    /// Latent observation matrix; identity when absent.
    pub h: Option<Matrix>,
    /// Hidden width of the DAE propagator.
    pub dae_hidden: usize,
    /// Models built by `train` when no variant is named.
    pub variants: Vec<crate::checkpoint::Variant>,
}

impl TrainingConfig {
    pub fn latent(&self) -> LatentTrainConfig {
        LatentTrainConfig {
            stage1: self.stage1.clone(),
            stage2: self.stage2.clone(),
            h: self.h.clone(),
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            h: None,
            dae_hidden: 64,
            variants: vec![crate::checkpoint::Variant::Lae, crate::checkpoint::Variant::Ae],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub methods: Vec<FilterKind>,
    pub ensemble_size: usize,
    pub inflation: f64,
    /// Per-method overrides of `inflation`, keyed by method name.
    pub inflation_by_method: BTreeMap<String, f64>,
    pub localization_radius: f64,
    /// Prior spread for Lorenz-96 and ADR initial ensembles.
    pub initial_spread: f64,
    /// Cycles whose decoded estimates are written as tensors.
    pub snapshot_cycles: Vec<usize>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            methods: vec![FilterKind::Enkf, FilterKind::AeEnkf, FilterKind::LaeEnkf],
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            inflation: 1.0,
            inflation_by_method: BTreeMap::new(),
            localization_radius: DEFAULT_LOCALIZATION_RADIUS,
            initial_spread: 1.0,
            snapshot_cycles: Vec::new(),
        }
    }
}

impl FilterSection {
    pub fn inflation_for(&self, kind: FilterKind) -> f64 {
        self.inflation_by_method
            .get(kind.name())
            .copied()
            .unwrap_or(self.inflation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Independent assimilation runs `R`.
    pub runs: usize,
    /// Assimilation cycles `T` per run.
    pub cycles: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            runs: 10,
            cycles: 100,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let value = load_merged(path, 0)?;
        Self::from_value(value)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if value.contains_key("include") {
            return Err(Error::Config("include needs a file path to resolve against".into()));
        }
        Self::from_value(value)
    }

    fn from_value(value: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.n_traj == 0 || self.data.cycles == 0 {
            return Err(Error::Config("data needs n_traj >= 1 and cycles >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.data.train_fraction) {
            return Err(Error::Config(format!("train_fraction {}", self.data.train_fraction)));
        }
        if self.run.runs == 0 || self.run.cycles == 0 {
            return Err(Error::Config("run needs runs >= 1 and cycles >= 1".into()));
        }
        if self.filter.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        for name in self.filter.inflation_by_method.keys() {
            if FilterKind::parse(name).is_none() {
                return Err(Error::Config(format!("unknown method {name:?} in inflation_by_method")));
            }
        }
        self.training.stage1.weights.validate()?;
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.training.stage1.latent_dim
    }

    pub fn set_latent_dim(&mut self, n: usize) {
        self.training.stage1.latent_dim = n;
    }

    /// Digest of everything that determines the results: the output
    /// directory and the selection of methods are left out.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = PathBuf::new();
        c.filter.methods.clear();
        hash_json(&c)
    }

    /// Digest of the inputs to data generation.
    pub fn data_hash(&self) -> String {
        hash_json(&(&self.system, &self.data, self.run.master_seed))
    }

    /// Digest of the inputs to training (system, data, training settings and
    /// master seed).
    pub fn training_hash(&self) -> String {
        hash_json(&(
            &self.system,
            &self.data,
            &self.training.stage1,
            &self.training.stage2,
            &self.training.h,
            self.training.dae_hidden,
            self.run.master_seed,
        ))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.run.out_dir.join("dataset")
    }

    pub fn model_dir(&self, variant: crate::checkpoint::Variant) -> PathBuf {
        self.run.out_dir.join("models").join(variant.name())
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn load_merged(path: &Path, depth: usize) -> Result<toml::Table> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!("include depth exceeded at {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                other => Err(Error::Config(format!("include entry {other} is not a string"))),
            })
            .collect::<Result<_>>()?,
        Some(other) => return Err(Error::Config(format!("include must be a string or list, got {other}"))),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        let sub = load_merged(&base.join(inc), depth + 1)?;
        merge(&mut merged, sub);
    }
    merge(&mut merged, table);
    Ok(merged)
}

fn merge(dst: &mut toml::Table, src: toml::Table) {
    for (k, v) in src {
        match (dst.get_mut(&k), v) {
            (Some(toml::Value::Table(d)), toml::Value::Table(s)) => merge(d, s),
            (_, v) => {
                dst.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overrides_leaves_and_keeps_siblings() {
        let mut a: toml::Table = toml::from_str("[x]\na = 1\nb = 2\n").unwrap();
        let b: toml::Table = toml::from_str("[x]\nb = 3\n").unwrap();
        merge(&mut a, b);
        assert_eq!(a["x"]["a"].as_integer(), Some(1));
        assert_eq!(a["x"]["b"].as_integer(), Some(3));
    }

    #[test]
    fn hash_ignores_output_dir_and_method_selection() {
        let a = ExperimentConfig::from_toml_str("[system]\nkind = \"toy\"\n").unwrap();
        let mut b = a.clone();
        b.run.out_dir = "elsewhere".into();
        b.filter.methods = vec![FilterKind::Enkf];
        assert_eq!(a.config_hash(), b.config_hash());
        b.run.master_seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[system]\nkind = \"toy\"\n[run]\nrunz = 3\n").is_err());
    }
}
