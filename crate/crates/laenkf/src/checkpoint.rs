//! Model bundles.
//!
//! A bundle is a directory holding `bundle.json` and one tensor file per
//! parameter array. Networks are described by their layer dimensions and
//! activations; layer `i` of a network with prefix `p` is stored as
//! `p.i.weight.laet` and `p.i.bias.laet`.

use std::fs;
use std::path::Path;

use laenkf_core::lae::{Autoencoder, LatentModel, NormalizationStats, Propagator, TrainReport};
use laenkf_core::nn::{Activation, Dense, LinearOperator, Network};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "bundle.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropagatorMeta {
    Linear { file: String },
    Nonlinear { network: NetworkMeta },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Linear latent operator, both training stages.
    Lae,
    /// Plain autoencoder used as a projector by the AE-EnKF.
    Ae,
    /// Nonlinear latent propagator, both training stages.
    Dae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lae => "lae",
            Variant::Ae => "ae",
            Variant::Dae => "dae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::Lae, Variant::Ae, Variant::Dae]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentParts {
    pub obs_encoder: NetworkMeta,
    pub h_file: String,
    pub gamma_tilde_file: String,
    pub obs_mean_file: String,
    pub obs_std_file: String,
    pub delay: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub variant: Variant,
    pub state_dim: usize,
    pub latent_dim: usize,
    pub encoder: NetworkMeta,
    pub decoder: NetworkMeta,
    pub propagator: PropagatorMeta,
    pub state_mean_file: String,
    pub state_std_file: String,
    /// Present for two-stage models.
    pub latent: Option<LatentParts>,
    pub config_hash: String,
    /// Training section of the experiment configuration that produced the
    /// bundle.
    pub training_config: serde_json::Value,
    pub stage1_report: TrainReport,
    pub stage2_report: Option<TrainReport>,
}

/// A trained model ready for assimilation.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Latent(LatentModel),
    Autoencoder {
        autoencoder: Autoencoder,
        stats: NormalizationStats,
    },
}

impl TrainedModel {
    pub fn autoencoder(&self) -> &Autoencoder {
        match self {
            TrainedModel::Latent(m) => &m.autoencoder,
            TrainedModel::Autoencoder { autoencoder, .. } => autoencoder,
        }
    }

    pub fn state_stats(&self) -> &NormalizationStats {
        match self {
            TrainedModel::Latent(m) => &m.state_stats,
            TrainedModel::Autoencoder { stats, .. } => stats,
        }
    }
}

/// Provenance stored alongside the parameters.
#[derive(Debug, Clone)]
pub struct BundleInfo {
    pub variant: Variant,
    pub config_hash: String,
    pub training_config: serde_json::Value,
    pub stage1_report: TrainReport,
    pub stage2_report: Option<TrainReport>,
}

fn tensor_name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}.laet")
}

pub fn save_network(dir: &Path, prefix: &str, net: &Network) -> Result<NetworkMeta> {
    for (i, layer) in net.layers().iter().enumerate() {
        Tensor::from_matrix(&layer.weight).save(&dir.join(tensor_name(prefix, &format!("{i}.weight"))))?;
        Tensor::vector(&layer.bias).save(&dir.join(tensor_name(prefix, &format!("{i}.bias"))))?;
    }
    Ok(NetworkMeta {
        prefix: prefix.to_owned(),
        dims: net.dims(),
        activations: net.layers().iter().map(|l| l.activation).collect(),
    })
}

pub fn load_network(dir: &Path, meta: &NetworkMeta) -> Result<Network> {
    if meta.dims.len() != meta.activations.len() + 1 {
        return Err(Error::Format(format!("network {} has inconsistent layer metadata", meta.prefix)));
    }
    let mut layers = Vec::with_capacity(meta.activations.len());
    for (i, &activation) in meta.activations.iter().enumerate() {
        let weight = Tensor::load(&dir.join(tensor_name(&meta.prefix, &format!("{i}.weight"))))?.into_matrix()?;
        let bias = Tensor::load(&dir.join(tensor_name(&meta.prefix, &format!("{i}.bias"))))?.into_vector()?;
        if weight.shape() != (meta.dims[i + 1], meta.dims[i]) {
            return Err(Error::Format(format!("layer {i} of {} has shape {:?}", meta.prefix, weight.shape())));
        }
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    Ok(Network::new(layers)?)
}

pub fn save_bundle(dir: &Path, model: &TrainedModel, info: BundleInfo) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ae = model.autoencoder();
    let encoder = save_network(dir, "encoder", &ae.encoder)?;
    let decoder = save_network(dir, "decoder", &ae.decoder)?;
    let propagator = match &ae.propagator {
        Propagator::Linear(op) => {
            let file = "A.laet".to_owned();
            Tensor::from_matrix(&op.a).save(&dir.join(&file))?;
            PropagatorMeta::Linear { file }
        }
        Propagator::Nonlinear(net) => PropagatorMeta::Nonlinear {
            network: save_network(dir, "propagator", net)?,
        },
    };
    let stats = model.state_stats();
    Tensor::vector(&stats.mean).save(&dir.join("state_mean.laet"))?;
    Tensor::vector(&stats.std).save(&dir.join("state_std.laet"))?;
    let latent = match model {
        TrainedModel::Latent(m) => {
            let obs_encoder = save_network(dir, "obs_encoder", &m.obs_encoder)?;
            Tensor::from_matrix(&m.h).save(&dir.join("H.laet"))?;
            Tensor::from_matrix(&m.gamma_tilde).save(&dir.join("gamma_tilde.laet"))?;
            Tensor::vector(&m.obs_stats.mean).save(&dir.join("obs_mean.laet"))?;
            Tensor::vector(&m.obs_stats.std).save(&dir.join("obs_std.laet"))?;
            Some(LatentParts {
                obs_encoder,
                h_file: "H.laet".into(),
                gamma_tilde_file: "gamma_tilde.laet".into(),
                obs_mean_file: "obs_mean.laet".into(),
                obs_std_file: "obs_std.laet".into(),
                delay: m.delay,
            })
        }
        TrainedModel::Autoencoder { .. } => None,
    };
    let manifest = BundleManifest {
        format_version: FORMAT_VERSION,
        variant: info.variant,
        state_dim: ae.state_dim(),
        latent_dim: ae.latent_dim(),
        encoder,
        decoder,
        propagator,
        state_mean_file: "state_mean.laet".into(),
        state_std_file: "state_std.laet".into(),
        latent,
        config_hash: info.config_hash,
        training_config: info.training_config,
        stage1_report: info.stage1_report,
        stage2_report: info.stage2_report,
    };
    crate::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn load_stats(dir: &Path, mean: &str, std: &str) -> Result<NormalizationStats> {
    let mean = Tensor::load(&dir.join(mean))?.into_vector()?;
    let std = Tensor::load(&dir.join(std))?.into_vector()?;
    if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Format("invalid normalization statistics".into()));
    }
    Ok(NormalizationStats { mean, std })
}

pub fn load_bundle(dir: &Path) -> Result<(TrainedModel, BundleManifest)> {
    let manifest: BundleManifest = crate::read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported bundle version {}", manifest.format_version)));
    }
    let encoder = load_network(dir, &manifest.encoder)?;
    let decoder = load_network(dir, &manifest.decoder)?;
    let propagator = match &manifest.propagator {
        PropagatorMeta::Linear { file } => {
            Propagator::Linear(LinearOperator::new(Tensor::load(&dir.join(file))?.into_matrix()?)?)
        }
        PropagatorMeta::Nonlinear { network } => Propagator::Nonlinear(load_network(dir, network)?),
    };
    let autoencoder = Autoencoder::new(encoder, decoder, propagator)?;
    let state_stats = load_stats(dir, &manifest.state_mean_file, &manifest.state_std_file)?;
    let model = match &manifest.latent {
        Some(l) => {
            let m = LatentModel {
                autoencoder,
                obs_encoder: load_network(dir, &l.obs_encoder)?,
                h: Tensor::load(&dir.join(&l.h_file))?.into_matrix()?,
                gamma_tilde: Tensor::load(&dir.join(&l.gamma_tilde_file))?.into_matrix()?,
                state_stats,
                obs_stats: load_stats(dir, &l.obs_mean_file, &l.obs_std_file)?,
                delay: l.delay,
            };
            m.validate()?;
            TrainedModel::Latent(m)
        }
        None => TrainedModel::Autoencoder {
            autoencoder,
            stats: state_stats,
        },
    };
    Ok((model, manifest))
}
