//! generate → train → assimilate.
//!
//! One master seed drives everything. The dataset (and the testbed it
//! defines) comes from the master seed, models are trained once per master
//! seed, and assimilation run `r` draws its truth, prior ensemble and filter
//! noise from streams indexed by `r`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use laenkf_core::filters::{
    make_initial_ensemble, run_ae_enkf, run_dae_enkf, run_enkf, run_lae_enkf, AssimilationResult,
    AutoencoderProjector, FilterConfig, FilterKind,
};
use laenkf_core::lae::{train_autoencoder, train_latent_model, LossWeights, PropagatorKind};
use laenkf_core::linalg::norm2;
use laenkf_core::metrics::{median, multirun_ci, summarize_run, RunSummary};
use laenkf_core::rng::{derive_seed, label, substream};
use laenkf_core::systems::{generate_dataset, Dataset, Testbed};
use laenkf_core::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_bundle, save_bundle, BundleInfo, TrainedModel, Variant};
use crate::config::ExperimentConfig;
use crate::dataset::{load_dataset, load_metadata, save_dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const TIDY_FILE: &str = "tidy.csv";

/// Model variant a filter needs, if any.
pub fn required_variant(kind: FilterKind) -> Option<Variant> {
    match kind {
        FilterKind::Enkf | FilterKind::EnkfLocalized => None,
        FilterKind::AeEnkf => Some(Variant::Ae),
        FilterKind::DaeEnkf => Some(Variant::Dae),
        FilterKind::LaeEnkf => Some(Variant::Lae),
    }
}

/// Generates the dataset of `cfg` and writes it to its directory.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = generate_dataset(
        &cfg.system,
        cfg.data.n_traj,
        cfg.data.cycles,
        cfg.run.master_seed,
        cfg.data.train_fraction,
    )?;
    save_dataset(&cfg.dataset_dir(), &ds, Some(&cfg.data_hash()))?;
    Ok(ds)
}

/// Loads the dataset if one generated from the same settings exists,
/// otherwise generates it.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    if let Ok(meta) = load_metadata(&dir) {
        if meta.config_hash.as_deref() == Some(cfg.data_hash().as_str()) {
            return load_dataset(&dir);
        }
    }
    generate(cfg)
}

/// Loads the dataset and checks it was generated from these settings.
pub fn require_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    let meta = load_metadata(&dir)?;
    if meta.config_hash.as_deref() != Some(cfg.data_hash().as_str()) {
        return Err(Error::Config(format!(
            "dataset in {} was generated with different settings; run `generate` first",
            dir.display()
        )));
    }
    load_dataset(&dir)
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow<'a> {
    stage: &'a str,
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    config_hash: &'a str,
}

/// Trains one model variant and writes its bundle plus a training-curve CSV.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset, variant: Variant) -> Result<TrainedModel> {
    let seed = cfg.run.master_seed;
    let mut latent_cfg = cfg.training.latent();
    let (model, stage1, stage2) = match variant {
        Variant::Lae | Variant::Dae => {
            if variant == Variant::Dae {
                latent_cfg.stage1.propagator = PropagatorKind::Nonlinear {
                    hidden: cfg.training.dae_hidden,
                };
                latent_cfg.stage1.weights.reg = 0.0;
            } else {
                latent_cfg.stage1.propagator = PropagatorKind::Linear;
            }
            let (m, report) = train_latent_model(dataset, &latent_cfg, seed)?;
            (TrainedModel::Latent(m), report.stage1, Some(report.stage2))
        }
        Variant::Ae => {
            let mut s1 = latent_cfg.stage1.clone();
            s1.weights = LossWeights::reconstruction_only();
            s1.propagator = PropagatorKind::Linear;
            let (autoencoder, stats, report) = train_autoencoder(dataset, &s1, seed)?;
            (TrainedModel::Autoencoder { autoencoder, stats }, report, None)
        }
    };
    let dir = cfg.model_dir(variant);
    let hash = cfg.training_hash();
    save_bundle(
        &dir,
        &model,
        BundleInfo {
            variant,
            config_hash: hash.clone(),
            training_config: serde_json::to_value(&cfg.training)?,
            stage1_report: stage1.clone(),
            stage2_report: stage2.clone(),
        },
    )?;
    let mut w = csv::Writer::from_path(dir.join("training_curve.csv"))?;
    for (stage, report) in [("stage1", Some(&stage1)), ("stage2", stage2.as_ref())] {
        let Some(report) = report else { continue };
        for (epoch, (t, v)) in report.train_loss.iter().zip(&report.val_loss).enumerate() {
            w.serialize(CurveRow {
                stage,
                epoch,
                train_loss: *t,
                val_loss: *v,
                config_hash: &hash,
            })?;
        }
    }
    w.flush()?;
    Ok(model)
}

/// Loads a bundle and checks that it was trained with these settings.
pub fn load_model(cfg: &ExperimentConfig, variant: Variant) -> Result<TrainedModel> {
    let dir = cfg.model_dir(variant);
    let (model, manifest) = load_bundle(&dir)?;
    if manifest.variant != variant {
        return Err(Error::Config(format!("{} holds a {} bundle", dir.display(), manifest.variant.name())));
    }
    if manifest.config_hash != cfg.training_hash() {
        return Err(Error::Config(format!(
            "model in {} was trained with different settings; run `train` first",
            dir.display()
        )));
    }
    Ok(model)
}

/// Loaded models for the filters of one experiment.
#[derive(Debug, Default)]
pub struct Models {
    pub lae: Option<TrainedModel>,
    pub ae: Option<TrainedModel>,
    pub dae: Option<TrainedModel>,
}

impl Models {
    fn slot(&mut self, v: Variant) -> &mut Option<TrainedModel> {
        match v {
            Variant::Lae => &mut self.lae,
            Variant::Ae => &mut self.ae,
            Variant::Dae => &mut self.dae,
        }
    }

    fn get(&self, v: Variant) -> Option<&TrainedModel> {
        match v {
            Variant::Lae => self.lae.as_ref(),
            Variant::Ae => self.ae.as_ref(),
            Variant::Dae => self.dae.as_ref(),
        }
    }

    /// Loads every bundle the configured methods need.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let mut m = Self::default();
        for v in cfg.filter.methods.iter().filter_map(|k| required_variant(*k)) {
            if m.get(v).is_none() {
                *m.slot(v) = Some(load_model(cfg, v)?);
            }
        }
        Ok(m)
    }

    /// Trains every model the configured methods need.
    pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Self> {
        let mut m = Self::default();
        for v in cfg.filter.methods.iter().filter_map(|k| required_variant(*k)) {
            if m.get(v).is_none() {
                *m.slot(v) = Some(train(cfg, dataset, v)?);
            }
        }
        Ok(m)
    }
}

/// Truth trajectory and observations of assimilation run `r`, cycles `1..=T`.
pub struct TwinRun {
    pub truth: Matrix,
    pub observations: Matrix,
    pub initial: Matrix,
    pub filter_seed: u64,
}

pub fn twin_run(cfg: &ExperimentConfig, bed: &Testbed, r: usize) -> Result<TwinRun> {
    let master = cfg.run.master_seed;
    let t = cfg.run.cycles;
    let mut rng = substream(master, label::TRUTH, r as u64);
    let x0 = bed.system.sample_initial_state(&mut rng)?;
    let (traj, obs) = bed.simulate(x0, t, &mut rng)?;
    let truth = Matrix::from_rows(&(1..=t).map(|k| traj.state(k)).collect::<Vec<_>>())?;
    let observations = Matrix::from_rows(&(1..=t).map(|k| obs.row(k)).collect::<Vec<_>>())?;
    let initial = make_initial_ensemble(
        &bed.system,
        cfg.filter.ensemble_size,
        cfg.filter.initial_spread,
        derive_seed(master, label::INIT_ENSEMBLE, r as u64),
    )?;
    Ok(TwinRun {
        truth,
        observations,
        initial,
        filter_seed: derive_seed(master, label::FILTER_NOISE, r as u64),
    })
}

fn missing(kind: FilterKind) -> Error {
    Error::Config(format!("no trained model available for {}", kind.name()))
}

/// Runs one filter on one twin experiment.
pub fn run_filter(
    cfg: &ExperimentConfig,
    bed: &Testbed,
    models: &Models,
    kind: FilterKind,
    run: &TwinRun,
) -> Result<AssimilationResult> {
    let fc = FilterConfig {
        kind,
        ensemble_size: cfg.filter.ensemble_size,
        inflation: cfg.filter.inflation_for(kind),
        localization_radius: cfg.filter.localization_radius,
        seed: run.filter_seed,
    };
    let latent = |v: Variant| match models.get(v) {
        Some(TrainedModel::Latent(m)) => Ok(m),
        _ => Err(missing(kind)),
    };
    let start = Instant::now();
    let mut result = match kind {
        FilterKind::Enkf | FilterKind::EnkfLocalized => {
            run_enkf(&bed.system, &bed.observation, &run.initial, &run.observations, &fc)?
        }
        FilterKind::AeEnkf => {
            let m = models.get(Variant::Ae).ok_or_else(|| missing(kind))?;
            let projector = AutoencoderProjector {
                autoencoder: m.autoencoder().clone(),
                stats: m.state_stats().clone(),
            };
            run_ae_enkf(&bed.system, &bed.observation, &projector, &run.initial, &run.observations, &fc)?
        }
        FilterKind::LaeEnkf => run_lae_enkf(latent(Variant::Lae)?, &run.initial, &run.observations, &fc)?,
        FilterKind::DaeEnkf => run_dae_enkf(latent(Variant::Dae)?, &run.initial, &run.observations, &fc)?,
    };
    result.wall_clock_s = Some(start.elapsed().as_secs_f64());
    result.score(&run.truth)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub e: f64,
    pub e_rel: Option<f64>,
    pub undefined_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: FilterKind,
    pub inflation: f64,
    pub median_e_rel: Option<f64>,
    pub mean_e_rel: Option<f64>,
    pub median_e: Option<f64>,
    pub runs: Vec<RunRecord>,
}

/// Deterministic outcome of `assimilate`; wall-clock times live in
/// [`Timing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub config_hash: String,
    pub system: String,
    pub latent_dim: usize,
    pub obs_noise_std: f64,
    pub master_seed: u64,
    pub runs: usize,
    pub cycles: usize,
    pub ensemble_size: usize,
    pub methods: Vec<MethodSummary>,
}

impl Summary {
    pub fn method(&self, kind: FilterKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: FilterKind,
    pub wall_clock_s: Vec<f64>,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub config_hash: String,
    pub methods: Vec<MethodTiming>,
}

#[derive(Serialize)]
struct StepRow<'a> {
    cycle: usize,
    time: f64,
    relative_error: f64,
    estimate_norm: f64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct TidyRow<'a> {
    method: &'a str,
    system: &'a str,
    latent_dim: usize,
    seed: usize,
    metric: &'a str,
    value: f64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct CiRow<'a> {
    cycle: usize,
    mean: f64,
    half_width: f64,
    lower: f64,
    upper: f64,
    config_hash: &'a str,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Runs every configured method over `R` twin experiments and writes the
/// per-run CSVs, CI curves, tidy table, summary and timing files.
pub fn assimilate(cfg: &ExperimentConfig, dataset: &Dataset, models: &Models) -> Result<Summary> {
    if cfg.filter.methods.is_empty() {
        return Err(Error::Config("no filter methods selected".into()));
    }
    let bed = dataset.testbed()?;
    let hash = cfg.config_hash();
    let methods = &cfg.filter.methods;
    // results[r][m]
    let results: Vec<Vec<(AssimilationResult, RunSummary)>> = (0..cfg.run.runs)
        .into_par_iter()
        .map(|r| {
            let run = twin_run(cfg, &bed, r)?;
            methods
                .iter()
                .map(|&kind| {
                    let res = run_filter(cfg, &bed, models, kind, &run)?;
                    let summary = summarize_run(&res.estimates, &run.truth, r as u64)?;
                    Ok((res, summary))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let root = &cfg.run.out_dir;
    let dt = cfg.system.cycle_dt();
    let mut summary = Summary {
        name: cfg.name.clone(),
        config_hash: hash.clone(),
        system: cfg.system.kind_name().to_owned(),
        latent_dim: cfg.latent_dim(),
        obs_noise_std: cfg.system.obs_noise_std(),
        master_seed: cfg.run.master_seed,
        runs: cfg.run.runs,
        cycles: cfg.run.cycles,
        ensemble_size: cfg.filter.ensemble_size,
        methods: Vec::new(),
    };
    let mut timing = Timing {
        config_hash: hash.clone(),
        methods: Vec::new(),
    };
    create_dir(&root.join("ci"))?;
    let mut tidy = csv::Writer::from_path(root.join(TIDY_FILE))?;
    for (mi, &kind) in methods.iter().enumerate() {
        let dir = root.join("runs").join(kind.name());
        create_dir(&dir)?;
        let mut records = Vec::new();
        let mut curves = Vec::new();
        let mut clocks = Vec::new();
        for (r, per_run) in results.iter().enumerate() {
            let (res, rs) = &per_run[mi];
            write_run_csv(&dir.join(format!("run-{r:03}.csv")), res, rs, dt, &hash)?;
            for &k in &cfg.filter.snapshot_cycles {
                if (1..=res.cycles()).contains(&k) {
                    Tensor::vector(res.estimates.row(k - 1))
                        .save(&dir.join(format!("run-{r:03}-cycle-{k:04}.laet")))?;
                }
            }
            for (metric, value) in [
                ("e", rs.e),
                ("e_rel", rs.e_rel.unwrap_or(f64::NAN)),
                ("undefined_steps", rs.undefined_steps as f64),
            ] {
                tidy.serialize(TidyRow {
                    method: kind.name(),
                    system: &summary.system,
                    latent_dim: summary.latent_dim,
                    seed: r,
                    metric,
                    value,
                    config_hash: &hash,
                })?;
            }
            records.push(RunRecord {
                run: r,
                e: rs.e,
                e_rel: rs.e_rel,
                undefined_steps: rs.undefined_steps,
            });
            curves.push(rs.step_errors.clone());
            clocks.push(res.wall_clock_s.unwrap_or(0.0));
        }
        if curves.len() >= 2 {
            let band = multirun_ci(&curves)?;
            let mut w = csv::Writer::from_path(root.join("ci").join(format!("{}.csv", kind.name())))?;
            for k in 0..band.mean.len() {
                w.serialize(CiRow {
                    cycle: k + 1,
                    mean: band.mean[k],
                    half_width: band.half_width[k],
                    lower: band.lower[k],
                    upper: band.upper[k],
                    config_hash: &hash,
                })?;
            }
            w.flush()?;
        }
        let e_rel: Vec<f64> = records.iter().map(|r| r.e_rel.unwrap_or(f64::NAN)).collect();
        let finite: Vec<f64> = e_rel.iter().copied().filter(|v| v.is_finite()).collect();
        summary.methods.push(MethodSummary {
            method: kind,
            inflation: cfg.filter.inflation_for(kind),
            median_e_rel: median(&e_rel),
            mean_e_rel: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            median_e: median(&records.iter().map(|r| r.e).collect::<Vec<_>>()),
            runs: records,
        });
        timing.methods.push(MethodTiming {
            method: kind,
            total_s: clocks.iter().sum(),
            wall_clock_s: clocks,
        });
    }
    tidy.flush()?;
    crate::write_json(&root.join(SUMMARY_FILE), &summary)?;
    crate::write_json(&root.join(TIMING_FILE), &timing)?;
    Ok(summary)
}

fn write_run_csv(path: &Path, res: &AssimilationResult, rs: &RunSummary, dt: f64, hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for k in 0..res.cycles() {
        w.serialize(StepRow {
            cycle: k + 1,
            time: (k + 1) as f64 * dt,
            relative_error: rs.step_errors[k],
            estimate_norm: norm2(res.estimates.row(k)),
            config_hash: hash,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// generate (or reuse) → train → assimilate in one call.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<Summary> {
    let ds = ensure_dataset(cfg)?;
    let models = Models::train(cfg, &ds)?;
    assimilate(cfg, &ds, &models)
}

/// Summary files below `root`, in sorted order.
pub fn find_summaries(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Report(e.to_string()))?;
        if entry.file_type().is_file() && entry.file_name() == SUMMARY_FILE {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}
