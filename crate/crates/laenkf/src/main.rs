use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use laenkf::checkpoint::Variant;
use laenkf::config::ExperimentConfig;
use laenkf::experiment::{self, Models};
use laenkf_core::filters::FilterKind;

/// Latent autoencoder ensemble Kalman filter experiments.
///
/// The worker-thread count is read from LAENKF_THREADS.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training/test dataset.
    Generate(Common),
    /// Train model bundles (LAE, AE and/or DAE).
    Train {
        #[command(flatten)]
        common: Common,
        /// Variant to train; repeatable. Defaults to the config's list.
        #[arg(long, value_parser = parse_variant)]
        variant: Vec<Variant>,
    },
    /// Run filters over R twin experiments.
    Assimilate {
        #[command(flatten)]
        common: Common,
        /// Filter to run; repeatable. Defaults to the config's list.
        #[arg(long, value_parser = parse_filter)]
        filter: Vec<FilterKind>,
    },
    /// generate, train and assimilate in one go.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_filter)]
        filter: Vec<FilterKind>,
    },
    /// Merge summary files into one table.
    Report {
        /// Config whose output directory is searched when no --input is given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Glob pattern of summary files; repeatable.
        #[arg(long)]
        input: Vec<String>,
        /// Output CSV.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the latent dimension.
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg =
            ExperimentConfig::load(&self.config).with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.run.master_seed = s;
        }
        if let Some(n) = self.latent_dim {
            cfg.set_latent_dim(n);
        }
        if let Some(o) = &self.out {
            cfg.run.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_filter(s: &str) -> Result<FilterKind, String> {
    FilterKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = FilterKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown filter {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}; expected lae, ae or dae"))
}

fn print_summary(s: &experiment::Summary) {
    println!("config {}", s.config_hash);
    for m in &s.methods {
        match m.median_e_rel {
            Some(v) => println!("{:<16} median E_Rel = {v:.4e} over {} runs", m.method.name(), m.runs.len()),
            None => println!("{:<16} median E_Rel undefined", m.method.name()),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    laenkf::configure_threads()?;
    match cli.command {
        Command::Generate(common) => {
            let cfg = common.load()?;
            let ds = experiment::generate(&cfg)?;
            println!(
                "wrote {} trajectories x {} cycles to {}",
                ds.trajectories.len(),
                ds.cycles(),
                cfg.dataset_dir().display()
            );
        }
        Command::Train { common, variant } => {
            let cfg = common.load()?;
            let ds = experiment::require_dataset(&cfg)?;
            let variants = if variant.is_empty() {
                cfg.training.variants.clone()
            } else {
                variant
            };
            for v in variants {
                experiment::train(&cfg, &ds, v)?;
                println!("trained {} -> {}", v.name(), cfg.model_dir(v).display());
            }
        }
        Command::Assimilate { common, filter } => {
            let mut cfg = common.load()?;
            if !filter.is_empty() {
                cfg.filter.methods = filter;
            }
            let ds = experiment::require_dataset(&cfg)?;
            let models = Models::load(&cfg)?;
            print_summary(&experiment::assimilate(&cfg, &ds, &models)?);
        }
        Command::Run { common, filter } => {
            let mut cfg = common.load()?;
            if !filter.is_empty() {
                cfg.filter.methods = filter;
            }
            print_summary(&experiment::run_pipeline(&cfg)?);
        }
        Command::Report { config, input, out } => {
            let patterns = if !input.is_empty() {
                input
            } else if let Some(c) = config {
                let cfg = ExperimentConfig::load(&c)?;
                experiment::find_summaries(&cfg.run.out_dir)?
                    .into_iter()
                    .map(|p| p.display().to_string())
                    .collect()
            } else {
                bail!("report needs --input or --config");
            };
            let rows = laenkf::report::report(&patterns, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
