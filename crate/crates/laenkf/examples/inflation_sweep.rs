//! Median E_Rel of each configured method over a grid of inflation factors,
//! on twin runs disjoint from the ones `assimilate` scores.
//!
//! ```text
//! cargo run --release -p laenkf --example inflation_sweep -- <preset> <out_dir> [first_run] [runs]
//! ```
//!
//! The models must already be trained into `<out_dir>/models`.

use std::path::{Path, PathBuf};

use laenkf::config::ExperimentConfig;
use laenkf::experiment::{self, Models};
use laenkf_core::metrics::global_errors;

const GRID: [f64; 11] = [0.9, 0.95, 1.0, 1.05, 1.1, 1.15, 1.2, 1.3, 1.4, 1.6, 2.0];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        anyhow::bail!("usage: inflation_sweep <preset> <out_dir> [first_run] [runs]");
    }
    let mut cfg = ExperimentConfig::load(Path::new(&args[1]))?;
    cfg.run.out_dir = PathBuf::from(&args[2]);
    let first: usize = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(cfg.run.runs);
    let count: usize = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(20);

    let dataset = experiment::require_dataset(&cfg)?;
    let models = Models::load(&cfg)?;
    let bed = dataset.testbed()?;
    let runs = (first..first + count)
        .map(|r| experiment::twin_run(&cfg, &bed, r))
        .collect::<Result<Vec<_>, _>>()?;

    println!("runs {first}..{}", first + count);
    for &kind in &cfg.filter.methods {
        let mut best = (f64::INFINITY, 0.0);
        print!("{:<16}", kind.name());
        for &inf in &GRID {
            cfg.filter.inflation_by_method.insert(kind.name().to_string(), inf);
            let mut errs = Vec::with_capacity(runs.len());
            for run in &runs {
                // A run that diverges scores as infinitely bad.
                let e = match experiment::run_filter(&cfg, &bed, &models, kind, run) {
                    Ok(res) => global_errors(&res.estimates, &run.truth)?.e_rel.unwrap_or(f64::NAN),
                    Err(_) => f64::INFINITY,
                };
                errs.push(e);
            }
            let m = median(errs);
            if m < best.0 {
                best = (m, inf);
            }
            print!(" {inf:.2}:{m:.4}");
        }
        println!("  best {:.2} ({:.4})", best.1, best.0);
    }
    Ok(())
}
