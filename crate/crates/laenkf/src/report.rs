//! Consolidated results table.
//!
//! Summaries are grouped into rows keyed by (system, latent dimension,
//! observation noise). Each row holds the median `E_Rel` of every method
//! and names the method with the smallest one. All summaries feeding a row
//! must share one config hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use laenkf_core::filters::FilterKind;

use crate::error::{Error, Result};
use crate::experiment::Summary;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub latent_dim: usize,
    pub obs_noise_std: f64,
    pub config_hash: String,
    pub median_e_rel: BTreeMap<FilterKind, f64>,
    pub best: Option<FilterKind>,
}

/// Expands glob patterns into summary paths, sorted and deduplicated.
pub fn expand_globs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in patterns {
        let paths = glob::glob(p).map_err(|e| Error::Report(format!("bad pattern {p:?}: {e}")))?;
        for entry in paths {
            out.push(entry.map_err(|e| Error::Report(e.to_string()))?);
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::Report(format!("no summary files match {patterns:?}")));
    }
    Ok(out)
}

pub fn build_rows(summaries: &[Summary]) -> Result<Vec<ReportRow>> {
    if summaries.is_empty() {
        return Err(Error::Report("no summaries to report".into()));
    }
    let mut rows: BTreeMap<(String, usize, u64), ReportRow> = BTreeMap::new();
    for s in summaries {
        let key = (s.system.clone(), s.latent_dim, s.obs_noise_std.to_bits());
        let row = rows.entry(key).or_insert_with(|| ReportRow {
            system: s.system.clone(),
            latent_dim: s.latent_dim,
            obs_noise_std: s.obs_noise_std,
            config_hash: s.config_hash.clone(),
            median_e_rel: BTreeMap::new(),
            best: None,
        });
        if row.config_hash != s.config_hash {
            return Err(Error::Report(format!(
                "row ({}, n={}, sigma={}) mixes config hashes {} and {}",
                row.system, row.latent_dim, row.obs_noise_std, row.config_hash, s.config_hash
            )));
        }
        for m in &s.methods {
            let Some(v) = m.median_e_rel else { continue };
            if row.median_e_rel.insert(m.method, v).is_some() {
                return Err(Error::Report(format!(
                    "method {} appears twice in row ({}, n={})",
                    m.method.name(),
                    row.system,
                    row.latent_dim
                )));
            }
        }
    }
    let mut out: Vec<ReportRow> = rows.into_values().collect();
    for row in &mut out {
        row.best = row
            .median_e_rel
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| *k);
    }
    Ok(out)
}

pub fn load_summaries(paths: &[PathBuf]) -> Result<Vec<Summary>> {
    paths.iter().map(|p| crate::read_json(p)).collect()
}

/// One line per row: identifying columns, one column per method, `best`.
pub fn write_table(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["system", "latent_dim", "obs_noise_std", "config_hash"]
        .map(String::from)
        .to_vec();
    header.extend(FilterKind::ALL.iter().map(|k| k.name().to_owned()));
    header.push("best".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.system.clone(),
            r.latent_dim.to_string(),
            r.obs_noise_std.to_string(),
            r.config_hash.clone(),
        ];
        rec.extend(
            FilterKind::ALL
                .iter()
                .map(|k| r.median_e_rel.get(k).map_or(String::new(), |v| format!("{v:.6e}"))),
        );
        rec.push(r.best.map_or(String::new(), |k| k.name().to_owned()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the summaries matched by `patterns` and writes the table.
pub fn report(patterns: &[String], out: &Path) -> Result<Vec<ReportRow>> {
    let summaries = load_summaries(&expand_globs(patterns)?)?;
    let rows = build_rows(&summaries)?;
    write_table(out, &rows)?;
    Ok(rows)
}
