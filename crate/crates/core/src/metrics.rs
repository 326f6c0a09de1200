//! Relative state errors, time-averaged RMS errors and multi-run
//! confidence bands. Aggregates run over the analysis cycles `k = 1..T`.

use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{norm2, Matrix};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// `‖x̂ − x‖ / ‖x‖`, or `None` when the truth has zero norm.
pub fn relative_error_step(estimate: &[f64], truth: &[f64]) -> Option<f64> {
    assert_eq!(estimate.len(), truth.len(), "estimate and truth lengths differ");
    let denom = norm2(truth);
    if denom == 0.0 {
        return None;
    }
    let num = libm::sqrt(
        estimate
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>(),
    );
    Some(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalErrors {
    /// RMS error over all `T · D` entries.
    pub e: f64,
    /// `e` divided by the RMS of the truth; `None` for an all-zero truth.
    pub e_rel: Option<f64>,
}

/// Time-averaged RMS error and its relative version over rows `1..=T`.
pub fn global_errors(estimates: &Matrix, truths: &Matrix) -> Result<GlobalErrors> {
    ensure_dim("estimate rows", truths.rows(), estimates.rows())?;
    ensure_dim("estimate cols", truths.cols(), estimates.cols())?;
    if truths.rows() == 0 || truths.cols() == 0 {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    let count = (truths.rows() * truths.cols()) as f64;
    let mut sq_err = 0.0;
    let mut sq_truth = 0.0;
    for (a, b) in estimates.as_slice().iter().zip(truths.as_slice()) {
        sq_err += (a - b) * (a - b);
        sq_truth += b * b;
    }
    let e = libm::sqrt(sq_err / count);
    let scale = libm::sqrt(sq_truth / count);
    Ok(GlobalErrors {
        e,
        e_rel: (scale > 0.0).then(|| e / scale),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunSummary {
    pub seed: u64,
    /// `e_Rel,k`; undefined steps are stored as NaN.
    pub step_errors: Vec<f64>,
    pub undefined_steps: usize,
    pub e: f64,
    pub e_rel: Option<f64>,
}

pub fn summarize_run(estimates: &Matrix, truths: &Matrix, seed: u64) -> Result<RunSummary> {
    let g = global_errors(estimates, truths)?;
    let step_errors: Vec<f64> = (0..truths.rows())
        .map(|k| relative_error_step(estimates.row(k), truths.row(k)).unwrap_or(f64::NAN))
        .collect();
    let undefined_steps = step_errors.iter().filter(|v| v.is_nan()).count();
    Ok(RunSummary {
        seed,
        step_errors,
        undefined_steps,
        e: g.e,
        e_rel: g.e_rel,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConfidenceBand {
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Pointwise mean and `mean ± z · s / √R` band over `R` equal-length
/// curves, where `s` is the population standard deviation across runs.
pub fn multirun_ci_z(curves: &[Vec<f64>], z: f64) -> Result<ConfidenceBand> {
    let r = curves.len();
    if r < 2 {
        return Err(Error::InvalidParameter("confidence band needs at least 2 runs".into()));
    }
    let t = curves[0].len();
    for c in curves {
        ensure_dim("curve length", t, c.len())?;
    }
    let rf = r as f64;
    let mut band = ConfidenceBand {
        mean: Vec::with_capacity(t),
        half_width: Vec::with_capacity(t),
        lower: Vec::with_capacity(t),
        upper: Vec::with_capacity(t),
    };
    for k in 0..t {
        let mean = curves.iter().map(|c| c[k]).sum::<f64>() / rf;
        let var = curves.iter().map(|c| (c[k] - mean) * (c[k] - mean)).sum::<f64>() / rf;
        let hw = z * libm::sqrt(var) / libm::sqrt(rf);
        band.mean.push(mean);
        band.half_width.push(hw);
        band.lower.push(mean - hw);
        band.upper.push(mean + hw);
    }
    Ok(band)
}

/// 95% band.
pub fn multirun_ci(curves: &[Vec<f64>]) -> Result<ConfidenceBand> {
    multirun_ci_z(curves, Z_95)
}

/// Median of the finite values, `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
