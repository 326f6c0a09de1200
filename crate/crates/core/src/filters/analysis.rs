use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix, Op};
use crate::rng::standard_normal;

/// Ensemble means and unbiased cross/auto covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// `D × D_y`.
    pub pxy: Matrix,
    /// `D_y × D_y`.
    pub pyy: Matrix,
}

fn anomalies(m: &Matrix) -> (Vec<f64>, Matrix) {
    // Averaging offsets from the first member keeps a collapsed ensemble's
    // anomalies exactly zero.
    let origin = m.row(0).to_vec();
    let mut a = m.clone();
    for i in 0..a.rows() {
        for (v, o) in a.row_mut(i).iter_mut().zip(&origin) {
            *v -= o;
        }
    }
    let shift = a.column_means();
    for i in 0..a.rows() {
        for (v, s) in a.row_mut(i).iter_mut().zip(&shift) {
            *v -= s;
        }
    }
    let mean = origin.iter().zip(&shift).map(|(o, s)| o + s).collect();
    (mean, a)
}

/// Sample statistics of paired ensembles (one member per row) with the
/// `1/(N_e − 1)` normalization.
pub fn sample_stats(x: &Matrix, y: &Matrix) -> Result<SampleStats> {
    ensure_dim("ensemble sizes", x.rows(), y.rows())?;
    let n = x.rows();
    if n < 2 {
        return Err(Error::EnsembleTooSmall(n));
    }
    let (mean_x, xa) = anomalies(x);
    let (mean_y, ya) = anomalies(y);
    let s = 1.0 / (n - 1) as f64;
    let mut pxy = xa.mul(Op::T, &ya, Op::N)?;
    pxy.scale(s);
    let mut pyy = ya.mul(Op::T, &ya, Op::N)?;
    pyy.scale(s);
    pyy.symmetrize();
    Ok(SampleStats {
        mean_x,
        mean_y,
        pxy,
        pyy,
    })
}

/// Lower Cholesky factor, retrying once with `1e-9 · trace / dim` added to
/// the diagonal.
pub fn cholesky_with_jitter(s: &Matrix) -> Result<Matrix> {
    match cholesky(s) {
        Ok(l) => Ok(l),
        Err(Error::NotPositiveDefinite) => {
            let n = s.rows();
            let jitter = 1e-9 * s.trace().abs() / n as f64;
            let mut sj = s.clone();
            for i in 0..n {
                sj[(i, i)] += jitter;
            }
            cholesky(&sj)
        }
        Err(e) => Err(e),
    }
}

/// `K = P_xy (P_yy + Γ)⁻¹`.
pub fn kalman_gain(pxy: &Matrix, pyy: &Matrix, gamma: &Matrix) -> Result<Matrix> {
    let mut s = pyy.clone();
    s.axpy(1.0, gamma)?;
    let l = cholesky_with_jitter(&s)?;
    // K = (S⁻¹ P_xyᵀ)ᵀ since S is symmetric.
    Ok(cholesky_solve(&l, &pxy.transpose())?.transpose())
}

/// Factor of the observation covariance used to draw perturbations; `None`
/// when `Γ` is identically zero.
pub fn perturbation_factor(gamma: &Matrix) -> Result<Option<Matrix>> {
    if gamma.as_slice().iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    cholesky(gamma).map(Some)
}

/// `η = L ξ`, `ξ ~ N(0, I)`.
pub fn draw_perturbation<R: rand::Rng + ?Sized>(factor: Option<&Matrix>, dim: usize, rng: &mut R) -> Vec<f64> {
    match factor {
        None => alloc::vec![0.0; dim],
        Some(l) => {
            let xi: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            (0..dim)
                .map(|i| (0..=i).map(|j| l[(i, j)] * xi[j]).sum())
                .collect()
        }
    }
}

/// Schur-product tapers for `P_xy` and `P_yy`.
#[derive(Debug, Clone, PartialEq)]
pub struct Taper {
    pub xy: Matrix,
    pub yy: Matrix,
}

/// Perturbed-observation analysis. Member `j` moves by
/// `K (y + η_j − ŷ_j)` with `K = P_xy (P_yy + Γ)⁻¹`; `perturbations` holds
/// one `η_j` per row.
pub fn enkf_analysis(
    forecast: &Matrix,
    predicted_obs: &Matrix,
    y: &[f64],
    gamma: &Matrix,
    perturbations: &Matrix,
    taper: Option<&Taper>,
) -> Result<Matrix> {
    let dy = predicted_obs.cols();
    ensure_dim("observation length", dy, y.len())?;
    ensure_dim("gamma rows", dy, gamma.rows())?;
    ensure_dim("gamma cols", dy, gamma.cols())?;
    ensure_dim("perturbation rows", forecast.rows(), perturbations.rows())?;
    ensure_dim("perturbation cols", dy, perturbations.cols())?;
    let mut stats = sample_stats(forecast, predicted_obs)?;
    if let Some(t) = taper {
        stats.pxy.hadamard_assign(&t.xy)?;
        stats.pyy.hadamard_assign(&t.yy)?;
    }
    let mut s = stats.pyy;
    s.axpy(1.0, gamma)?;
    let l = cholesky_with_jitter(&s)?;
    // Innovations as columns: d_j = y + η_j − ŷ_j.
    let n = forecast.rows();
    let mut d = Matrix::zeros(dy, n);
    for j in 0..n {
        let eta = perturbations.row(j);
        let yh = predicted_obs.row(j);
        for i in 0..dy {
            d[(i, j)] = y[i] + eta[i] - yh[i];
        }
    }
    let w = cholesky_solve(&l, &d)?;
    // shifts (N × D) = Wᵀ P_xyᵀ
    let shifts = w.mul(Op::T, &stats.pxy, Op::T)?;
    let mut out = forecast.clone();
    out.axpy(1.0, &shifts)?;
    if !out.is_finite() {
        return Err(Error::NonFinite("analysis ensemble"));
    }
    Ok(out)
}

/// Scales anomalies about the ensemble mean by `factor`.
pub fn inflate(members: &mut Matrix, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let mean = members.column_means();
    for i in 0..members.rows() {
        for (v, mu) in members.row_mut(i).iter_mut().zip(&mean) {
            *v = mu + factor * (*v - mu);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_members_have_zero_covariance() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[3.0], [3.0], [3.0]]).unwrap();
        let s = sample_stats(&x, &y).unwrap();
        assert!(s.pxy.as_slice().iter().all(|v| *v == 0.0));
        assert!(s.pyy.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_member_covariance() {
        // anomalies ±(1, −2)/… : x = (0,0),(2,−4); y = (1),(3)
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, -4.0]]).unwrap();
        let y = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let s = sample_stats(&x, &y).unwrap();
        assert_eq!(s.mean_x, [1.0, -2.0]);
        assert_eq!(s.mean_y, [2.0]);
        // Σ (x−x̄)(y−ȳ) / 1 = (−1)(−1) + (1)(1) = 2 ; (2)(−1)+(−2)(1) = −4
        assert_eq!(s.pxy.as_slice(), [2.0, -4.0]);
        assert_eq!(s.pyy.as_slice(), [2.0]);
    }

    #[test]
    fn single_member_is_rejected() {
        let x = Matrix::zeros(1, 2);
        assert_eq!(sample_stats(&x, &x), Err(Error::EnsembleTooSmall(1)));
    }

    #[test]
    fn half_gain_scalar_example() {
        let k = kalman_gain(&Matrix::from_diag(&[1.0]), &Matrix::from_diag(&[1.0]), &Matrix::from_diag(&[1.0])).unwrap();
        // shift = K · (y − ŷ) = ½ · 2
        assert!((k[(0, 0)] * 2.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_cross_covariance_leaves_forecast() {
        // Predicted observations vary, states do not.
        let x = Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let eta = Matrix::zeros(3, 1);
        let a = enkf_analysis(&x, &y, &[10.0], &Matrix::from_diag(&[1.0]), &eta, None).unwrap();
        assert_eq!(a, x);
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let s = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(cholesky(&s).is_err());
        assert!(cholesky_with_jitter(&s).is_ok());
        assert!(cholesky_with_jitter(&Matrix::from_diag(&[-1.0, 1.0])).is_err());
    }

    #[test]
    fn inflation_scales_anomalies() {
        let mut m = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        inflate(&mut m, 1.5);
        assert_eq!(m.as_slice(), [-0.5, 2.5]);
    }
}
