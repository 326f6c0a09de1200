use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::analysis::Taper;

/// Gaspari–Cohn fifth-order compactly supported correlation at distance
/// `dist` for half-width `radius`; zero from `2 · radius` on.
pub fn gaspari_cohn(dist: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(alloc::format!("localization radius {radius}")));
    }
    let r = dist.abs() / radius;
    let v = if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - (5.0 / 3.0) * r2 + 1.0
    } else if r < 2.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + (5.0 / 3.0) * r2 - 5.0 * r + 4.0 - 2.0 / (3.0 * r)
    } else {
        0.0
    };
    Ok(v.max(0.0))
}

/// `min(|i − j|, D − |i − j|)`.
pub fn periodic_distance(i: usize, j: usize, dim: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(dim - d)
}

/// Tapers for a periodic 1-D lattice observed at `obs_indices`.
pub fn periodic_taper(dim: usize, obs_indices: &[usize], radius: f64) -> Result<Taper> {
    let dy = obs_indices.len();
    let mut xy = Matrix::zeros(dim, dy);
    for i in 0..dim {
        for (j, &o) in obs_indices.iter().enumerate() {
            xy[(i, j)] = gaspari_cohn(periodic_distance(i, o, dim) as f64, radius)?;
        }
    }
    let mut yy = Matrix::zeros(dy, dy);
    for (i, &a) in obs_indices.iter().enumerate() {
        for (j, &b) in obs_indices.iter().enumerate() {
            yy[(i, j)] = gaspari_cohn(periodic_distance(a, b, dim) as f64, radius)?;
        }
    }
    Ok(Taper { xy, yy })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(gaspari_cohn(0.0, 4.0).unwrap(), 1.0);
        assert!((gaspari_cohn(4.0, 4.0).unwrap() - 5.0 / 24.0).abs() < 1e-15);
        assert_eq!(gaspari_cohn(8.0, 4.0).unwrap(), 0.0);
        assert_eq!(gaspari_cohn(100.0, 4.0).unwrap(), 0.0);
        assert!(gaspari_cohn(1.0, 0.0).is_err());
        assert!(gaspari_cohn(1.0, -1.0).is_err());
    }

    #[test]
    fn continuous_at_knots() {
        let c = 3.0;
        for knot in [c, 2.0 * c] {
            let a = gaspari_cohn(knot - 1e-9, c).unwrap();
            let b = gaspari_cohn(knot + 1e-9, c).unwrap();
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn periodic_wrap() {
        assert_eq!(periodic_distance(0, 39, 40), 1);
        assert_eq!(periodic_distance(5, 25, 40), 20);
        let t = periodic_taper(40, &[0, 20], 4.0).unwrap();
        assert_eq!(t.xy[(39, 0)], gaspari_cohn(1.0, 4.0).unwrap());
        assert_eq!(t.yy[(0, 1)], 0.0);
        assert_eq!(t.yy[(1, 1)], 1.0);
    }
}
