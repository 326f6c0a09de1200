use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One classical fourth-order Runge-Kutta step of `dx/dt = rhs(x)`.
///
/// `rhs(x, out)` writes the derivative at `x` into `out`.
pub fn rk4_step<F>(mut rhs: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(alloc::format!(
            "rk4 step size must be positive and finite, got {dt}"
        )));
    }
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut stage = vec![0.0; n];

    rhs(x, &mut k1);
    check("rk4 stage 1", &k1)?;
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k1[i];
    }
    rhs(&stage, &mut k2);
    check("rk4 stage 2", &k2)?;
    for i in 0..n {
        stage[i] = x[i] + 0.5 * dt * k2[i];
    }
    rhs(&stage, &mut k3);
    check("rk4 stage 3", &k3)?;
    for i in 0..n {
        stage[i] = x[i] + dt * k3[i];
    }
    rhs(&stage, &mut k4);
    check("rk4 stage 4", &k4)?;

    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check("rk4 update", &out)?;
    Ok(out)
}

fn check(what: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
