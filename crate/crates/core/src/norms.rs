//! Discrete Lebesgue and Sobolev norms on the node lattice and over space-time.
//!
//! Spatial integrals use the node quadrature `Σ |w|^p hx hy` (boundary nodes
//! included). Gradients are taken on lattice edges and second derivatives as
//! the four difference quotients `w_xx`, `w_yy` (interior nodes) and
//! `w_xy = w_yx` (cells); the pointwise magnitude is the `ℓ^p` sum of the
//! components. Time integrals use the left rectangle rule over `t_0..t_{nt-1}`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, Trajectory};

fn check_power(pow: f64) -> Result<()> {
    if pow >= 1.0 && pow.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "norm exponent must be >= 1, got {pow}"
        )))
    }
}

#[inline]
fn powabs(v: f64, pow: f64) -> f64 {
    if pow == 2.0 {
        v * v
    } else {
        v.abs().powf(pow)
    }
}

/// `Σ |w|^p hx hy`
pub fn lp_integral(w: &ScalarField, pow: f64) -> f64 {
    let area = w.grid().cell_area();
    w.values().iter().map(|&v| powabs(v, pow)).sum::<f64>() * area
}

pub fn lp_norm(w: &ScalarField, pow: f64) -> Result<f64> {
    check_power(pow)?;
    Ok(lp_integral(w, pow).powf(1.0 / pow))
}

/// `Σ_edges |difference quotient|^p hx hy`
pub fn grad_lp_integral(w: &ScalarField, pow: f64) -> f64 {
    let g = *w.grid();
    let v = w.values();
    let s = g.stride();
    let mut sum = 0.0;
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            let k = g.idx(i, j);
            if i + 1 < g.nx + 2 {
                sum += powabs((v[k + 1] - v[k]) / g.hx, pow);
            }
            if j + 1 < g.ny + 2 {
                sum += powabs((v[k + s] - v[k]) / g.hy, pow);
            }
        }
    }
    sum * g.cell_area()
}

pub fn grad_lp_norm(w: &ScalarField, pow: f64) -> Result<f64> {
    check_power(pow)?;
    Ok(grad_lp_integral(w, pow).powf(1.0 / pow))
}

/// `Σ_interior (|w_xx|^p + |w_yy|^p) hx hy + 2 Σ_cells |w_xy|^p hx hy`
pub fn hessian_lp_integral(w: &ScalarField, pow: f64) -> f64 {
    let g = *w.grid();
    let v = w.values();
    let s = g.stride();
    let (hx2, hy2, hxy) = (g.hx * g.hx, g.hy * g.hy, g.hx * g.hy);
    let mut sum = 0.0;
    for (i, j) in g.interior() {
        let k = g.idx(i, j);
        sum += powabs((v[k + 1] - 2.0 * v[k] + v[k - 1]) / hx2, pow);
        sum += powabs((v[k + s] - 2.0 * v[k] + v[k - s]) / hy2, pow);
    }
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let k = g.idx(i, j);
            let wxy = (v[k + s + 1] - v[k + 1] - v[k + s] + v[k]) / hxy;
            sum += 2.0 * powabs(wxy, pow);
        }
    }
    sum * g.cell_area()
}

pub fn hessian_lp_norm(w: &ScalarField, pow: f64) -> Result<f64> {
    check_power(pow)?;
    Ok(hessian_lp_integral(w, pow).powf(1.0 / pow))
}

/// Forward difference quotients `(w_{n+1} - w_n) / dt`, `n = 0..nt-1`.
pub fn time_differences(traj: &Trajectory) -> Vec<ScalarField> {
    let dt = traj.dt();
    traj.fields()
        .windows(2)
        .map(|pair| {
            let mut d = pair[1]
                .sub(&pair[0])
                .expect("trajectory fields share a grid");
            d.values_mut().iter_mut().for_each(|v| *v /= dt);
            d
        })
        .collect()
}

/// Left-rectangle time integral of a per-step quantity given at `t_0..t_nt`.
pub fn left_rectangle(dt: f64, samples: &[f64]) -> f64 {
    let n = samples.len().saturating_sub(1);
    samples[..n].iter().sum::<f64>() * dt
}

/// `‖w‖_{p, Q_T}`
pub fn spacetime_lp(traj: &Trajectory, pow: f64) -> Result<f64> {
    check_power(pow)?;
    let s: Vec<f64> = traj.fields().iter().map(|f| lp_integral(f, pow)).collect();
    Ok(left_rectangle(traj.dt(), &s).powf(1.0 / pow))
}

/// `‖∇w‖_{p, Q_T}`
pub fn spacetime_grad_lp(traj: &Trajectory, pow: f64) -> Result<f64> {
    check_power(pow)?;
    let s: Vec<f64> = traj
        .fields()
        .iter()
        .map(|f| grad_lp_integral(f, pow))
        .collect();
    Ok(left_rectangle(traj.dt(), &s).powf(1.0 / pow))
}

/// `‖∇²w‖_{p, Q_T}`
pub fn spacetime_hessian_lp(traj: &Trajectory, pow: f64) -> Result<f64> {
    check_power(pow)?;
    let s: Vec<f64> = traj
        .fields()
        .iter()
        .map(|f| hessian_lp_integral(f, pow))
        .collect();
    Ok(left_rectangle(traj.dt(), &s).powf(1.0 / pow))
}

/// `‖∂_t w‖_{p, Q_T}` from forward differences; every difference carries
/// weight `dt`.
pub fn spacetime_dt_lp(traj: &Trajectory, pow: f64) -> Result<f64> {
    check_power(pow)?;
    let s: f64 = time_differences(traj)
        .iter()
        .map(|f| lp_integral(f, pow))
        .sum();
    Ok((s * traj.dt()).powf(1.0 / pow))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpacetimeNorms {
    pub lp: f64,
    pub grad: f64,
    pub hessian: f64,
    pub time_derivative: f64,
    /// `lp + grad`
    pub w10: f64,
    /// `w10 + hessian + time_derivative`
    pub w21: f64,
}

pub fn spacetime_norms(traj: &Trajectory, pow: f64) -> Result<SpacetimeNorms> {
    if traj.nt() < 2 {
        return Err(Error::InsufficientData(format!(
            "space-time norms need at least 2 steps, got {}",
            traj.nt()
        )));
    }
    let lp = spacetime_lp(traj, pow)?;
    let grad = spacetime_grad_lp(traj, pow)?;
    let hessian = spacetime_hessian_lp(traj, pow)?;
    let time_derivative = spacetime_dt_lp(traj, pow)?;
    let w10 = lp + grad;
    Ok(SpacetimeNorms {
        lp,
        grad,
        hessian,
        time_derivative,
        w10,
        w21: w10 + hessian + time_derivative,
    })
}
