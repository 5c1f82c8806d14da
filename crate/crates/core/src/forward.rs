//! Backward-Euler time stepping of the coupled system, pressure first.
//!
//! Step `n -> n + 1`:
//!
//! ```text
//! (p_{n+1} - p_n)/dt - div(d(u_n) ∇p_{n+1}) = f_{n+1}
//! (u_{n+1} - u_n)/dt - Δφ(u_{n+1})         = div(g(u_n) ∇p_{n+1}) + s_u(t_{n+1})
//! ```
//!
//! The pressure system is SPD and solved by conjugate gradients. The
//! saturation equation is solved by damped Newton; each Newton correction
//! solves the symmetric system `(1/(dt φ'(v)) + K) z = -R/dt`, `δ = z/φ'(v)`,
//! where `K` is the negative five-point Laplacian.

use serde::Serialize;

use crate::cost::Control;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, Trajectory};
use crate::laws::SpaceTimeFn;
use crate::linalg::solve_pcg;
use crate::model::{CoefficientSet, ProblemSpec};
use crate::ops::{flux_divergence, FaceAverage, FaceCoefficients, SpdStencil};

/// Halvings tried when a Newton step does not reduce the residual.
const MAX_DAMPING: usize = 10;

#[derive(Clone)]
pub struct SolverOptions {
    pub nt: usize,
    /// Max-norm tolerance on the saturation residual `v - u_n - dt(...)`.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Relative residual tolerance of every linear solve.
    pub linear_tol: f64,
    pub linear_max: usize,
    /// Face averaging of `d`; `g` and the Laplacian always use arithmetic.
    pub averaging: FaceAverage,
    /// Extra source in the saturation equation (manufactured solutions only).
    pub aux_source_u: Option<SpaceTimeFn>,
}

impl std::fmt::Debug for SolverOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverOptions")
            .field("nt", &self.nt)
            .field("newton_tol", &self.newton_tol)
            .field("newton_max", &self.newton_max)
            .field("linear_tol", &self.linear_tol)
            .field("linear_max", &self.linear_max)
            .field("averaging", &self.averaging)
            .field("aux_source_u", &self.aux_source_u.is_some())
            .finish()
    }
}

impl SolverOptions {
    pub fn new(nt: usize) -> SolverOptions {
        SolverOptions {
            nt,
            newton_tol: 1e-10,
            newton_max: 30,
            linear_tol: 1e-12,
            linear_max: 5000,
            averaging: FaceAverage::Arithmetic,
            aux_source_u: None,
        }
    }

    /// Tolerances tight enough for finite-difference gradient checks.
    pub fn tight(nt: usize) -> SolverOptions {
        SolverOptions {
            newton_tol: 1e-13,
            linear_tol: 1e-14,
            linear_max: 20_000,
            ..SolverOptions::new(nt)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt < 1 {
            return Err(Error::Parameter("nt must be at least 1".into()));
        }
        if !(self.newton_tol > 0.0 && self.linear_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "tolerances must be positive, got newton_tol {} and linear_tol {}",
                self.newton_tol, self.linear_tol
            )));
        }
        if self.newton_max < 1 || self.linear_max < 1 {
            return Err(Error::Parameter("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-step solver statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub pressure_iterations: usize,
    pub pressure_residual: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardResult {
    pub u: Trajectory,
    pub p: Trajectory,
    pub newton_iterations: Vec<usize>,
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Clone, Debug)]
pub struct PressureStep {
    pub p: ScalarField,
    pub iterations: usize,
    pub relative_residual: f64,
}

#[derive(Clone, Debug)]
pub struct SaturationStep {
    pub u: ScalarField,
    pub newton_iters: usize,
    pub residual: f64,
}

fn interior_mask(grid: &Grid2D) -> Vec<bool> {
    let mut m = vec![false; grid.len()];
    for (i, j) in grid.interior() {
        m[grid.idx(i, j)] = true;
    }
    m
}

/// Nodal `d(u)`, rejecting nonpositive or non-finite values.
pub(crate) fn diffusivity(coeffs: &CoefficientSet, u: &ScalarField) -> Result<ScalarField> {
    let a = u.map(|r| (coeffs.d)(r));
    let g = *u.grid();
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            let v = a.at(i, j);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Coefficient { i, j, value: v });
            }
        }
    }
    Ok(a)
}

/// `I/dt + K_{d(u)}` on interior nodes.
pub(crate) fn pressure_operator(
    coeffs: &CoefficientSet,
    u: &ScalarField,
    dt: f64,
    avg: FaceAverage,
) -> Result<SpdStencil> {
    let d = diffusivity(coeffs, u)?;
    let faces = FaceCoefficients::from_nodal(&d, avg);
    Ok(SpdStencil::new(&faces, vec![1.0 / dt; u.grid().len()]))
}

/// `div(g(u) ∇p)` with arithmetic face averaging; `g` may vanish.
pub(crate) fn transport(
    coeffs: &CoefficientSet,
    u: &ScalarField,
    p: &ScalarField,
) -> Result<ScalarField> {
    let gu = u.map(|r| (coeffs.g)(r));
    if let Some(node) = gu.first_non_finite() {
        return Err(Error::FieldEvaluation { node });
    }
    Ok(flux_divergence(
        &FaceCoefficients::from_nodal(&gu, FaceAverage::Arithmetic),
        p,
    ))
}

pub fn step_pressure(
    u_n: &ScalarField,
    p_n: &ScalarField,
    f_np1: &ScalarField,
    dt: f64,
    coeffs: &CoefficientSet,
    opts: &SolverOptions,
) -> Result<PressureStep> {
    let grid = *u_n.grid();
    grid.check_same(p_n.grid())?;
    grid.check_same(f_np1.grid())?;
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let op = pressure_operator(coeffs, u_n, dt, opts.averaging)?;
    let inside = interior_mask(&grid);
    let rhs: Vec<f64> = p_n
        .values()
        .iter()
        .zip(f_np1.values())
        .zip(&inside)
        .map(|((p, f), &m)| if m { p / dt + f } else { 0.0 })
        .collect();
    let mut x: Vec<f64> = p_n
        .values()
        .iter()
        .zip(&inside)
        .map(|(p, &m)| if m { *p } else { 0.0 })
        .collect();
    let info = solve_pcg(&op, &rhs, &mut x, opts.linear_tol, opts.linear_max)?;
    Ok(PressureStep {
        p: ScalarField::from_values(grid, x)?,
        iterations: info.iterations,
        relative_residual: info.relative_residual,
    })
}

/// `v - dt Δφ(v) - base` on interior nodes, 0 on the boundary.
fn saturation_residual(
    v: &ScalarField,
    base: &[f64],
    dt: f64,
    coeffs: &CoefficientSet,
) -> Result<Vec<f64>> {
    let lap = crate::ops::laplace_of_composition(&|r| (coeffs.phi)(r), v)?;
    let g = *v.grid();
    let mut r = vec![0.0; g.len()];
    for (i, j) in g.interior() {
        let k = g.idx(i, j);
        r[k] = v.values()[k] - dt * lap.values()[k] - base[k];
    }
    Ok(r)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Nodal `φ'(v)` on interior nodes, checked against `delta_phi`.
pub(crate) fn parabolic_slope(coeffs: &CoefficientSet, v: &ScalarField) -> Result<Vec<f64>> {
    let g = *v.grid();
    let delta = coeffs.bounds.delta_phi;
    let mut slope = vec![1.0; g.len()];
    for (i, j) in g.interior() {
        let k = g.idx(i, j);
        let r = v.values()[k];
        let s = (coeffs.dphi)(r);
        if !(s >= delta) {
            return Err(Error::Parabolicity {
                value: r,
                slope: s,
                delta,
            });
        }
        slope[k] = s;
    }
    Ok(slope)
}

/// `(1/(dt φ') + K)` with `φ'` given nodewise.
pub(crate) fn saturation_operator(grid: Grid2D, slope: &[f64], dt: f64) -> SpdStencil {
    let mass = slope.iter().map(|s| 1.0 / (dt * s)).collect();
    SpdStencil::new(&FaceCoefficients::unit(grid), mass)
}

pub fn step_saturation(
    u_n: &ScalarField,
    p_np1: &ScalarField,
    dt: f64,
    coeffs: &CoefficientSet,
    opts: &SolverOptions,
    s_u: Option<&ScalarField>,
) -> Result<SaturationStep> {
    let grid = *u_n.grid();
    grid.check_same(p_np1.grid())?;
    if let Some(s) = s_u {
        grid.check_same(s.grid())?;
    }
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let flux = transport(coeffs, u_n, p_np1)?;
    let inside = interior_mask(&grid);
    let base: Vec<f64> = (0..grid.len())
        .map(|k| {
            if !inside[k] {
                return 0.0;
            }
            let s = s_u.map_or(0.0, |s| s.values()[k]);
            u_n.values()[k] + dt * (flux.values()[k] + s)
        })
        .collect();

    let mut v = u_n.clone();
    v.zero_boundary();
    let mut r = saturation_residual(&v, &base, dt, coeffs)?;
    let mut rnorm = max_abs(&r);
    let mut iters = 0;
    while rnorm > opts.newton_tol {
        if iters == opts.newton_max {
            return Err(Error::Newton {
                iterations: iters,
                residual: rnorm,
            });
        }
        iters += 1;
        let slope = parabolic_slope(coeffs, &v)?;
        let op = saturation_operator(grid, &slope, dt);
        let rhs: Vec<f64> = r.iter().map(|x| -x / dt).collect();
        let mut z = vec![0.0; grid.len()];
        solve_pcg(&op, &rhs, &mut z, opts.linear_tol, opts.linear_max)?;
        let delta: Vec<f64> = z.iter().zip(&slope).map(|(z, s)| z / s).collect();

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_DAMPING {
            let mut trial = v.clone();
            for (t, d) in trial.values_mut().iter_mut().zip(&delta) {
                *t += lambda * d;
            }
            let rt = saturation_residual(&trial, &base, dt, coeffs);
            if let Ok(rt) = rt {
                let n = max_abs(&rt);
                if n < rnorm {
                    accepted = Some((trial, rt, n));
                    break;
                }
                accepted = Some((trial, rt, n));
            }
            lambda *= 0.5;
        }
        let Some((trial, rt, n)) = accepted else {
            return Err(Error::Newton {
                iterations: iters,
                residual: rnorm,
            });
        };
        if !n.is_finite() {
            return Err(Error::Newton {
                iterations: iters,
                residual: n,
            });
        }
        v = trial;
        r = rt;
        rnorm = n;
    }
    Ok(SaturationStep {
        u: v,
        newton_iters: iters,
        residual: rnorm,
    })
}

/// Checkpoint bytes needed to store both trajectories of a run.
pub fn trajectory_bytes(grid: &Grid2D, nt: usize) -> usize {
    2 * (nt + 1) * grid.len() * std::mem::size_of::<f64>()
}

/// Initial fields `u0`, `p0` sampled on `grid` with the boundary pinned.
pub fn initial_fields(problem: &ProblemSpec, grid: Grid2D) -> (ScalarField, ScalarField) {
    let u0 = ScalarField::from_fn_dirichlet(grid, |x, y| (problem.u0)(x, y, 0.0));
    let p0 = ScalarField::from_fn_dirichlet(grid, |x, y| (problem.p0)(x, y, 0.0));
    (u0, p0)
}

pub fn solve_forward(
    problem: &ProblemSpec,
    control: &Control,
    opts: &SolverOptions,
) -> Result<ForwardResult> {
    opts.validate()?;
    let nt = control.nt();
    if nt != opts.nt {
        return Err(Error::Shape(format!(
            "control has {nt} steps, options ask for {}",
            opts.nt
        )));
    }
    let dt = control.dt();
    if ((nt as f64 * dt) - problem.t_final).abs() > 1e-12 * problem.t_final.max(1.0) {
        return Err(Error::Shape(format!(
            "control covers {} but the horizon is {}",
            nt as f64 * dt,
            problem.t_final
        )));
    }
    let grid = *control.grid();
    if (grid.lx - problem.lx).abs() > 1e-12 * problem.lx
        || (grid.ly - problem.ly).abs() > 1e-12 * problem.ly
    {
        return Err(Error::Shape(format!(
            "control grid covers {} x {}, problem domain is {} x {}",
            grid.lx, grid.ly, problem.lx, problem.ly
        )));
    }
    let coeffs = &problem.coefficients;
    let (u0, p0) = initial_fields(problem, grid);
    let mut us = Vec::with_capacity(nt + 1);
    let mut ps = Vec::with_capacity(nt + 1);
    us.push(u0);
    ps.push(p0);
    let mut newton_iterations = Vec::with_capacity(nt);
    let mut diagnostics = Vec::with_capacity(nt);
    for n in 0..nt {
        let step = n + 1;
        let pressure = step_pressure(&us[n], &ps[n], control.at_step(step), dt, coeffs, opts)
            .map_err(|e| e.at_step(step))?;
        let s_u = opts.aux_source_u.as_ref().map(|s| {
            let t = step as f64 * dt;
            ScalarField::from_fn_dirichlet(grid, |x, y| s(x, y, t))
        });
        let sat = step_saturation(&us[n], &pressure.p, dt, coeffs, opts, s_u.as_ref())
            .map_err(|e| e.at_step(step))?;
        if !sat.u.is_finite() || !pressure.p.is_finite() {
            return Err(Error::Divergence { step });
        }
        newton_iterations.push(sat.newton_iters);
        diagnostics.push(StepDiagnostics {
            step,
            pressure_iterations: pressure.iterations,
            pressure_residual: pressure.relative_residual,
            newton_iterations: sat.newton_iters,
            newton_residual: sat.residual,
        });
        us.push(sat.u);
        ps.push(pressure.p);
    }
    Ok(ForwardResult {
        u: Trajectory::new(dt, us)?,
        p: Trajectory::new(dt, ps)?,
        newton_iterations,
        diagnostics,
    })
}

/// Mesh for a problem with `cells` intervals per side and `nt` steps.
pub fn mesh(problem: &ProblemSpec, cells: usize, nt: usize) -> Result<(Grid2D, f64)> {
    if nt == 0 {
        return Err(Error::Parameter("nt must be at least 1".into()));
    }
    Ok((
        Grid2D::with_cells(cells, problem.lx, problem.ly)?,
        problem.t_final / nt as f64,
    ))
}
