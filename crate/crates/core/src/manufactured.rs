//! Manufactured solutions: closed-form `(u, p)` pairs with the sources that
//! make them exact, and convergence studies against them.
//!
//! Sources come from the chain rule:
//!
//! ```text
//! f   = p_t - d(u) Δp - d'(u) ∇u·∇p
//! s_u = u_t - φ'(u) Δu - φ''(u) |∇u|² - g(u) Δp - g'(u) ∇u·∇p
//! ```

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::cost::Control;
use crate::error::{Error, Result};
use crate::forward::{mesh, solve_forward, SolverOptions};
use crate::grid::{Grid2D, ScalarField};
use crate::laws::{LawSpec, SpaceTimeFn};
use crate::model::{CoefficientSet, HypothesisBounds, ProblemSpec};
use crate::norms::lp_norm;

pub const CASES: &[&str] = &["M1", "M2"];

/// Spatial profile on the unit square, vanishing on the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Profile {
    /// `x(1-x) y(1-y)`
    Poly,
    /// `sin(πx) sin(πy)`
    Sine,
}

impl Profile {
    fn eval(self, x: f64, y: f64) -> (f64, f64, f64, f64) {
        // value, d/dx, d/dy, Laplacian
        match self {
            Profile::Poly => {
                let (qx, qy) = (x * (1.0 - x), y * (1.0 - y));
                (
                    qx * qy,
                    (1.0 - 2.0 * x) * qy,
                    qx * (1.0 - 2.0 * y),
                    -2.0 * (qx + qy),
                )
            }
            Profile::Sine => {
                let (sx, sy) = ((PI * x).sin(), (PI * y).sin());
                let (cx, cy) = ((PI * x).cos(), (PI * y).cos());
                (
                    sx * sy,
                    PI * cx * sy,
                    PI * sx * cy,
                    -2.0 * PI * PI * sx * sy,
                )
            }
        }
    }
}

/// `scale (t + quad t²) profile(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separable {
    pub scale: f64,
    pub quad: f64,
    pub profile: Profile,
}

/// Value and derivatives of an exact field at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dx: f64,
    pub dy: f64,
    pub lap: f64,
    pub dt: f64,
}

impl Separable {
    pub fn jet(&self, x: f64, y: f64, t: f64) -> Jet {
        let a = self.scale * (t + self.quad * t * t);
        let da = self.scale * (1.0 + 2.0 * self.quad * t);
        let (v, vx, vy, lap) = self.profile.eval(x, y);
        Jet {
            value: a * v,
            dx: a * vx,
            dy: a * vy,
            lap: a * lap,
            dt: da * v,
        }
    }
}

#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: String,
    pub problem: ProblemSpec,
    pub laws: (LawSpec, LawSpec, LawSpec),
    pub exact_u: Separable,
    pub exact_p: Separable,
    /// Pressure source `f(x, y, t)`.
    pub control: SpaceTimeFn,
    /// Saturation source `s_u(x, y, t)`.
    pub s_u: SpaceTimeFn,
}

impl std::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("name", &self.name)
            .field("exact_u", &self.exact_u)
            .field("exact_p", &self.exact_p)
            .finish_non_exhaustive()
    }
}

fn sources(
    phi: &LawSpec,
    g: &LawSpec,
    d: &LawSpec,
    u: Separable,
    p: Separable,
) -> (SpaceTimeFn, SpaceTimeFn) {
    let (phi_f, g_f, d_f) = (phi.clone(), g.clone(), d.clone());
    let f: SpaceTimeFn = Arc::new(move |x, y, t| {
        let (ju, jp) = (u.jet(x, y, t), p.jet(x, y, t));
        let r = ju.value;
        jp.dt - d_f.value(r) * jp.lap - d_f.derivative(r) * (ju.dx * jp.dx + ju.dy * jp.dy)
    });
    let s: SpaceTimeFn = Arc::new(move |x, y, t| {
        let (ju, jp) = (u.jet(x, y, t), p.jet(x, y, t));
        let r = ju.value;
        let grad_u2 = ju.dx * ju.dx + ju.dy * ju.dy;
        let cross = ju.dx * jp.dx + ju.dy * jp.dy;
        ju.dt
            - phi_f.derivative(r) * ju.lap
            - phi_f.second_derivative(r) * grad_u2
            - g_f.value(r) * jp.lap
            - g_f.derivative(r) * cross
    });
    (f, s)
}

/// Look up a registered case.
///
/// * `M1`: `u = t x(1-x) y(1-y)`, `p = t sin(πx) sin(πy)`, `φ = r`,
///   `g = 1`, `d = 1 + r`.
/// * `M2`: `u = 8 t(1+t) x(1-x) y(1-y)`, `p = t(1+t) sin(πx) sin(πy)` with
///   the demo laws.
///
/// Both live on the unit square with horizon `0.1`.
pub fn manufactured_problem(case_id: &str) -> Result<ManufacturedCase> {
    let (phi, g, d, bounds, u, p) = match case_id {
        "M1" => (
            LawSpec::Identity,
            LawSpec::Constant(1.0),
            LawSpec::Affine { a0: 1.0, a1: 1.0 },
            HypothesisBounds {
                c1: 0.5,
                c2: 10.0,
                c3: 1.0,
                delta_phi: 1.0,
            },
            Separable {
                scale: 1.0,
                quad: 0.0,
                profile: Profile::Poly,
            },
            Separable {
                scale: 1.0,
                quad: 0.0,
                profile: Profile::Sine,
            },
        ),
        "M2" => {
            let demo = CoefficientSet::demo();
            let laws = demo.source.clone().expect("demo laws are registry laws");
            (
                laws.phi,
                laws.g,
                laws.d,
                demo.bounds,
                Separable {
                    scale: 8.0,
                    quad: 1.0,
                    profile: Profile::Poly,
                },
                Separable {
                    scale: 1.0,
                    quad: 1.0,
                    profile: Profile::Sine,
                },
            )
        }
        other => {
            return Err(Error::Lookup(format!(
                "unknown manufactured case `{other}` (known: {})",
                CASES.join(", ")
            )))
        }
    };
    let (control, s_u) = sources(&phi, &g, &d, u, p);
    let coefficients = CoefficientSet::from_laws(phi.clone(), g.clone(), d.clone(), bounds);
    let problem = ProblemSpec::unit_square(coefficients, 0.1);
    Ok(ManufacturedCase {
        name: case_id.to_string(),
        problem,
        laws: (phi, g, d),
        exact_u: u,
        exact_p: p,
        control,
        s_u,
    })
}

impl ManufacturedCase {
    pub fn control_on(&self, grid: Grid2D, nt: usize) -> Result<Control> {
        let f = self.control.clone();
        Control::from_fn(
            grid,
            self.problem.t_final / nt as f64,
            nt,
            None,
            move |x, y, t| f(x, y, t),
        )
    }

    pub fn options(&self, nt: usize) -> SolverOptions {
        SolverOptions {
            aux_source_u: Some(self.s_u.clone()),
            newton_tol: 1e-12,
            linear_tol: 1e-13,
            linear_max: 20_000,
            ..SolverOptions::new(nt)
        }
    }

    pub fn exact_u_at(&self, grid: Grid2D, t: f64) -> ScalarField {
        ScalarField::from_fn_dirichlet(grid, |x, y| self.exact_u.jet(x, y, t).value)
    }

    pub fn exact_p_at(&self, grid: Grid2D, t: f64) -> ScalarField {
        ScalarField::from_fn_dirichlet(grid, |x, y| self.exact_p.jet(x, y, t).value)
    }

    /// Final-time fields of one run with `cells` intervals per side.
    pub fn final_fields(&self, cells: usize, nt: usize) -> Result<(ScalarField, ScalarField)> {
        let (grid, _) = mesh(&self.problem, cells, nt)?;
        let control = self.control_on(grid, nt)?;
        let run = solve_forward(&self.problem, &control, &self.options(nt))?;
        Ok((run.u.last().clone(), run.p.last().clone()))
    }
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub nt: usize,
    pub h: f64,
    pub dt: f64,
    pub error_u: f64,
    pub error_p: f64,
    /// Observed orders against the previous row (absent on the first).
    pub order_u: Option<f64>,
    pub order_p: Option<f64>,
}

fn fill_orders(
    rows: &mut [ConvergenceRow],
    ratio: impl Fn(&ConvergenceRow, &ConvergenceRow) -> f64,
) {
    for k in 1..rows.len() {
        let r = ratio(&rows[k - 1], &rows[k]).ln();
        let (a, b) = (&rows[k - 1], &rows[k]);
        let ou = (a.error_u / b.error_u).ln() / r;
        let op = (a.error_p / b.error_p).ln() / r;
        rows[k].order_u = Some(ou);
        rows[k].order_p = Some(op);
    }
}

/// Levels `16 · 2^k` cells with `nt = base_nt · 4^k` (`dt ∝ h²`),
/// `k = 0..levels`.
pub fn spatial_levels(levels: usize, base_nt: usize) -> Vec<(usize, usize)> {
    (0..levels).map(|k| (16 << k, base_nt << (2 * k))).collect()
}

/// L² errors against the exact solution at the final time, with observed
/// orders in `h`.
pub fn spatial_study(
    case: &ManufacturedCase,
    levels: &[(usize, usize)],
) -> Result<Vec<ConvergenceRow>> {
    let t = case.problem.t_final;
    let mut rows = levels
        .par_iter()
        .map(|&(cells, nt)| {
            let (grid, dt) = mesh(&case.problem, cells, nt)?;
            let (u, p) = case.final_fields(cells, nt)?;
            let eu = lp_norm(&u.sub(&case.exact_u_at(grid, t))?, 2.0)?;
            let ep = lp_norm(&p.sub(&case.exact_p_at(grid, t))?, 2.0)?;
            Ok(ConvergenceRow {
                cells,
                nt,
                h: grid.hx,
                dt,
                error_u: eu,
                error_p: ep,
                order_u: None,
                order_p: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fill_orders(&mut rows, |a, b| a.h / b.h);
    Ok(rows)
}

/// Self-convergence in time on a fixed grid: row `k` holds the final-time
/// difference between the runs with `nts[k]` and `nts[k + 1]` steps.
pub fn temporal_study(
    case: &ManufacturedCase,
    cells: usize,
    nts: &[usize],
) -> Result<Vec<ConvergenceRow>> {
    if nts.len() < 3 {
        return Err(Error::InsufficientData(
            "temporal study needs at least 3 step counts".into(),
        ));
    }
    let runs = nts
        .par_iter()
        .map(|&nt| case.final_fields(cells, nt))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(nts.len() - 1);
    for k in 0..nts.len() - 1 {
        let (u0, p0) = &runs[k];
        let (u1, p1) = &runs[k + 1];
        rows.push(ConvergenceRow {
            cells,
            nt: nts[k],
            h: u0.grid().hx,
            dt: case.problem.t_final / nts[k] as f64,
            error_u: lp_norm(&u0.sub(u1)?, 2.0)?,
            error_p: lp_norm(&p0.sub(p1)?, 2.0)?,
            order_u: None,
            order_p: None,
        });
    }
    fill_orders(&mut rows, |a, b| a.dt / b.dt);
    Ok(rows)
}
