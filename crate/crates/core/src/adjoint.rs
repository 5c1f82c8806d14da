//! Gradient of the discrete objective by a reverse sweep over the stored
//! forward states.
//!
//! Every forward step is an implicit relation between the new state and the
//! old one; the sweep applies the transposed relations in reverse order, so
//! the result is the exact derivative of the discrete `J` (up to the solver
//! tolerances), not a discretized continuous adjoint.

use crate::cost::{
    evaluate_cost_against, penalty_gradient, Control, CostBreakdown, TrackingTargets,
};
use crate::error::{Error, Result};
use crate::forward::{
    parabolic_slope, pressure_operator, saturation_operator, solve_forward, trajectory_bytes,
    ForwardResult, SolverOptions,
};
use crate::grid::ScalarField;
use crate::linalg::solve_pcg;
use crate::model::ProblemSpec;
use crate::ops::{coefficient_sensitivity, flux_divergence, FaceAverage, FaceCoefficients};

/// Default cap on stored trajectory bytes (1 GiB).
pub const DEFAULT_CHECKPOINT_LIMIT: usize = 1 << 30;

#[derive(Clone, Debug)]
pub struct GradientEval {
    pub cost: CostBreakdown,
    pub gradient: Control,
    pub forward: ForwardResult,
}

pub fn check_checkpoint_budget(f: &Control, limit: usize) -> Result<()> {
    let needed = trajectory_bytes(f.grid(), f.nt());
    if needed > limit {
        return Err(Error::Resource { needed, limit });
    }
    Ok(())
}

/// Forward solve, cost and gradient at `f`.
pub fn adjoint_gradient(
    problem: &ProblemSpec,
    f: &Control,
    opts: &SolverOptions,
) -> Result<GradientEval> {
    let targets = TrackingTargets::for_control(problem, f)?;
    adjoint_gradient_with(problem, f, opts, &targets, DEFAULT_CHECKPOINT_LIMIT)
}

pub fn adjoint_gradient_with(
    problem: &ProblemSpec,
    f: &Control,
    opts: &SolverOptions,
    targets: &TrackingTargets,
    checkpoint_limit: usize,
) -> Result<GradientEval> {
    check_checkpoint_budget(f, checkpoint_limit)?;
    let forward = solve_forward(problem, f, opts)?;
    let (cost, gradient) = gradient_from_forward(problem, f, &forward, targets, opts)?;
    Ok(GradientEval {
        cost,
        gradient,
        forward,
    })
}

fn residual_field(state: &ScalarField, target: &ScalarField, w: f64) -> ScalarField {
    let mut r = state.sub(target).expect("target shares the grid").scaled(w);
    r.zero_boundary();
    r
}

fn solve(
    op: &crate::ops::SpdStencil,
    rhs: &ScalarField,
    opts: &SolverOptions,
) -> Result<ScalarField> {
    let mut x = vec![0.0; rhs.values().len()];
    solve_pcg(op, rhs.values(), &mut x, opts.linear_tol, opts.linear_max)?;
    ScalarField::from_values(*rhs.grid(), x)
}

/// Cost and gradient at `f` given its forward solution.
pub fn gradient_from_forward(
    problem: &ProblemSpec,
    f: &Control,
    forward: &ForwardResult,
    targets: &TrackingTargets,
    opts: &SolverOptions,
) -> Result<(CostBreakdown, Control)> {
    let cost = evaluate_cost_against(&forward.u, &forward.p, f, targets, problem)?;
    let coeffs = &problem.coefficients;
    let grid = *f.grid();
    let nt = f.nt();
    let dt = f.dt();
    let w = dt * grid.cell_area();

    let mut ubar: Vec<ScalarField> = (0..=nt)
        .map(|n| {
            if n == 0 {
                ScalarField::zeros(grid)
            } else {
                residual_field(forward.u.field(n), targets.u.field(n), w)
            }
        })
        .collect();
    let mut pbar: Vec<ScalarField> = (0..=nt)
        .map(|n| {
            if n == 0 {
                ScalarField::zeros(grid)
            } else {
                residual_field(forward.p.field(n), targets.p.field(n), w)
            }
        })
        .collect();
    let mut fbar: Vec<ScalarField> = vec![ScalarField::zeros(grid); nt];

    for n in (0..nt).rev() {
        let step = n + 1;
        let u_n = forward.u.field(n);
        let u_np1 = forward.u.field(step);
        let p_np1 = forward.p.field(step);

        // saturation relation
        let slope = parabolic_slope(coeffs, u_np1).map_err(|e| e.at_step(step))?;
        let op = saturation_operator(grid, &slope, dt);
        let mut rhs = ubar[step].clone();
        for (r, s) in rhs.values_mut().iter_mut().zip(&slope) {
            *r /= s;
        }
        let z = solve(&op, &rhs, opts).map_err(|e| e.at_step(step))?;
        let gu = u_n.map(|r| (coeffs.g)(r));
        let dgu = u_n.map(|r| (coeffs.dg)(r));
        let sens = coefficient_sensitivity(&gu, &dgu, FaceAverage::Arithmetic, p_np1, &z);
        let back = flux_divergence(
            &FaceCoefficients::from_nodal(&gu, FaceAverage::Arithmetic),
            &z,
        );
        {
            let un = ubar[n].values_mut();
            for ((acc, zv), s) in un.iter_mut().zip(z.values()).zip(&sens) {
                *acc += zv / dt + s;
            }
            for (acc, b) in pbar[step].values_mut().iter_mut().zip(back.values()) {
                *acc += b;
            }
        }

        // pressure relation
        let op = pressure_operator(coeffs, u_n, dt, opts.averaging).map_err(|e| e.at_step(step))?;
        let zeta = solve(&op, &pbar[step], opts).map_err(|e| e.at_step(step))?;
        let du = u_n.map(|r| (coeffs.d)(r));
        let ddu = u_n.map(|r| (coeffs.dd)(r));
        let sens = coefficient_sensitivity(&du, &ddu, opts.averaging, p_np1, &zeta);
        for (acc, s) in ubar[n].values_mut().iter_mut().zip(&sens) {
            *acc += s;
        }
        for (acc, zv) in pbar[n].values_mut().iter_mut().zip(zeta.values()) {
            *acc += zv / dt;
        }
        fbar[n] = zeta;
    }

    let penalty = penalty_gradient(f, problem.beta1, problem.beta2, problem.q0)?;
    for (g, p) in fbar.iter_mut().zip(&penalty) {
        for (a, b) in g.values_mut().iter_mut().zip(p.values()) {
            *a += b;
        }
        g.zero_boundary();
        if let Some(mask) = f.mask() {
            for (a, &on) in g.values_mut().iter_mut().zip(mask) {
                if !on {
                    *a = 0.0;
                }
            }
        }
    }
    let mask = f.mask().map(|m| m.to_vec());
    Ok((cost, Control::from_fields(dt, fbar, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::mesh;
    use crate::model::CoefficientSet;

    #[test]
    fn oversized_checkpoints_are_refused() {
        let problem = ProblemSpec::demo();
        let (g, dt) = mesh(&problem, 16, 10).unwrap();
        let f = Control::zeros(g, dt, 10, None).unwrap();
        let targets = TrackingTargets::for_control(&problem, &f).unwrap();
        let err = adjoint_gradient_with(&problem, &f, &SolverOptions::new(10), &targets, 1000)
            .unwrap_err();
        assert!(matches!(err, Error::Resource { limit: 1000, .. }));
    }

    #[test]
    fn directional_derivative_matches_difference_quotient() {
        let mut problem = ProblemSpec::demo();
        problem.coefficients = CoefficientSet::demo();
        let nt = 6;
        let (g, dt) = mesh(&problem, 8, nt).unwrap();
        let opts = SolverOptions::tight(nt);
        let f = Control::from_fn(g, dt, nt, None, |x, y, t| {
            20.0 * (3.0 * x + y).sin() * (1.0 + 10.0 * t)
        })
        .unwrap();
        let eval = adjoint_gradient(&problem, &f, &opts).unwrap();
        let dir =
            Control::from_fn(g, dt, nt, None, |x, y, t| (x - 2.0 * y + 30.0 * t).cos()).unwrap();
        let slope: f64 = eval
            .gradient
            .to_flat()
            .iter()
            .zip(dir.to_flat())
            .map(|(a, b)| a * b)
            .sum();
        let cost_at = |s: f64| {
            let flat: Vec<f64> = f
                .to_flat()
                .iter()
                .zip(dir.to_flat())
                .map(|(a, b)| a + s * b)
                .collect();
            let c = f.with_flat(&flat).unwrap();
            let r = solve_forward(&problem, &c, &opts).unwrap();
            let t = TrackingTargets::for_control(&problem, &c).unwrap();
            evaluate_cost_against(&r.u, &r.p, &c, &t, &problem)
                .unwrap()
                .total
        };
        let h = 1e-3;
        let fd = (cost_at(h) - cost_at(-h)) / (2.0 * h);
        assert!(
            (fd - slope).abs() <= 1e-6 * slope.abs().max(1e-12),
            "fd {fd} adjoint {slope}"
        );
    }
}
