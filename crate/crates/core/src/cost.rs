//! Controls and the four-term tracking objective.
//!
//! With `w = dt hx hy` and sums over every lattice node,
//!
//! ```text
//! tracking_u = 1/2 Σ_{n=1..nt} w |u_n - U(t_n)|²
//! tracking_p = 1/2 Σ_{n=1..nt} w |p_n - P(t_n)|²
//! penal_f    = β1/2 Σ_{n=1..nt} w |f_n|^{2 q0}
//! penal_dtf  = β2/2 Σ_{n=1..nt} w |δf_n|²
//! ```
//!
//! where `δf` is [`dt_control`]. Trajectory samples are taken at the step
//! ends, where the implicit scheme defines them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, Trajectory};
use crate::model::{ProblemSpec, Target};

/// Space-time source `f` sampled at `t_1..t_nt`, optionally restricted to a
/// node subset. Entries on the boundary ring and outside the mask are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    dt: f64,
    fields: Vec<ScalarField>,
    mask: Option<Vec<bool>>,
}

fn active_nodes(grid: &Grid2D, mask: Option<&[bool]>) -> Vec<usize> {
    let mut nodes = Vec::with_capacity(grid.interior_count());
    for (i, j) in grid.interior() {
        let k = grid.idx(i, j);
        if mask.map_or(true, |m| m[k]) {
            nodes.push(k);
        }
    }
    nodes.sort_unstable();
    nodes
}

impl Control {
    pub fn zeros(grid: Grid2D, dt: f64, nt: usize, mask: Option<Vec<bool>>) -> Result<Control> {
        Control::from_fn(grid, dt, nt, mask, |_, _, _| 0.0)
    }

    /// Sample `f(x, y, t_n)` for `n = 1..=nt`, then zero the boundary ring
    /// and every node outside `mask`.
    pub fn from_fn(
        grid: Grid2D,
        dt: f64,
        nt: usize,
        mask: Option<Vec<bool>>,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Control> {
        if nt == 0 {
            return Err(Error::Parameter("control needs at least one step".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if let Some(m) = &mask {
            if m.len() != grid.len() {
                return Err(Error::Shape(format!(
                    "mask has {} entries for {} nodes",
                    m.len(),
                    grid.len()
                )));
            }
        }
        let fields = (1..=nt)
            .map(|n| {
                let t = n as f64 * dt;
                let mut field = ScalarField::from_fn_dirichlet(grid, |x, y| f(x, y, t));
                if let Some(m) = &mask {
                    for (v, &on) in field.values_mut().iter_mut().zip(m) {
                        if !on {
                            *v = 0.0;
                        }
                    }
                }
                field
            })
            .collect();
        let c = Control { dt, fields, mask };
        c.check_finite()?;
        Ok(c)
    }

    /// Wrap existing fields; they must already vanish on the boundary and
    /// outside the mask.
    pub fn from_fields(
        dt: f64,
        fields: Vec<ScalarField>,
        mask: Option<Vec<bool>>,
    ) -> Result<Control> {
        let Some(first) = fields.first() else {
            return Err(Error::Parameter("control needs at least one step".into()));
        };
        let grid = *first.grid();
        for f in &fields {
            grid.check_same(f.grid())?;
            if !f.boundary_is_zero() {
                return Err(Error::Parameter(
                    "control must vanish on the boundary".into(),
                ));
            }
        }
        if let Some(m) = &mask {
            if m.len() != grid.len() {
                return Err(Error::Shape(format!(
                    "mask has {} entries for {} nodes",
                    m.len(),
                    grid.len()
                )));
            }
            for f in &fields {
                if f.values().iter().zip(m).any(|(v, on)| !on && *v != 0.0) {
                    return Err(Error::Parameter(
                        "control is nonzero outside the well mask".into(),
                    ));
                }
            }
        }
        let c = Control { dt, fields, mask };
        c.check_finite()?;
        Ok(c)
    }

    fn check_finite(&self) -> Result<()> {
        for f in &self.fields {
            if let Some(node) = f.first_non_finite() {
                return Err(Error::FieldEvaluation { node });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid2D {
        self.fields[0].grid()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nt(&self) -> usize {
        self.fields.len()
    }

    /// Fields at `t_1..t_nt`; slot `k` holds time `(k + 1) dt`.
    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    /// Field at step end `n` (`1..=nt`).
    pub fn at_step(&self, n: usize) -> &ScalarField {
        &self.fields[n - 1]
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    /// Lattice indices of the nodes that carry degrees of freedom.
    pub fn active_nodes(&self) -> Vec<usize> {
        active_nodes(self.grid(), self.mask())
    }

    pub fn dof_count(&self) -> usize {
        self.active_nodes().len() * self.nt()
    }

    /// Degrees of freedom, slot-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let nodes = self.active_nodes();
        let mut out = Vec::with_capacity(nodes.len() * self.nt());
        for f in &self.fields {
            let v = f.values();
            out.extend(nodes.iter().map(|&k| v[k]));
        }
        out
    }

    /// Same mesh and mask, values from a flat vector laid out as in
    /// [`Control::to_flat`].
    pub fn with_flat(&self, flat: &[f64]) -> Result<Control> {
        let nodes = self.active_nodes();
        if flat.len() != nodes.len() * self.nt() {
            return Err(Error::Shape(format!(
                "expected {} control values, got {}",
                nodes.len() * self.nt(),
                flat.len()
            )));
        }
        let grid = *self.grid();
        let fields = (0..self.nt())
            .map(|slot| {
                let mut f = ScalarField::zeros(grid);
                let v = f.values_mut();
                let chunk = &flat[slot * nodes.len()..(slot + 1) * nodes.len()];
                for (&k, &x) in nodes.iter().zip(chunk) {
                    v[k] = x;
                }
                f
            })
            .collect();
        let c = Control {
            dt: self.dt,
            fields,
            mask: self.mask.clone(),
        };
        c.check_finite()?;
        Ok(c)
    }

    pub fn scaled(&self, factor: f64) -> Control {
        Control {
            dt: self.dt,
            fields: self.fields.iter().map(|f| f.scaled(factor)).collect(),
            mask: self.mask.clone(),
        }
    }

    /// Check that `self` lives on the mesh of `traj` (`nt` steps of `dt`).
    pub fn check_mesh(&self, traj: &Trajectory) -> Result<()> {
        self.grid().check_same(traj.grid())?;
        if self.nt() != traj.nt() || (self.dt - traj.dt()).abs() > 1e-12 * self.dt {
            return Err(Error::Shape(format!(
                "control has {} steps of {}, trajectory {} steps of {}",
                self.nt(),
                self.dt,
                traj.nt(),
                traj.dt()
            )));
        }
        Ok(())
    }
}

/// Discrete time derivative of a control: `(f_{n+1} - f_n)/dt` for
/// `n = 1..nt-1`, the last slot repeating the final difference.
pub fn dt_control(f: &Control) -> Result<Control> {
    let nt = f.nt();
    if nt < 2 {
        return Err(Error::InsufficientData(format!(
            "time derivative of a control needs at least 2 steps, got {nt}"
        )));
    }
    let mut fields: Vec<ScalarField> = f
        .fields
        .windows(2)
        .map(|pair| {
            let mut d = pair[1].sub(&pair[0]).expect("control slots share a grid");
            d.values_mut().iter_mut().for_each(|v| *v /= f.dt);
            d
        })
        .collect();
    fields.push(fields[nt - 2].clone());
    Ok(Control {
        dt: f.dt,
        fields,
        mask: f.mask.clone(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CostBreakdown {
    pub tracking_u: f64,
    pub tracking_p: f64,
    pub penal_f: f64,
    pub penal_dtf: f64,
    pub total: f64,
}

impl CostBreakdown {
    fn from_terms(tracking_u: f64, tracking_p: f64, penal_f: f64, penal_dtf: f64) -> CostBreakdown {
        CostBreakdown {
            tracking_u,
            tracking_p,
            penal_f,
            penal_dtf,
            total: tracking_u + tracking_p + penal_f + penal_dtf,
        }
    }
}

/// Sample a target on `nt` steps of `dt` (all nodes, `t_0..t_nt`).
pub fn target_trajectory(target: &Target, grid: Grid2D, dt: f64, nt: usize) -> Result<Trajectory> {
    match target {
        Target::Field(f) => Trajectory::from_fn(grid, dt, nt, |x, y, t| f(x, y, t)),
        Target::Samples(traj) => {
            let probe = Trajectory::from_fn(grid, dt, nt, |_, _, _| 0.0)?;
            traj.check_same_mesh(&probe)?;
            Ok((**traj).clone())
        }
    }
}

/// Targets sampled once for repeated cost evaluations on one mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingTargets {
    pub u: Trajectory,
    pub p: Trajectory,
}

impl TrackingTargets {
    pub fn sample(
        problem: &ProblemSpec,
        grid: Grid2D,
        dt: f64,
        nt: usize,
    ) -> Result<TrackingTargets> {
        Ok(TrackingTargets {
            u: target_trajectory(&problem.u_target, grid, dt, nt)?,
            p: target_trajectory(&problem.p_target, grid, dt, nt)?,
        })
    }

    pub fn for_control(problem: &ProblemSpec, f: &Control) -> Result<TrackingTargets> {
        TrackingTargets::sample(problem, *f.grid(), f.dt(), f.nt())
    }
}

fn tracking(traj: &Trajectory, target: &Trajectory) -> f64 {
    let w = traj.dt() * traj.grid().cell_area();
    let mut sum = 0.0;
    for (a, b) in traj.fields()[1..].iter().zip(&target.fields()[1..]) {
        sum += a
            .values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    0.5 * w * sum
}

/// `β1/2 Σ w |f|^{2 q0}`.
pub fn penal_f(f: &Control, beta1: f64, q0: f64) -> f64 {
    let w = f.dt * f.grid().cell_area();
    let pow = 2.0 * q0;
    let sum: f64 = f
        .fields
        .iter()
        .flat_map(|x| x.values())
        .map(|v| v.abs().powf(pow))
        .sum();
    0.5 * beta1 * w * sum
}

/// `β2/2 Σ w |δf|²`.
pub fn penal_dtf(f: &Control, beta2: f64) -> Result<f64> {
    let d = dt_control(f)?;
    let w = f.dt * f.grid().cell_area();
    let sum: f64 = d
        .fields
        .iter()
        .flat_map(|x| x.values())
        .map(|v| v * v)
        .sum();
    Ok(0.5 * beta2 * w * sum)
}

pub fn evaluate_cost(
    u: &Trajectory,
    p: &Trajectory,
    f: &Control,
    problem: &ProblemSpec,
) -> Result<CostBreakdown> {
    let targets = TrackingTargets::for_control(problem, f)?;
    evaluate_cost_against(u, p, f, &targets, problem)
}

pub fn evaluate_cost_against(
    u: &Trajectory,
    p: &Trajectory,
    f: &Control,
    targets: &TrackingTargets,
    problem: &ProblemSpec,
) -> Result<CostBreakdown> {
    u.check_same_mesh(p)?;
    f.check_mesh(u)?;
    u.check_same_mesh(&targets.u)?;
    p.check_same_mesh(&targets.p)?;
    Ok(CostBreakdown::from_terms(
        tracking(u, &targets.u),
        tracking(p, &targets.p),
        penal_f(f, problem.beta1, problem.q0),
        penal_dtf(f, problem.beta2)?,
    ))
}

/// Gradient of `penal_f + penal_dtf` with respect to every control value,
/// shaped like `f`.
pub fn penalty_gradient(f: &Control, beta1: f64, beta2: f64, q0: f64) -> Result<Vec<ScalarField>> {
    let nt = f.nt();
    if nt < 2 {
        return Err(Error::InsufficientData(format!(
            "penalty gradient needs at least 2 steps, got {nt}"
        )));
    }
    let w = f.dt * f.grid().cell_area();
    let pow = 2.0 * q0 - 2.0;
    let mut grad: Vec<ScalarField> = f
        .fields
        .iter()
        .map(|x| {
            x.map(|v| {
                if v == 0.0 {
                    0.0
                } else {
                    beta1 * q0 * w * v.abs().powf(pow) * v
                }
            })
        })
        .collect();
    // The last difference is counted twice by the closure.
    for k in 0..nt - 1 {
        let weight = if k == nt - 2 { 2.0 } else { 1.0 };
        let scale = beta2 * w * weight / (f.dt * f.dt);
        let (lo, hi) = grad.split_at_mut(k + 1);
        let (a, b) = (f.fields[k].values(), f.fields[k + 1].values());
        for (node, (gk, gk1)) in lo[k]
            .values_mut()
            .iter_mut()
            .zip(hi[0].values_mut())
            .enumerate()
        {
            let d = (b[node] - a[node]) * scale;
            *gk1 += d;
            *gk -= d;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientSet;
    use std::sync::Arc;

    fn unit_grid(n: usize) -> Grid2D {
        Grid2D::new(n, n, 1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_and_ramp_differences() {
        let g = unit_grid(4);
        let c = Control::from_fn(g, 0.25, 4, None, |_, _, _| 3.0).unwrap();
        assert!(dt_control(&c)
            .unwrap()
            .fields()
            .iter()
            .all(|f| f.max_abs() == 0.0));
        let ramp = Control::from_fn(g, 0.25, 4, None, |_, _, t| t).unwrap();
        let d = dt_control(&ramp).unwrap();
        for f in d.fields() {
            for (i, j) in g.interior() {
                assert_eq!(f.at(i, j), 1.0);
            }
        }
        assert!(dt_control(&Control::zeros(g, 1.0, 1, None).unwrap()).is_err());
    }

    #[test]
    fn mask_and_boundary_are_zeroed() {
        let g = unit_grid(5);
        let mut mask = vec![false; g.len()];
        mask[g.idx(2, 3)] = true;
        mask[g.idx(0, 0)] = true;
        let c = Control::from_fn(g, 0.1, 3, Some(mask.clone()), |_, _, _| 1.0).unwrap();
        assert_eq!(c.active_nodes(), vec![g.idx(2, 3)]);
        assert_eq!(c.to_flat(), vec![1.0; 3]);
        let back = c.with_flat(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(back.at_step(3).at(2, 3), 3.0);
        let bad = ScalarField::constant(g, 1.0);
        assert!(Control::from_fields(0.1, vec![bad], None).is_err());
    }

    #[test]
    fn penalization_of_constant_control() {
        // f ≡ 2 on interior nodes, q0 = 1.5: β1/2 Σ w 2³.
        let g = unit_grid(31);
        let f = Control::from_fn(g, 0.1, 10, None, |_, _, _| 2.0).unwrap();
        let expected = 0.5 * 8.0 * (31.0 * 31.0) * g.cell_area() * 10.0 * 0.1;
        assert!((penal_f(&f, 1.0, 1.5) - expected).abs() < 1e-12);
        assert!((expected - 4.0).abs() < 0.3);
    }

    #[test]
    fn penalty_gradient_matches_difference_quotients() {
        let g = unit_grid(3);
        let f = Control::from_fn(g, 0.2, 5, None, |x, y, t| (3.0 * x - y + 7.0 * t).sin()).unwrap();
        let (b1, b2, q0) = (0.7, 0.3, 1.3);
        let j = |c: &Control| penal_f(c, b1, q0) + penal_dtf(c, b2).unwrap();
        let grad = penalty_gradient(&f, b1, b2, q0).unwrap();
        let flat = f.to_flat();
        let nodes = f.active_nodes();
        for (dof, _) in flat.iter().enumerate() {
            let h = 1e-6;
            let mut plus = flat.clone();
            plus[dof] += h;
            let mut minus = flat.clone();
            minus[dof] -= h;
            let fd =
                (j(&f.with_flat(&plus).unwrap()) - j(&f.with_flat(&minus).unwrap())) / (2.0 * h);
            let (slot, node) = (dof / nodes.len(), nodes[dof % nodes.len()]);
            let an = grad[slot].values()[node];
            assert!(
                (fd - an).abs() <= 1e-7 * (1.0 + an.abs()),
                "{dof}: {fd} vs {an}"
            );
        }
    }

    #[test]
    fn zero_cost_at_targets() {
        let g = unit_grid(6);
        let mut problem = ProblemSpec::unit_square(CoefficientSet::demo(), 1.0);
        let u = Trajectory::from_fn(g, 0.25, 4, |x, y, t| x * y * t).unwrap();
        let p = Trajectory::from_fn(g, 0.25, 4, |x, _, t| x + t).unwrap();
        problem.u_target = Target::Samples(Arc::new(u.clone()));
        problem.p_target = Target::Field(Arc::new(|x, _, t| x + t));
        let f = Control::zeros(g, 0.25, 4, None).unwrap();
        let cost = evaluate_cost(&u, &p, &f, &problem).unwrap();
        assert_eq!(cost, CostBreakdown::default());
    }

    #[test]
    fn tracking_of_unit_mismatch() {
        // u - U = 1 on interior nodes, T = 1: 1/2 · (interior area) · T.
        let g = unit_grid(31);
        let nt = 8;
        let problem = ProblemSpec::unit_square(CoefficientSet::demo(), 1.0);
        let u = Trajectory::from_fn(g, 1.0 / nt as f64, nt, |_, _, _| 0.0)
            .unwrap()
            .map_fields(|f| ScalarField::from_fn_dirichlet(*f.grid(), |_, _| 1.0));
        let p = Trajectory::from_fn(g, 1.0 / nt as f64, nt, |_, _, _| 0.0).unwrap();
        let f = Control::zeros(g, 1.0 / nt as f64, nt, None).unwrap();
        let cost = evaluate_cost(&u, &p, &f, &problem).unwrap();
        let expected = 0.5 * (31.0 * 31.0) / (32.0 * 32.0);
        assert!((cost.tracking_u - expected).abs() < 1e-14);
        assert_eq!(cost.total, cost.tracking_u);
    }
}
