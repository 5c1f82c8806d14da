//! Descent on the control: limited-memory BFGS with Armijo backtracking,
//! a finite-difference gradient oracle, multi-start and mask comparison.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjoint::{check_checkpoint_budget, gradient_from_forward, DEFAULT_CHECKPOINT_LIMIT};
use crate::cost::{evaluate_cost_against, Control, CostBreakdown, TrackingTargets};
use crate::error::{Error, Result};
use crate::forward::{solve_forward, ForwardResult, SolverOptions};
use crate::grid::Trajectory;
use crate::model::{ProblemSpec, WellMask};

pub const MAX_BACKTRACKS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptOptions {
    pub max_outer: usize,
    pub grad_tol: f64,
    /// Length of the first (steepest-descent) step.
    pub step0: f64,
    pub armijo_c: f64,
    /// Quasi-Newton memory; 0 gives steepest descent.
    pub history_len: usize,
    /// Keep every accepted control in [`OptResult::iterates`].
    pub keep_iterates: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions {
            max_outer: 50,
            grad_tol: 1e-9,
            step0: 1.0,
            armijo_c: 1e-4,
            history_len: 10,
            keep_iterates: false,
        }
    }
}

impl OptOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer < 1 {
            return Err(Error::Parameter("max_outer must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Parameter(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Parameter(format!(
                "armijo_c must lie in (0,1), got {}",
                self.armijo_c
            )));
        }
        if !(self.step0 > 0.0) {
            return Err(Error::Parameter(format!(
                "step0 must be positive, got {}",
                self.step0
            )));
        }
        Ok(())
    }
}

/// One accepted iterate. Entry 0 is the starting point (no step taken).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub cost: CostBreakdown,
    pub grad_norm: f64,
    /// Step length `α` along the search direction.
    pub step: f64,
    /// `⟨∇J, d⟩` at the previous iterate.
    pub slope: f64,
    /// Total cost at the previous iterate.
    pub previous_total: f64,
    pub backtracks: usize,
}

impl HistoryEntry {
    /// `J_new <= J_prev + c α ⟨∇J, d⟩` as logged.
    pub fn satisfies_armijo(&self, armijo_c: f64) -> bool {
        self.iteration == 0
            || self.cost.total <= self.previous_total + armijo_c * self.step * self.slope
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub f_opt: Control,
    pub u_opt: Trajectory,
    pub p_opt: Trajectory,
    pub history: Vec<HistoryEntry>,
    /// Accepted controls, starting point first (empty unless requested).
    pub iterates: Vec<Control>,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: `-H g` from the stored `(s, y, 1/yᵀs)` pairs.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Evaluator<'a> {
    problem: &'a ProblemSpec,
    solver: &'a SolverOptions,
    targets: TrackingTargets,
    template: Control,
}

struct Point {
    control: Control,
    flat: Vec<f64>,
    cost: CostBreakdown,
    forward: ForwardResult,
}

impl Evaluator<'_> {
    fn at(&self, flat: Vec<f64>) -> Result<Point> {
        let control = self.template.with_flat(&flat)?;
        let forward = solve_forward(self.problem, &control, self.solver)?;
        let cost = evaluate_cost_against(
            &forward.u,
            &forward.p,
            &control,
            &self.targets,
            self.problem,
        )?;
        Ok(Point {
            control,
            flat,
            cost,
            forward,
        })
    }

    fn gradient(&self, pt: &Point) -> Result<Vec<f64>> {
        let (_, g) = gradient_from_forward(
            self.problem,
            &pt.control,
            &pt.forward,
            &self.targets,
            self.solver,
        )?;
        Ok(g.to_flat())
    }
}

/// Minimize the discrete objective over the degrees of freedom of `f0`.
pub fn minimize(
    problem: &ProblemSpec,
    f0: &Control,
    opts: &OptOptions,
    solver: &SolverOptions,
) -> Result<OptResult> {
    opts.validate()?;
    check_checkpoint_budget(f0, DEFAULT_CHECKPOINT_LIMIT)?;
    let ev = Evaluator {
        problem,
        solver,
        targets: TrackingTargets::for_control(problem, f0)?,
        template: f0.clone(),
    };
    let mut x = ev.at(f0.to_flat())?;
    let mut g = ev.gradient(&x)?;
    let mut gnorm = norm(&g);
    let mut history = vec![HistoryEntry {
        iteration: 0,
        cost: x.cost,
        grad_norm: gnorm,
        step: 0.0,
        slope: 0.0,
        previous_total: x.cost.total,
        backtracks: 0,
    }];
    let mut iterates = Vec::new();
    if opts.keep_iterates {
        iterates.push(x.control.clone());
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = gnorm <= opts.grad_tol;

    for iteration in 1..=opts.max_outer {
        if converged {
            break;
        }
        let steepest = |g: &[f64], gnorm: f64| -> Vec<f64> {
            g.iter().map(|v| -v * opts.step0 / gnorm).collect()
        };
        let mut d = if opts.history_len == 0 || memory.is_empty() {
            steepest(&g, gnorm)
        } else {
            lbfgs_direction(&g, &memory)
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            memory.clear();
            d = steepest(&g, gnorm);
            slope = dot(&g, &d);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for backtracks in 0..=MAX_BACKTRACKS {
            let trial: Vec<f64> = x.flat.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            // A failed forward solve (e.g. loss of parabolicity) counts as
            // an insufficient decrease.
            if let Ok(pt) = ev.at(trial) {
                if pt.cost.total <= x.cost.total + opts.armijo_c * alpha * slope {
                    accepted = Some((pt, backtracks));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((next, backtracks)) = accepted else {
            return Err(Error::Stall {
                iteration,
                backtracks: MAX_BACKTRACKS,
                cost: x.cost.total,
                grad_norm: gnorm,
            });
        };
        let g_next = ev.gradient(&next)?;
        if opts.history_len > 0 {
            let s: Vec<f64> = next.flat.iter().zip(&x.flat).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                if memory.len() == opts.history_len {
                    memory.pop_front();
                }
                memory.push_back((s, y, 1.0 / sy));
            }
        }
        let previous_total = x.cost.total;
        x = next;
        g = g_next;
        gnorm = norm(&g);
        history.push(HistoryEntry {
            iteration,
            cost: x.cost,
            grad_norm: gnorm,
            step: alpha,
            slope,
            previous_total,
            backtracks,
        });
        if opts.keep_iterates {
            iterates.push(x.control.clone());
        }
        converged = gnorm <= opts.grad_tol;
    }
    Ok(OptResult {
        f_opt: x.control,
        u_opt: x.forward.u,
        p_opt: x.forward.p,
        history,
        iterates,
        converged,
    })
}

/// A control degree of freedom: slot `slot` (time `t_{slot+1}`) at lattice
/// node `node`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Probe {
    pub slot: usize,
    pub node: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeValue {
    pub probe: Probe,
    pub h: f64,
    pub derivative: f64,
    /// Term-by-term central differences.
    pub terms: CostBreakdown,
}

fn check_probe(f: &Control, probe: Probe) -> Result<()> {
    let g = f.grid();
    if probe.slot >= f.nt() || probe.node >= g.len() {
        return Err(Error::Parameter(format!(
            "probe {probe:?} outside the control mesh"
        )));
    }
    let active = f.active_nodes();
    if active.binary_search(&probe.node).is_err() {
        return Err(Error::Parameter(format!(
            "probe {probe:?} is not a control degree of freedom"
        )));
    }
    Ok(())
}

fn perturbed(f: &Control, probe: Probe, delta: f64) -> Result<Control> {
    let nodes = f.active_nodes();
    let pos = nodes.binary_search(&probe.node).expect("probe checked");
    let mut flat = f.to_flat();
    flat[probe.slot * nodes.len() + pos] += delta;
    f.with_flat(&flat)
}

fn cost_of(
    problem: &ProblemSpec,
    f: &Control,
    targets: &TrackingTargets,
    solver: &SolverOptions,
) -> Result<CostBreakdown> {
    let r = solve_forward(problem, f, solver)?;
    evaluate_cost_against(&r.u, &r.p, f, targets, problem)
}

fn central(
    problem: &ProblemSpec,
    f: &Control,
    probe: Probe,
    h: f64,
    targets: &TrackingTargets,
    solver: &SolverOptions,
) -> Result<CostBreakdown> {
    let plus = cost_of(problem, &perturbed(f, probe, h)?, targets, solver)?;
    let minus = cost_of(problem, &perturbed(f, probe, -h)?, targets, solver)?;
    let q = |a: f64, b: f64| (a - b) / (2.0 * h);
    Ok(CostBreakdown {
        tracking_u: q(plus.tracking_u, minus.tracking_u),
        tracking_p: q(plus.tracking_p, minus.tracking_p),
        penal_f: q(plus.penal_f, minus.penal_f),
        penal_dtf: q(plus.penal_dtf, minus.penal_dtf),
        total: q(plus.total, minus.total),
    })
}

/// Central differences `(J(f + h e_k) - J(f - h e_k)) / 2h` for every probe,
/// evaluated concurrently.
pub fn fd_gradient(
    problem: &ProblemSpec,
    f: &Control,
    h: f64,
    probes: &[Probe],
    solver: &SolverOptions,
) -> Result<Vec<ProbeValue>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!(
            "difference step must be positive, got {h}"
        )));
    }
    for &p in probes {
        check_probe(f, p)?;
    }
    let targets = TrackingTargets::for_control(problem, f)?;
    probes
        .par_iter()
        .enumerate()
        .map(|(k, &probe)| {
            let terms =
                central(problem, f, probe, h, &targets, solver).map_err(|e| Error::Probe {
                    probe: k,
                    source: Box::new(e),
                })?;
            Ok(ProbeValue {
                probe,
                h,
                derivative: terms.total,
                terms,
            })
        })
        .collect()
}

/// Relative step factors of the three-point sweep.
pub const SWEEP: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Central differences with the step chosen per probe from a three-point
/// sweep `h = s · max(1, |f_k|)`, `s ∈ SWEEP`: the middle value is kept when
/// it agrees with the coarse one at least as well as with the fine one,
/// otherwise the fine value.
pub fn fd_gradient_swept(
    problem: &ProblemSpec,
    f: &Control,
    probes: &[Probe],
    solver: &SolverOptions,
) -> Result<Vec<ProbeValue>> {
    for &p in probes {
        check_probe(f, p)?;
    }
    let targets = TrackingTargets::for_control(problem, f)?;
    probes
        .par_iter()
        .enumerate()
        .map(|(k, &probe)| {
            let scale = f.fields()[probe.slot].values()[probe.node].abs().max(1.0);
            let tag = |e| Error::Probe {
                probe: k,
                source: Box::new(e),
            };
            let d: Vec<(f64, CostBreakdown)> = SWEEP
                .iter()
                .map(|s| {
                    let h = s * scale;
                    central(problem, f, probe, h, &targets, solver).map(|t| (h, t))
                })
                .collect::<Result<_>>()
                .map_err(tag)?;
            let (d1, d2, d3) = (d[0].1.total, d[1].1.total, d[2].1.total);
            let (h, terms) = if (d1 - d2).abs() <= (d2 - d3).abs() {
                d[1]
            } else {
                d[2]
            };
            Ok(ProbeValue {
                probe,
                h,
                derivative: terms.total,
                terms,
            })
        })
        .collect()
}

/// `n` distinct probes drawn uniformly from the degrees of freedom of `f`.
pub fn random_probes(f: &Control, n: usize, seed: u64) -> Vec<Probe> {
    let nodes = f.active_nodes();
    let total = nodes.len() * f.nt();
    let n = n.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n);
    picks
        .into_iter()
        .map(|k| Probe {
            slot: k / nodes.len(),
            node: nodes[k % nodes.len()],
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Random control with independent uniform values in `[-amp, amp]`.
pub fn random_control(template: &Control, amp: f64, seed: u64) -> Result<Control> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..template.dof_count())
        .map(|_| rng.gen_range(-amp..=amp))
        .collect();
    template.with_flat(&flat)
}

/// Optimize from several starting controls concurrently; results are in
/// start order.
pub fn multi_start(
    problem: &ProblemSpec,
    starts: &[Control],
    opts: &OptOptions,
    solver: &SolverOptions,
) -> Vec<Result<OptResult>> {
    starts
        .par_iter()
        .map(|f0| minimize(problem, f0, opts, solver))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaskOutcome {
    pub index: usize,
    pub active_nodes: usize,
    pub final_cost: Option<CostBreakdown>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

/// Optimize once per candidate mask from a zero control and report the
/// optimal costs, best first is left to the caller.
pub fn compare_masks(
    problem: &ProblemSpec,
    candidates: &[WellMask],
    nt: usize,
    cells: usize,
    opts: &OptOptions,
    solver: &SolverOptions,
) -> Result<Vec<MaskOutcome>> {
    let (grid, dt) = crate::forward::mesh(problem, cells, nt)?;
    candidates
        .par_iter()
        .enumerate()
        .map(|(index, mask)| {
            let nodes = mask.node_mask(&grid)?;
            let mut p = problem.clone();
            p.well_mask = Some(mask.clone());
            let f0 = Control::zeros(grid, dt, nt, Some(nodes))?;
            let active = f0.active_nodes().len();
            Ok(match minimize(&p, &f0, opts, solver) {
                Ok(r) => MaskOutcome {
                    index,
                    active_nodes: active,
                    final_cost: r.history.last().map(|h| h.cost),
                    converged: r.converged,
                    iterations: r.history.len() - 1,
                    error: None,
                },
                Err(e) => MaskOutcome {
                    index,
                    active_nodes: active,
                    final_cost: None,
                    converged: false,
                    iterations: 0,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::mesh;
    use crate::model::CoefficientSet;

    #[test]
    fn two_loop_recursion_inverts_a_diagonal_quadratic() {
        // J = ½ Σ a_i x_i²: after n independent secant pairs H = A⁻¹.
        let a = [1.0, 4.0, 9.0];
        let mut memory = VecDeque::new();
        for i in 0..3 {
            let mut s = vec![0.0; 3];
            s[i] = 1.0;
            let y: Vec<f64> = s.iter().zip(&a).map(|(s, a)| s * a).collect();
            let rho = 1.0 / dot(&s, &y);
            memory.push_back((s, y, rho));
        }
        let d = lbfgs_direction(&[2.0, 8.0, 27.0], &memory);
        for (di, e) in d.iter().zip([-2.0, -2.0, -3.0]) {
            assert!((di - e).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn probes_outside_the_mask_are_rejected() {
        let problem = ProblemSpec::unit_square(CoefficientSet::decoupled_heat(), 0.1);
        let (g, dt) = mesh(&problem, 6, 3).unwrap();
        let mut mask = vec![false; g.len()];
        mask[g.idx(2, 2)] = true;
        let f = Control::zeros(g, dt, 3, Some(mask)).unwrap();
        let bad = Probe {
            slot: 0,
            node: g.idx(3, 3),
        };
        assert!(fd_gradient(&problem, &f, 1e-3, &[bad], &SolverOptions::new(3)).is_err());
        let probes = random_probes(&f, 10, 1);
        assert_eq!(probes.len(), 3);
        assert!(probes.iter().all(|p| p.node == g.idx(2, 2)));
    }

    #[test]
    fn penalization_derivative_vanishes_at_zero_control() {
        let problem = ProblemSpec::unit_square(CoefficientSet::decoupled_heat(), 0.1);
        let (g, dt) = mesh(&problem, 6, 4).unwrap();
        let f = Control::zeros(g, dt, 4, None).unwrap();
        let probes = random_probes(&f, 5, 3);
        let fd = fd_gradient(&problem, &f, 1e-4, &probes, &SolverOptions::tight(4)).unwrap();
        for v in fd {
            assert!(
                v.terms.penal_f.abs() < 1e-12 && v.terms.penal_dtf.abs() < 1e-12,
                "{v:?}"
            );
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let problem = ProblemSpec::unit_square(CoefficientSet::demo(), 0.1);
        let (g, dt) = mesh(&problem, 6, 4).unwrap();
        let f = Control::zeros(g, dt, 4, None).unwrap();
        let r = minimize(&problem, &f, &OptOptions::default(), &SolverOptions::new(4)).unwrap();
        assert!(r.converged);
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.history[0].grad_norm, 0.0);
    }
}
