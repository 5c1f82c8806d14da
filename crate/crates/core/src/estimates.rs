//! Empirical audits of a-priori inequalities.
//!
//! Every audit computes both sides of an inequality `lhs <= c * rhs_core` on
//! solver output, records `inferred_c = lhs / rhs_core`, and judges whether
//! that constant stays put across a refinement family. Sums written `Σ dt`
//! run over the step ends `n = 1..nt`; space-time norms use the left
//! rectangle rule of [`crate::norms`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::Control;
use crate::error::{Error, Result};
use crate::forward::{mesh, solve_forward, ForwardResult, SolverOptions};
use crate::grid::{Grid2D, ScalarField, Trajectory};
use crate::holder::{holder_estimate, HolderEstimate};
use crate::laws::SpaceTimeFn;
use crate::model::ProblemSpec;
use crate::norms::{
    grad_lp_integral, grad_lp_norm, hessian_lp_integral, lp_integral, lp_norm, spacetime_grad_lp,
    spacetime_norms, time_differences,
};

pub const DRIFT_FACTOR: f64 = 1.25;
/// Exponents `q` of the higher-integrability probe `‖∇p‖_{2q, Q_T}`.
pub const INTEGRABILITY_EXPONENTS: [f64; 3] = [1.05, 1.1, 1.25];
/// Reference exponent for the Hölder estimate of `u`.
pub const HOLDER_REFERENCE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Drifting,
    Violated,
}

/// Classify a series of constants: any non-finite entry is a violation,
/// otherwise `max / min <= drift` is stable. An all-zero series is stable.
pub fn verdict_for(series: &[f64], drift: f64) -> Verdict {
    if series.iter().any(|c| !c.is_finite()) {
        return Verdict::Violated;
    }
    let max = series.iter().cloned().fold(0.0, f64::max);
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == 0.0 || max <= drift * min {
        Verdict::Stable
    } else {
        Verdict::Drifting
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub h: f64,
    pub dt: f64,
    pub inferred_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub name: String,
    /// Both sides at the finest level of the series.
    pub lhs: f64,
    pub rhs_core: f64,
    /// Largest constant over the series.
    pub inferred_c: f64,
    pub refinement_series: Vec<SeriesPoint>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl EstimateReport {
    /// Report for one mesh. `rhs_core = 0` gives `inferred_c = 0` when the
    /// left side vanishes too and an infinite constant otherwise.
    pub fn single(name: &str, lhs: f64, rhs_core: f64, h: f64, dt: f64) -> EstimateReport {
        let inferred_c = if rhs_core > 0.0 {
            lhs / rhs_core
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let series = vec![SeriesPoint { h, dt, inferred_c }];
        EstimateReport {
            name: name.to_string(),
            lhs,
            rhs_core,
            inferred_c,
            verdict: verdict_for(&[inferred_c], DRIFT_FACTOR),
            refinement_series: series,
            notes: Vec::new(),
        }
    }

    /// Concatenate per-level reports (coarse to fine) into one series.
    pub fn merge(name: &str, reports: Vec<EstimateReport>, drift: f64) -> Result<EstimateReport> {
        let Some(finest) = reports.last() else {
            return Err(Error::InsufficientData("no levels to merge".into()));
        };
        let (lhs, rhs_core) = (finest.lhs, finest.rhs_core);
        let mut series = Vec::new();
        let mut notes = Vec::new();
        for r in reports {
            series.extend(r.refinement_series);
            notes.extend(r.notes);
        }
        notes.dedup();
        let cs: Vec<f64> = series.iter().map(|p| p.inferred_c).collect();
        Ok(EstimateReport {
            name: name.to_string(),
            lhs,
            rhs_core,
            inferred_c: cs.iter().cloned().fold(0.0, f64::max),
            verdict: verdict_for(&cs, drift),
            refinement_series: series,
            notes,
        })
    }
}

/// One mesh of a refinement family: `cells` intervals per side, `nt` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Level {
    pub cells: usize,
    pub nt: usize,
}

impl Level {
    /// `count` levels doubling the cells and multiplying `nt` by
    /// `nt_factor` each time.
    pub fn family(base_cells: usize, base_nt: usize, count: usize, nt_factor: usize) -> Vec<Level> {
        (0..count)
            .map(|k| Level {
                cells: base_cells << k,
                nt: base_nt * nt_factor.pow(k as u32),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AuditOptions {
    /// Solver settings; `nt` is replaced per level.
    pub solver: SolverOptions,
    pub drift: f64,
    pub holder_pairs: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            solver: SolverOptions::new(1),
            drift: DRIFT_FACTOR,
            holder_pairs: 20_000,
            seed: 0,
        }
    }
}

/// Sample `control` on the mesh of `level` and run the forward solver.
pub fn run_level(
    problem: &ProblemSpec,
    control: &SpaceTimeFn,
    level: Level,
    opts: &AuditOptions,
) -> Result<(Control, ForwardResult)> {
    let (grid, dt) = mesh(problem, level.cells, level.nt)?;
    let mask = problem.mask_nodes(&grid)?;
    let f = Control::from_fn(grid, dt, level.nt, mask, |x, y, t| control(x, y, t))?;
    let solver = SolverOptions {
        nt: level.nt,
        ..opts.solver.clone()
    };
    let result = solve_forward(problem, &f, &solver)?;
    Ok((f, result))
}

fn run_levels(
    problem: &ProblemSpec,
    control: &SpaceTimeFn,
    levels: &[Level],
    opts: &AuditOptions,
) -> Result<Vec<(Control, ForwardResult)>> {
    levels
        .par_iter()
        .map(|&l| run_level(problem, control, l, opts))
        .collect()
}

fn require_levels(levels: &[Level], min: usize) -> Result<()> {
    if levels.len() < min {
        return Err(Error::InsufficientData(format!(
            "need at least {min} refinement levels, got {}",
            levels.len()
        )));
    }
    Ok(())
}

/// `Σ_{n=1}^{nt} dt · q(w_n)`
fn step_end_sum(traj: &Trajectory, q: impl Fn(&ScalarField) -> f64) -> f64 {
    traj.fields()[1..].iter().map(q).sum::<f64>() * traj.dt()
}

fn sup_over(traj: &Trajectory, q: impl Fn(&ScalarField) -> f64) -> f64 {
    traj.fields().iter().map(q).fold(0.0, f64::max)
}

/// `‖f‖^p_{p, Q_T}` over the control slots.
fn control_lp_integral(f: &Control, pow: f64) -> f64 {
    f.fields().iter().map(|w| lp_integral(w, pow)).sum::<f64>() * f.dt()
}

fn mesh_size(grid: &Grid2D) -> f64 {
    grid.hx.max(grid.hy)
}

/// Energy estimate for one run: `lhs = sup_n ‖p_n‖² + Σ dt ‖∇p_n‖²`,
/// `rhs_core = ‖f‖²_{2,Q_T} + ‖p_0‖²`.
pub fn energy_sides(f: &Control, result: &ForwardResult) -> (f64, f64) {
    let p = &result.p;
    let lhs = sup_over(p, |w| lp_integral(w, 2.0)) + step_end_sum(p, |w| grad_lp_integral(w, 2.0));
    let rhs = control_lp_integral(f, 2.0) + lp_integral(p.field(0), 2.0);
    (lhs, rhs)
}

/// Energy estimate for each control over each level; one report per
/// control, named `energy[k]`.
pub fn check_energy_estimate(
    problem: &ProblemSpec,
    controls: &[SpaceTimeFn],
    levels: &[Level],
    opts: &AuditOptions,
) -> Result<Vec<EstimateReport>> {
    if controls.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 controls, got {}",
            controls.len()
        )));
    }
    require_levels(levels, 2)?;
    controls
        .iter()
        .enumerate()
        .map(|(k, control)| {
            let runs = run_levels(problem, control, levels, opts)?;
            let reports = runs
                .iter()
                .map(|(f, r)| {
                    let (lhs, rhs) = energy_sides(f, r);
                    if rhs == 0.0 {
                        return Err(Error::Degenerate(format!(
                            "control {k} and the initial pressure vanish, both sides are zero"
                        )));
                    }
                    Ok(EstimateReport::single(
                        "energy",
                        lhs,
                        rhs,
                        mesh_size(f.grid()),
                        f.dt(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            EstimateReport::merge(&format!("energy[{k}]"), reports, opts.drift)
        })
        .collect()
}

/// Second-order pressure estimate for one run:
/// `lhs = sup_n ‖∇p_n‖² + Σ dt ‖∇²p_n‖²`,
/// `rhs_core = ‖∇p‖⁴_{4,Q_T} + ‖∇u‖⁴_{4,Q_T} + 1`.
pub fn check_lemma42(result: &ForwardResult) -> Result<EstimateReport> {
    let (u, p) = (&result.u, &result.p);
    if p.nt() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 steps, got {}",
            p.nt()
        )));
    }
    let lhs = sup_over(p, |w| grad_lp_integral(w, 2.0))
        + step_end_sum(p, |w| hessian_lp_integral(w, 2.0));
    let rhs = spacetime_grad_lp(p, 4.0)?.powi(4) + spacetime_grad_lp(u, 4.0)?.powi(4) + 1.0;
    let mut report = EstimateReport::single(
        "second_order_pressure",
        lhs,
        rhs,
        mesh_size(p.grid()),
        p.dt(),
    );
    report
        .notes
        .push("additive data constant replaced by 1".into());
    Ok(report)
}

/// `‖∇u‖_{4,Q_T} / ‖∇p‖_{4,Q_T}`. A vanishing pressure gradient with a
/// moving saturation is reported as a violation, not an error.
pub fn check_grad_ratio(result: &ForwardResult) -> Result<EstimateReport> {
    let (u, p) = (&result.u, &result.p);
    let lhs = spacetime_grad_lp(u, 4.0)?;
    let rhs = spacetime_grad_lp(p, 4.0)?;
    let mut report =
        EstimateReport::single("gradient_ratio", lhs, rhs, mesh_size(p.grid()), p.dt());
    if rhs == 0.0 && lhs > 0.0 {
        report
            .notes
            .push("pressure gradient vanishes while the saturation gradient does not".into());
    }
    Ok(report)
}

/// Run `check` on every level and merge the reports.
pub fn level_series(
    name: &str,
    problem: &ProblemSpec,
    control: &SpaceTimeFn,
    levels: &[Level],
    opts: &AuditOptions,
    check: impl Fn(&ForwardResult) -> Result<EstimateReport>,
) -> Result<EstimateReport> {
    require_levels(levels, 2)?;
    let runs = run_levels(problem, control, levels, opts)?;
    let reports = runs
        .iter()
        .map(|(_, r)| check(r))
        .collect::<Result<Vec<_>>>()?;
    EstimateReport::merge(name, reports, opts.drift)
}

/// `‖w‖₄² / (‖w‖₂ ‖∇w‖₂)`, or `None` for the zero field.
pub fn ladyzhenskaya_ratio(w: &ScalarField) -> Option<f64> {
    let l4 = lp_integral(w, 4.0).sqrt();
    let l2 = lp_integral(w, 2.0).sqrt();
    let g2 = grad_lp_integral(w, 2.0).sqrt();
    if l2 == 0.0 || g2 == 0.0 {
        None
    } else {
        Some(l4 / (l2 * g2))
    }
}

/// Multiplicative inequality over a set of fields on one grid; the constant
/// is the largest ratio. Zero fields are skipped.
pub fn check_multiplicative(fields: &[ScalarField]) -> Result<EstimateReport> {
    let Some(first) = fields.first() else {
        return Err(Error::InsufficientData("no fields".into()));
    };
    let grid = *first.grid();
    let mut best: Option<(f64, usize)> = None;
    let mut skipped = 0;
    for (k, w) in fields.iter().enumerate() {
        grid.check_same(w.grid())?;
        match ladyzhenskaya_ratio(w) {
            Some(r) if best.map_or(true, |(b, _)| r > b) => best = Some((r, k)),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    let used = fields.len() - skipped;
    if used < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 nonzero fields, got {used}"
        )));
    }
    let (_, k) = best.expect("at least one nonzero field");
    let w = &fields[k];
    let lhs = lp_integral(w, 4.0).sqrt();
    let rhs = lp_norm(w, 2.0)? * grad_lp_norm(w, 2.0)?;
    let mut report = EstimateReport::single("multiplicative", lhs, rhs, mesh_size(&grid), 0.0);
    if skipped > 0 {
        report.notes.push(format!("{skipped} zero fields skipped"));
    }
    Ok(report)
}

/// Multiplicative audit over several grids (coarse to fine).
pub fn multiplicative_series(levels: &[Vec<ScalarField>], drift: f64) -> Result<EstimateReport> {
    if levels.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 grids, got {}",
            levels.len()
        )));
    }
    let reports = levels
        .iter()
        .map(|f| check_multiplicative(f))
        .collect::<Result<Vec<_>>>()?;
    EstimateReport::merge("multiplicative", reports, drift)
}

/// Random fields vanishing on the boundary: sine series with `modes²`
/// terms and coefficients `U(-1, 1) / (k + l)`. Field `i` depends only on
/// `(seed, i)`, so the same functions are sampled on every grid.
pub fn random_dirichlet_fields(
    grid: Grid2D,
    count: usize,
    modes: usize,
    seed: u64,
) -> Vec<ScalarField> {
    use std::f64::consts::PI;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    .wrapping_add(i as u64),
            );
            let mut coef = Vec::with_capacity(modes * modes);
            for k in 1..=modes {
                for l in 1..=modes {
                    coef.push((k, l, rng.gen_range(-1.0..1.0) / (k + l) as f64));
                }
            }
            ScalarField::from_fn_dirichlet(grid, |x, y| {
                coef.iter()
                    .map(|&(k, l, a)| {
                        a * (k as f64 * PI * x / grid.lx).sin()
                            * (l as f64 * PI * y / grid.ly).sin()
                    })
                    .sum()
            })
        })
        .collect()
}

/// Series `a, b, c` on a uniform time mesh.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallInput {
    dt: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl GronwallInput {
    pub fn new(dt: f64, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<GronwallInput> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if a.len() < 2 || a.len() != b.len() || a.len() != c.len() {
            return Err(Error::Shape(format!(
                "series need a common length >= 2, got {}, {}, {}",
                a.len(),
                b.len(),
                c.len()
            )));
        }
        for (name, s) in [("a", &a), ("b", &b), ("c", &c)] {
            if let Some(k) = s.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Parameter(format!(
                    "{name}[{k}] = {} is not a finite nonnegative value",
                    s[k]
                )));
            }
        }
        Ok(GronwallInput { dt, a, b, c })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Same series with `b` and `c` multiplied by `k`.
    pub fn scaled_rates(&self, k: f64) -> GronwallInput {
        GronwallInput {
            dt: self.dt,
            a: self.a.clone(),
            b: self.b.iter().map(|v| v * k).collect(),
            c: self.c.iter().map(|v| v * k).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallOutcome {
    pub holds: bool,
    /// `min_{n>=1} (bound_n - a_n)`; meaningful only when the difference
    /// inequality holds.
    pub margin: f64,
    /// First `k` where `(a_{k+1} - a_k)/dt` exceeds the allowed growth.
    pub first_violation: Option<usize>,
    pub bound: Vec<f64>,
}

/// Check `(a_{k+1} - a_k)/dt <= b_k a_k + c_k + s_k` for every `k`, then the
/// conclusion `a_n <= (a_0 + Σ_{k<n} dt (c_k + s_k)) exp(Σ_{k<n} dt b_k)`.
///
/// The slack `s_k = dt b_k (b_k a_k + c_k)` is the second-order term of the
/// exact exponential growth, so sampled solutions of `a' = b a + c` pass.
/// The conclusion follows from the slackened inequality as well.
pub fn gronwall_verify(input: &GronwallInput) -> GronwallOutcome {
    verify_with(input, true)
}

/// [`gronwall_verify`] with zero slack.
pub fn gronwall_verify_strict(input: &GronwallInput) -> GronwallOutcome {
    verify_with(input, false)
}

fn verify_with(input: &GronwallInput, slack: bool) -> GronwallOutcome {
    let GronwallInput { dt, a, b, c } = input;
    let dt = *dt;
    let n = a.len();
    let allowance: Vec<f64> = (0..n)
        .map(|k| {
            let rate = b[k] * a[k] + c[k];
            c[k] + if slack { dt * b[k] * rate } else { 0.0 }
        })
        .collect();
    let first_violation = (0..n - 1).find(|&k| (a[k + 1] - a[k]) / dt > b[k] * a[k] + allowance[k]);
    let mut bound = Vec::with_capacity(n);
    let (mut additive, mut exponent) = (a[0], 0.0);
    bound.push(a[0]);
    for k in 0..n - 1 {
        additive += dt * allowance[k];
        exponent += dt * b[k];
        bound.push(additive * exponent.exp());
    }
    let margin = (1..n)
        .map(|k| bound[k] - a[k])
        .fold(f64::INFINITY, f64::min);
    let rounding = (1..n).all(|k| a[k] <= bound[k] * (1.0 + 1e-12));
    GronwallOutcome {
        holds: first_violation.is_none() && rounding,
        margin,
        first_violation,
        bound,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallFit {
    pub constant: f64,
    pub outcome: GronwallOutcome,
    pub input: GronwallInput,
}

/// Time-derivative energy of a run: `a_k = ‖∂_t u‖² + ‖∂_t p‖²` from the
/// difference quotients over `[t_k, t_{k+1}]`, with rate shape
/// `b_k = 1 + ‖∇p_{k+1}‖⁴_4` and `c_k = 1`.
pub fn time_derivative_series(result: &ForwardResult) -> Result<GronwallInput> {
    let du = time_differences(&result.u);
    let dp = time_differences(&result.p);
    if du.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 steps, got {}",
            result.u.nt()
        )));
    }
    let a: Vec<f64> = du
        .iter()
        .zip(&dp)
        .map(|(x, y)| lp_integral(x, 2.0) + lp_integral(y, 2.0))
        .collect();
    let b: Vec<f64> = (1..=du.len())
        .map(|n| 1.0 + grad_lp_integral(result.p.field(n), 4.0))
        .collect();
    let c = vec![1.0; a.len()];
    GronwallInput::new(result.u.dt(), a, b, c)
}

/// Smallest `C` (to relative precision 1e-10) such that the series with
/// rates `C b`, `C c` satisfies the difference inequality, followed by the
/// conclusion check at that constant.
pub fn fit_gronwall_constant(shape: &GronwallInput) -> Result<GronwallFit> {
    let ok = |k: f64| {
        gronwall_verify(&shape.scaled_rates(k))
            .first_violation
            .is_none()
    };
    let finish = |constant: f64| {
        let input = shape.scaled_rates(constant);
        GronwallFit {
            constant,
            outcome: gronwall_verify(&input),
            input,
        }
    };
    if ok(0.0) {
        return Ok(finish(0.0));
    }
    let mut hi = 1.0;
    while !ok(hi) {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Degenerate(
                "no finite constant satisfies the difference inequality".into(),
            ));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(finish(hi))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditQuantity {
    pub name: String,
    /// One value per level.
    pub values: Vec<f64>,
    pub bounded: bool,
    pub reference: Option<f64>,
}

/// Non-divergence over the levels after the coarsest: `max <= drift * min`.
pub fn is_bounded(values: &[f64], drift: f64) -> bool {
    let tail = if values.len() > 1 {
        &values[1..]
    } else {
        values
    };
    if tail.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let max = tail.iter().cloned().fold(0.0, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    max == 0.0 || max <= drift * min
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityAudit {
    pub levels: Vec<Level>,
    pub h: Vec<f64>,
    pub dt: Vec<f64>,
    pub quantities: Vec<AuditQuantity>,
    pub holder_u: Vec<HolderEstimate>,
    pub holder_p: Vec<HolderEstimate>,
    pub notes: Vec<String>,
}

impl RegularityAudit {
    pub fn quantity(&self, name: &str) -> Option<&AuditQuantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn all_bounded(&self) -> bool {
        self.quantities.iter().all(|q| q.bounded)
    }
}

/// Named per-level values of one run.
struct LevelAudit {
    values: Vec<(String, f64)>,
    holder_u: HolderEstimate,
    holder_p: HolderEstimate,
}

fn sup_time_derivative(traj: &Trajectory, q: impl Fn(&ScalarField) -> f64) -> f64 {
    time_differences(traj).iter().map(q).fold(0.0, f64::max)
}

fn audit_level(
    problem: &ProblemSpec,
    f: &Control,
    r: &ForwardResult,
    opts: &AuditOptions,
) -> Result<LevelAudit> {
    let (u, p) = (&r.u, &r.p);
    let holder_u = holder_estimate(u, opts.holder_pairs, opts.seed)?;
    let holder_p = holder_estimate(p, opts.holder_pairs, opts.seed.wrapping_add(1))?;
    let w2_u = spacetime_norms(u, 2.0)?;
    let w2_p = spacetime_norms(p, 2.0)?;
    let pq0 = 2.0 * problem.q0;
    let wq_u = spacetime_norms(u, pq0)?;
    let wq_p = spacetime_norms(p, pq0)?;
    let mut values = vec![
        ("holder_alpha_p".to_string(), holder_p.alpha_hat),
        ("grad_l4_u".into(), spacetime_grad_lp(u, 4.0)?),
        ("grad_l4_p".into(), spacetime_grad_lp(p, 4.0)?),
        ("w21_l2_u".into(), w2_u.w21),
        ("w21_l2_p".into(), w2_p.w21),
        (
            "sup_dt_l2_u".into(),
            sup_time_derivative(u, |w| lp_integral(w, 2.0).sqrt()),
        ),
        (
            "sup_dt_l2_p".into(),
            sup_time_derivative(p, |w| lp_integral(w, 2.0).sqrt()),
        ),
        (
            "sup_grad_dt_l2_u".into(),
            sup_time_derivative(u, |w| grad_lp_integral(w, 2.0).sqrt()),
        ),
        (
            "sup_grad_dt_l2_p".into(),
            sup_time_derivative(p, |w| grad_lp_integral(w, 2.0).sqrt()),
        ),
        ("holder_alpha_u".into(), holder_u.alpha_hat),
        ("w21_l2q0_u".into(), wq_u.w21),
        ("w21_l2q0_p".into(), wq_p.w21),
    ];
    let p0 = p.field(0);
    for q in INTEGRABILITY_EXPONENTS {
        let pw = 2.0 * q;
        let grad = spacetime_grad_lp(p, pw)?;
        let data =
            control_lp_integral(f, pw).powf(1.0 / pw) + lp_norm(p0, pw)? + grad_lp_norm(p0, pw)?;
        let ratio = if data > 0.0 {
            grad / data
        } else if grad == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        values.push((format!("grad_l{pw}_p"), grad));
        values.push((format!("grad_l{pw}_p_over_data"), ratio));
    }
    Ok(LevelAudit {
        values,
        holder_u,
        holder_p,
    })
}

/// Regularity norms of the solution for `control` on every level. Levels
/// run concurrently; the report is assembled in level order.
pub fn regularity_audit(
    problem: &ProblemSpec,
    control: &SpaceTimeFn,
    levels: &[Level],
    opts: &AuditOptions,
) -> Result<RegularityAudit> {
    require_levels(levels, 2)?;
    let per_level: Vec<(Control, LevelAudit)> = levels
        .par_iter()
        .map(|&l| {
            let (f, r) = run_level(problem, control, l, opts)?;
            let audit = audit_level(problem, &f, &r, opts)?;
            Ok((f, audit))
        })
        .collect::<Result<_>>()?;
    let names: Vec<String> = per_level[0]
        .1
        .values
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    let quantities = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<f64> = per_level.iter().map(|(_, a)| a.values[k].1).collect();
            AuditQuantity {
                name: name.clone(),
                bounded: is_bounded(&values, opts.drift),
                reference: (name == "holder_alpha_u").then_some(HOLDER_REFERENCE),
                values,
            }
        })
        .collect();
    Ok(RegularityAudit {
        levels: levels.to_vec(),
        h: per_level.iter().map(|(f, _)| mesh_size(f.grid())).collect(),
        dt: per_level.iter().map(|(f, _)| f.dt()).collect(),
        quantities,
        holder_u: per_level.iter().map(|(_, a)| a.holder_u).collect(),
        holder_p: per_level.iter().map(|(_, a)| a.holder_p).collect(),
        notes: vec!["integrability probe data term uses the initial pressure".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn exp_series(rate: f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (rate * k as f64 * dt).exp()).collect()
    }

    #[test]
    fn exponential_equality_case_holds() {
        let n = 101;
        let dt = 0.01;
        let input =
            GronwallInput::new(dt, exp_series(2.0, dt, n), vec![2.0; n], vec![0.0; n]).unwrap();
        let out = gronwall_verify(&input);
        assert!(out.holds);
        assert!(out.margin > 0.0);
        assert!(gronwall_verify_strict(&input).first_violation == Some(0));
    }

    #[test]
    fn faster_growth_fails_at_first_index() {
        let n = 101;
        let dt = 0.01;
        let input =
            GronwallInput::new(dt, exp_series(3.0, dt, n), vec![2.0; n], vec![0.0; n]).unwrap();
        let out = gronwall_verify(&input);
        assert!(!out.holds);
        assert_eq!(out.first_violation, Some(0));
    }

    #[test]
    fn negative_series_rejected() {
        assert!(GronwallInput::new(0.1, vec![1.0, -1.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(GronwallInput::new(0.1, vec![1.0], vec![0.0], vec![0.0]).is_err());
    }

    #[test]
    fn fitted_constant_is_minimal() {
        let dt = 0.05;
        let a: Vec<f64> = (0..20)
            .map(|k| 1.0 + (k as f64 * dt).powi(2) * 5.0)
            .collect();
        let shape = GronwallInput::new(dt, a, vec![1.0; 20], vec![1.0; 20]).unwrap();
        let fit = fit_gronwall_constant(&shape).unwrap();
        assert!(fit.outcome.holds);
        assert!(fit.constant > 0.0);
        let below = gronwall_verify(&shape.scaled_rates(fit.constant * (1.0 - 1e-6)));
        assert!(below.first_violation.is_some());
    }

    #[test]
    fn sine_ratio_matches_closed_form() {
        let g = Grid2D::with_cells(64, 1.0, 1.0).unwrap();
        let w = ScalarField::from_fn_dirichlet(g, |x, y| (PI * x).sin() * (PI * y).sin());
        // ‖w‖₄² = 3/8, ‖w‖₂ = 1/2, ‖∇w‖₂ = π/√2
        let exact = 0.375 / (0.5 * PI / 2f64.sqrt());
        let r = ladyzhenskaya_ratio(&w).unwrap();
        assert!((r / exact - 1.0).abs() < 1e-2, "{r} vs {exact}");
        let scaled = ladyzhenskaya_ratio(&w.scaled(-7.5)).unwrap();
        assert!((scaled / r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn multiplicative_needs_ten_nonzero_fields() {
        let g = Grid2D::with_cells(8, 1.0, 1.0).unwrap();
        let mut fields = random_dirichlet_fields(g, 9, 3, 1);
        fields.push(ScalarField::zeros(g));
        let err = check_multiplicative(&fields).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)));
        fields.extend(random_dirichlet_fields(g, 2, 3, 2));
        let rep = check_multiplicative(&fields).unwrap();
        assert_eq!(rep.notes, vec!["1 zero fields skipped".to_string()]);
    }

    #[test]
    fn verdicts() {
        assert_eq!(verdict_for(&[1.0, 1.2], 1.25), Verdict::Stable);
        assert_eq!(verdict_for(&[1.0, 1.3], 1.25), Verdict::Drifting);
        assert_eq!(verdict_for(&[0.0, 0.0], 1.25), Verdict::Stable);
        assert_eq!(verdict_for(&[0.0, 1.0], 1.25), Verdict::Drifting);
        assert_eq!(verdict_for(&[1.0, f64::INFINITY], 1.25), Verdict::Violated);
        assert!(is_bounded(&[100.0, 1.0, 1.2], 1.25));
        assert!(!is_bounded(&[1.0, 1.0, 1.3], 1.25));
    }
}
