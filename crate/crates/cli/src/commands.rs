//! Subcommand bodies. Each writes its artifacts into the run directory and
//! returns a one-line summary for the terminal.

use std::sync::Arc;

use deadoil::adjoint::adjoint_gradient;
use deadoil::config::RunConfig;
use deadoil::cost::{evaluate_cost, Control, CostBreakdown};
use deadoil::estimates::{
    check_energy_estimate, check_grad_ratio, check_lemma42, fit_gronwall_constant, level_series,
    multiplicative_series, random_dirichlet_fields, regularity_audit, run_level,
    time_derivative_series, AuditOptions, EstimateReport, Level,
};
use deadoil::forward::{solve_forward, SolverOptions};
use deadoil::laws::SpaceTimeFn;
use deadoil::manufactured::{
    manufactured_problem, spatial_levels, spatial_study, temporal_study, ConvergenceRow,
};
use deadoil::model::{validate_hypotheses, ValidationReport, WellMask};
use deadoil::optimize::{
    compare_masks, fd_gradient_swept, multi_start, random_control, random_probes, relative_error,
    HistoryEntry, OptOptions,
};
use deadoil::{Grid2D, ProblemSpec};
use serde::Serialize;
use serde_json::json;

use crate::manifest::RunDir;
use crate::{CliError, CliResult};

/// Gradient agreement required by `verify`.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Random fields per level in the multiplicative audit.
pub const RANDOM_FIELDS: usize = 100;
pub const RANDOM_MODES: usize = 6;
/// Step counts of the temporal self-convergence study in `mms`.
pub const MMS_TIME_STEPS: [usize; 4] = [10, 20, 40, 80];
pub const MMS_TIME_CELLS: usize = 64;
pub const MMS_BASE_NT: usize = 25;

fn grid_of(cfg: &RunConfig) -> CliResult<(Grid2D, f64)> {
    let d = &cfg.domain;
    let grid = Grid2D::new(d.nx, d.ny, d.lx, d.ly)?;
    if d.nt == 0 {
        return Err(CliError::Usage("[domain] nt must be at least 1".into()));
    }
    Ok((grid, d.t_final / d.nt as f64))
}

fn square_cells(cfg: &RunConfig) -> CliResult<usize> {
    let d = &cfg.domain;
    if d.nx != d.ny {
        return Err(CliError::Usage(format!(
            "refinement studies need nx = ny, got {} and {}",
            d.nx, d.ny
        )));
    }
    Ok(d.nx + 1)
}

pub fn solver_options(cfg: &RunConfig) -> SolverOptions {
    let s = &cfg.solver;
    SolverOptions {
        newton_tol: s.newton_tol,
        newton_max: s.newton_max,
        linear_tol: s.linear_tol,
        linear_max: s.linear_max,
        averaging: s.averaging,
        ..SolverOptions::new(cfg.domain.nt)
    }
}

fn source_of(cfg: &RunConfig) -> SpaceTimeFn {
    cfg.wells.source.on_domain(cfg.domain.lx, cfg.domain.ly)
}

fn control_from(problem: &ProblemSpec, cfg: &RunConfig, f: &SpaceTimeFn) -> CliResult<Control> {
    let (grid, dt) = grid_of(cfg)?;
    let mask = problem.mask_nodes(&grid)?;
    Ok(Control::from_fn(
        grid,
        dt,
        cfg.domain.nt,
        mask,
        |x, y, t| f(x, y, t),
    )?)
}

fn validate(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    dir: &mut RunDir,
) -> CliResult<ValidationReport> {
    let c = &cfg.coefficients;
    let report = validate_hypotheses(
        &problem.coefficients,
        (c.range_min, c.range_max),
        c.samples,
        c.derivative_tol,
    )?;
    dir.json("validation.json", &report)?;
    Ok(report)
}

fn require_valid(report: &ValidationReport) -> CliResult<()> {
    if report.passed {
        return Ok(());
    }
    let detail = match report.first_failure() {
        Some(c) => format!(
            "clause `{}` fails at r = {} (margin {})",
            c.clause, c.witness, c.margin
        ),
        None => "derivative consistency check fails".to_string(),
    };
    Err(CliError::Check(format!(
        "coefficient hypotheses violated: {detail}"
    )))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn cost_cells(c: &CostBreakdown) -> String {
    format!(
        "{},{},{},{},{}",
        num(c.total),
        num(c.tracking_u),
        num(c.tracking_p),
        num(c.penal_f),
        num(c.penal_dtf)
    )
}

pub fn simulate(cfg: &RunConfig, problem: &ProblemSpec, dir: &mut RunDir) -> CliResult<String> {
    require_valid(&validate(cfg, problem, dir)?)?;
    let f = control_from(problem, cfg, &source_of(cfg))?;
    let r = solve_forward(problem, &f, &solver_options(cfg))?;
    dir.trajectory("u", &r.u)?;
    dir.trajectory("p", &r.p)?;
    dir.write(
        "diagnostics.csv",
        csv(
            "step,pressure_iterations,pressure_residual,newton_iterations,newton_residual",
            r.diagnostics.iter().map(|d| {
                format!(
                    "{},{},{},{},{}",
                    d.step,
                    d.pressure_iterations,
                    num(d.pressure_residual),
                    d.newton_iterations,
                    num(d.newton_residual)
                )
            }),
        ),
    )?;
    let cost = evaluate_cost(&r.u, &r.p, &f, problem)?;
    dir.json(
        "summary.json",
        &json!({
            "grid": f.grid(),
            "dt": f.dt(),
            "nt": f.nt(),
            "cost": cost,
            "newton_iterations": r.newton_iterations.iter().sum::<usize>(),
        }),
    )?;
    Ok(format!("simulated {} steps, J = {:e}", f.nt(), cost.total))
}

fn history_csv(history: &[HistoryEntry]) -> String {
    csv(
        "iteration,total,tracking_u,tracking_p,penal_f,penal_dtf,grad_norm,step,backtracks",
        history.iter().map(|h| {
            format!(
                "{},{},{},{},{}",
                h.iteration,
                cost_cells(&h.cost),
                num(h.grad_norm),
                num(h.step),
                h.backtracks
            )
        }),
    )
}

#[derive(Serialize)]
struct StartSummary {
    index: usize,
    converged: bool,
    iterations: usize,
    final_cost: Option<CostBreakdown>,
    error: Option<String>,
}

pub fn optimize(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    seed: u64,
    dir: &mut RunDir,
) -> CliResult<String> {
    require_valid(&validate(cfg, problem, dir)?)?;
    let o = &cfg.optimize;
    if o.starts == 0 {
        return Err(CliError::Usage(
            "[optimize] starts must be at least 1".into(),
        ));
    }
    let f0 = control_from(problem, cfg, &o.f0.on_domain(cfg.domain.lx, cfg.domain.ly))?;
    let amp = f0.to_flat().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut starts = vec![f0.clone()];
    for k in 1..o.starts {
        let noise = random_control(&f0, amp, seed.wrapping_add(k as u64))?;
        let flat: Vec<f64> = f0
            .to_flat()
            .iter()
            .zip(noise.to_flat())
            .map(|(a, b)| a + b)
            .collect();
        starts.push(f0.with_flat(&flat)?);
    }
    let opts = OptOptions {
        max_outer: o.max_outer,
        grad_tol: o.grad_tol,
        step0: o.step0,
        armijo_c: o.armijo_c,
        history_len: o.history_len,
        keep_iterates: false,
    };
    let solver = solver_options(cfg);
    let results = multi_start(problem, &starts, &opts, &solver);
    let mut summaries = Vec::with_capacity(results.len());
    for (k, r) in results.iter().enumerate() {
        let summary = match r {
            Ok(r) => {
                dir.write(&format!("start_{k}/history.csv"), history_csv(&r.history))?;
                StartSummary {
                    index: k,
                    converged: r.converged,
                    iterations: r.history.len() - 1,
                    final_cost: r.history.last().map(|h| h.cost),
                    error: None,
                }
            }
            Err(e) => StartSummary {
                index: k,
                converged: false,
                iterations: 0,
                final_cost: None,
                error: Some(e.to_string()),
            },
        };
        summaries.push(summary);
    }
    let mut masks = Vec::new();
    if !cfg.wells.candidates.is_empty() {
        let cells = square_cells(cfg)?;
        let candidates: Vec<WellMask> = cfg
            .wells
            .candidates
            .iter()
            .map(|r| WellMask::Rects(r.clone()))
            .collect();
        masks = compare_masks(problem, &candidates, cfg.domain.nt, cells, &opts, &solver)?;
        dir.write(
            "masks.csv",
            csv(
                "candidate,active_nodes,converged,iterations,total,tracking_u,tracking_p,penal_f,penal_dtf,error",
                masks.iter().map(|m| {
                    let cost = m.final_cost.map(|c| cost_cells(&c)).unwrap_or_else(|| ",,,,".into());
                    let err = m.error.as_deref().unwrap_or("").replace(',', ";");
                    format!("{},{},{},{},{},{}", m.index, m.active_nodes, m.converged, m.iterations, cost, err)
                }),
            ),
        )?;
    }
    let best = summaries
        .iter()
        .filter_map(|s| s.final_cost.map(|c| (s.index, c.total)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k);
    let Some(b) = best else {
        dir.json(
            "summary.json",
            &json!({ "starts": summaries, "best": null }),
        )?;
        let first = results
            .into_iter()
            .find_map(|r| r.err())
            .expect("no start succeeded");
        return Err(first.into());
    };
    let r = results[b].as_ref().expect("best start succeeded");
    for (n, field) in r.f_opt.fields().iter().enumerate() {
        dir.field(&format!("f_opt/step_{:05}.csv", n + 1), field)?;
    }
    dir.trajectory("u_opt", &r.u_opt)?;
    dir.trajectory("p_opt", &r.p_opt)?;
    dir.json(
        "summary.json",
        &json!({ "starts": summaries, "best": b, "masks": masks }),
    )?;
    let last = r.history.last().expect("history has the start");
    Ok(format!(
        "best start {b}: J = {:e} after {} iterations (converged: {})",
        last.cost.total,
        r.history.len() - 1,
        r.converged
    ))
}

pub fn verify(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    seed: u64,
    dir: &mut RunDir,
) -> CliResult<String> {
    let report = validate(cfg, problem, dir)?;
    let f = control_from(problem, cfg, &source_of(cfg))?;
    let base = solver_options(cfg);
    let tight = SolverOptions::tight(base.nt);
    let solver = SolverOptions {
        newton_tol: base.newton_tol.min(tight.newton_tol),
        linear_tol: base.linear_tol.min(tight.linear_tol),
        linear_max: base.linear_max.max(tight.linear_max),
        ..base
    };
    let eval = adjoint_gradient(problem, &f, &solver)?;
    let probes = random_probes(&f, cfg.optimize.fd_probes, seed);
    let fd = fd_gradient_swept(problem, &f, &probes, &solver)?;
    let gmax = eval
        .gradient
        .to_flat()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * gmax;
    let rows: Vec<(usize, usize, f64, f64, f64, f64)> = fd
        .iter()
        .map(|v| {
            let adj = eval.gradient.fields()[v.probe.slot].values()[v.probe.node];
            (
                v.probe.slot,
                v.probe.node,
                adj,
                v.derivative,
                v.h,
                relative_error(adj, v.derivative, floor),
            )
        })
        .collect();
    dir.write(
        "gradient_check.csv",
        csv(
            "slot,node,adjoint,finite_difference,h,relative_error",
            rows.iter().map(|r| {
                format!(
                    "{},{},{},{},{},{}",
                    r.0,
                    r.1,
                    num(r.2),
                    num(r.3),
                    num(r.4),
                    num(r.5)
                )
            }),
        ),
    )?;
    let worst = rows.iter().map(|r| r.5).fold(0.0, f64::max);
    let gradient_ok = worst <= GRADIENT_TOL;
    dir.json(
        "summary.json",
        &json!({
            "hypotheses_passed": report.passed,
            "probes": rows.len(),
            "max_relative_error": worst,
            "tolerance": GRADIENT_TOL,
            "gradient_passed": gradient_ok,
        }),
    )?;
    require_valid(&report)?;
    if !gradient_ok {
        return Err(CliError::Check(format!(
            "adjoint and finite-difference gradients differ by {worst:e} (tolerance {GRADIENT_TOL:e})"
        )));
    }
    Ok(format!(
        "hypotheses hold; gradient agrees on {} probes (worst {worst:e})",
        rows.len()
    ))
}

fn series_rows(report: &EstimateReport) -> impl Iterator<Item = String> + '_ {
    report
        .refinement_series
        .iter()
        .enumerate()
        .map(move |(k, p)| {
            format!(
                "{},{},{},{},{},{:?}",
                report.name,
                k,
                num(p.h),
                num(p.dt),
                num(p.inferred_c),
                report.verdict
            )
            .to_lowercase()
        })
}

pub fn audit(
    cfg: &RunConfig,
    problem: &ProblemSpec,
    levels: usize,
    seed: u64,
    dir: &mut RunDir,
) -> CliResult<String> {
    if levels < 2 {
        return Err(CliError::Usage(format!(
            "--levels must be at least 2, got {levels}"
        )));
    }
    let drift = cfg.audit.drift;
    if !(drift >= 1.0) {
        return Err(CliError::Usage(format!(
            "[audit] drift must be at least 1, got {drift}"
        )));
    }
    let family = Level::family(square_cells(cfg)?, cfg.domain.nt, levels, 4);
    let opts = AuditOptions {
        solver: solver_options(cfg),
        drift,
        holder_pairs: 20_000,
        seed,
    };
    let src = source_of(cfg);
    let lx = cfg.domain.lx;
    let tilted: SpaceTimeFn = {
        let s = src.clone();
        Arc::new(move |x, y, t| 0.5 * (1.0 + x / lx) * s(x, y, t))
    };
    let mut reports = check_energy_estimate(problem, &[src.clone(), tilted], &family, &opts)?;
    reports.push(level_series(
        "second_order_pressure",
        problem,
        &src,
        &family,
        &opts,
        check_lemma42,
    )?);
    reports.push(level_series(
        "gradient_ratio",
        problem,
        &src,
        &family,
        &opts,
        check_grad_ratio,
    )?);
    let fields = family
        .iter()
        .map(|l| {
            Ok(random_dirichlet_fields(
                Grid2D::with_cells(l.cells, cfg.domain.lx, cfg.domain.ly)?,
                RANDOM_FIELDS,
                RANDOM_MODES,
                seed,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;
    reports.push(multiplicative_series(&fields, opts.drift)?);

    let mut gronwall = Vec::with_capacity(family.len());
    for &l in &family {
        let (_, r) = run_level(problem, &src, l, &opts)?;
        let fit = fit_gronwall_constant(&time_derivative_series(&r)?)?;
        gronwall.push((l, fit));
    }
    let reg = regularity_audit(problem, &src, &family, &opts)?;

    dir.write(
        "estimates.csv",
        csv(
            "estimate,level,h,dt,inferred_c,verdict",
            reports.iter().flat_map(series_rows),
        ),
    )?;
    dir.json("estimates.json", &reports)?;
    let mut rows = Vec::new();
    for q in &reg.quantities {
        for (k, v) in q.values.iter().enumerate() {
            let l = reg.levels[k];
            rows.push(format!(
                "{},{},{},{},{},{},{},{},{}",
                q.name,
                k,
                l.cells,
                l.nt,
                num(reg.h[k]),
                num(reg.dt[k]),
                num(*v),
                q.bounded,
                opt(q.reference)
            ));
        }
    }
    dir.write(
        "quantities.csv",
        csv("quantity,level,cells,nt,h,dt,value,bounded,reference", rows),
    )?;
    let holder_rows = ["u", "p"].iter().flat_map(|name| {
        let est = if *name == "u" {
            &reg.holder_u
        } else {
            &reg.holder_p
        };
        est.iter()
            .enumerate()
            .map(move |(k, e)| format!("{name},{k},{},{}", num(e.alpha_hat), num(e.constant_hat)))
    });
    dir.write(
        "holder.csv",
        csv("field,level,alpha_hat,constant_hat", holder_rows),
    )?;
    dir.write(
        "gronwall.csv",
        csv(
            "level,cells,nt,constant,holds,margin",
            gronwall.iter().enumerate().map(|(k, (l, f))| {
                format!(
                    "{k},{},{},{},{},{}",
                    l.cells,
                    l.nt,
                    num(f.constant),
                    f.outcome.holds,
                    num(f.outcome.margin)
                )
            }),
        ),
    )?;
    let unstable: Vec<&str> = reports
        .iter()
        .filter(|r| r.verdict != deadoil::estimates::Verdict::Stable)
        .map(|r| r.name.as_str())
        .collect();
    let mut notes = vec!["constants are specific to the rectangular domain".to_string()];
    notes.extend(reg.notes.iter().cloned());
    let unbounded: Vec<&str> = reg
        .quantities
        .iter()
        .filter(|q| !q.bounded)
        .map(|q| q.name.as_str())
        .collect();
    dir.json(
        "summary.json",
        &json!({
            "levels": family,
            "drift": opts.drift,
            "verdicts": reports.iter().map(|r| (r.name.clone(), r.verdict)).collect::<Vec<_>>(),
            "gronwall_holds": gronwall.iter().all(|(_, f)| f.outcome.holds),
            "all_bounded": reg.all_bounded(),
            "unbounded": unbounded,
            "notes": notes,
        }),
    )?;
    Ok(format!(
        "{} estimates ({} not stable), {} regularity quantities ({} unbounded)",
        reports.len(),
        unstable.len(),
        reg.quantities.len(),
        unbounded.len()
    ))
}

fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    csv(
        "cells,nt,h,dt,error_u,error_p,order_u,order_p",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.cells,
                r.nt,
                num(r.h),
                num(r.dt),
                num(r.error_u),
                num(r.error_p),
                opt(r.order_u),
                opt(r.order_p)
            )
        }),
    )
}

pub fn mms(case_id: &str, levels: usize, dir: &mut RunDir) -> CliResult<String> {
    if levels < 2 {
        return Err(CliError::Usage(format!(
            "--levels must be at least 2, got {levels}"
        )));
    }
    let case = manufactured_problem(case_id)?;
    let space = spatial_study(&case, &spatial_levels(levels, MMS_BASE_NT))?;
    let time = temporal_study(&case, MMS_TIME_CELLS, &MMS_TIME_STEPS)?;
    dir.write("convergence_space.csv", convergence_csv(&space))?;
    dir.write("convergence_time.csv", convergence_csv(&time))?;
    let last = |rows: &[ConvergenceRow]| rows.last().map(|r| (r.order_u, r.order_p));
    dir.json(
        "summary.json",
        &json!({
            "case": case.name,
            "spatial": space,
            "temporal": time,
        }),
    )?;
    let (su, sp) = last(&space).unwrap_or_default();
    let (tu, tp) = last(&time).unwrap_or_default();
    Ok(format!(
        "{}: spatial order u {} p {}, temporal order u {} p {}",
        case.name,
        opt(su),
        opt(sp),
        opt(tu),
        opt(tp)
    ))
}
