//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use deadoil::adjoint::adjoint_gradient;
use deadoil::cost::{dt_control, evaluate_cost, Control};
use deadoil::estimates::*;
use deadoil::forward::{mesh, solve_forward, SolverOptions};
use deadoil::laws::{FieldSpec, LawSpec, SpaceTimeFn};
use deadoil::manufactured::{manufactured_problem, spatial_levels, spatial_study, temporal_study};
use deadoil::model::{validate_hypotheses, Target};
use deadoil::norms::spacetime_lp;
use deadoil::optimize::{
    fd_gradient_swept, minimize, random_control, random_probes, relative_error, OptOptions,
};
use deadoil::{CoefficientSet, Grid2D, ProblemSpec, ScalarField, Trajectory};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sine_law(a0: f64, a1: f64, amp: f64, freq: f64) -> LawSpec {
    LawSpec::Sine { a0, a1, amp, freq }
}

fn hypotheses() -> Outcome {
    let demo = CoefficientSet::demo();
    let ok = validate_hypotheses(&demo, (-2.0, 2.0), 10_001, 1e-6).map_err(|e| e.to_string())?;
    let bad = CoefficientSet::from_laws(
        sine_law(0.0, 1.0, 0.3, 1.0),
        sine_law(0.5, 0.0, 0.25, 1.0),
        sine_law(1.6, 0.0, 0.7, 2.0),
        demo.bounds,
    );
    let report = validate_hypotheses(&bad, (-2.0, 2.0), 10_001, 1e-6).map_err(|e| e.to_string())?;
    let c = report.first_failure().ok_or("violating set passed")?;
    let spacing = 4.0 / 10_000.0;
    ensure(
        ok.passed && c.clause == "d >= c1" && (c.witness + PI / 4.0).abs() <= spacing,
        format!(
            "demo passes: {}; violation `{}` at r = {:.5} (expected {:.5})",
            ok.passed,
            c.clause,
            c.witness,
            -PI / 4.0
        ),
    )
}

fn relative_spacetime_error(got: &Trajectory, exact: &Trajectory) -> f64 {
    let diff = got.fields().iter().zip(exact.fields());
    let diff = Trajectory::new(got.dt(), diff.map(|(a, b)| a.sub(b).unwrap()).collect()).unwrap();
    spacetime_lp(&diff, 2.0).unwrap() / spacetime_lp(exact, 2.0).unwrap()
}

fn heat_benchmark() -> Outcome {
    let mut problem = ProblemSpec::unit_square(CoefficientSet::decoupled_heat(), 0.01);
    let sine = |x: f64, y: f64, _t: f64| (PI * x).sin() * (PI * y).sin();
    problem.u0 = Arc::new(sine);
    problem.p0 = Arc::new(sine);
    let nt = 200;
    let (g, dt) = mesh(&problem, 64, nt).map_err(|e| e.to_string())?;
    let f = Control::zeros(g, dt, nt, None).map_err(|e| e.to_string())?;
    let run = solve_forward(&problem, &f, &SolverOptions::new(nt)).map_err(|e| e.to_string())?;
    let exact = Trajectory::from_fn(g, dt, nt, |x, y, t| {
        (-2.0 * PI * PI * t).exp() * sine(x, y, t)
    })
    .unwrap();
    let eu = relative_spacetime_error(&run.u, &exact);
    let ep = relative_spacetime_error(&run.p, &exact);
    ensure(
        eu <= 0.02 && ep <= 0.02,
        format!("relative L2(Q_T) error u {eu:.3e}, p {ep:.3e} (limit 2e-2)"),
    )
}

fn convergence() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for id in ["M1", "M2"] {
        let case = manufactured_problem(id).map_err(|e| e.to_string())?;
        let space = spatial_study(&case, &spatial_levels(3, 25)).map_err(|e| e.to_string())?;
        let time = temporal_study(&case, 64, &[10, 20, 40, 80]).map_err(|e| e.to_string())?;
        let min_order = |rows: &[deadoil::manufactured::ConvergenceRow]| {
            rows[1..]
                .iter()
                .flat_map(|r| [r.order_u.unwrap(), r.order_p.unwrap()])
                .fold(f64::INFINITY, f64::min)
        };
        let (s, t) = (min_order(&space), min_order(&time));
        ok &= s >= 1.9 && t >= 0.9;
        parts.push(format!("{id} space {s:.3} time {t:.3}"));
    }
    ensure(ok, format!("min observed orders: {}", parts.join(", ")))
}

fn gradient() -> Outcome {
    let problem = ProblemSpec::demo();
    let (cells, nt) = (10, 8);
    let (g, dt) = mesh(&problem, cells, nt).unwrap();
    let src = ProblemSpec::demo_source().on_domain(1.0, 1.0);
    let base = Control::from_fn(g, dt, nt, None, |x, y, t| src(x, y, t)).unwrap();
    let noise = random_control(&base, 5.0, 11).unwrap();
    let flat: Vec<f64> = base
        .to_flat()
        .iter()
        .zip(noise.to_flat())
        .map(|(a, b)| a + b)
        .collect();
    let f = base.with_flat(&flat).unwrap();
    let opts = SolverOptions::tight(nt);
    let eval = adjoint_gradient(&problem, &f, &opts).map_err(|e| e.to_string())?;
    let ginf = eval
        .gradient
        .to_flat()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let probes = random_probes(&f, 60, 2024);
    let fd = fd_gradient_swept(&problem, &f, &probes, &opts).map_err(|e| e.to_string())?;
    let worst = fd
        .iter()
        .map(|v| {
            let an = eval.gradient.fields()[v.probe.slot].values()[v.probe.node];
            relative_error(an, v.derivative, 1e-6 * ginf)
        })
        .fold(0.0f64, f64::max);
    ensure(
        fd.len() >= 50 && worst <= 1e-5,
        format!(
            "{} probes, worst relative error {worst:.3e} (limit 1e-5)",
            fd.len()
        ),
    )
}

/// Targets generated by a known control on an 8-cell, 8-step mesh.
fn inverse_crime(beta: f64) -> (ProblemSpec, Control, SolverOptions) {
    let mut problem = ProblemSpec::demo();
    problem.beta1 = beta;
    problem.beta2 = beta;
    let nt = 8;
    let (g, dt) = mesh(&problem, 8, nt).unwrap();
    let dagger = Control::from_fn(g, dt, nt, None, |x, y, t| {
        40.0 * (PI * x).sin() * (PI * y).sin() * (1.0 + 10.0 * t)
    })
    .unwrap();
    let opts = SolverOptions::tight(nt);
    let run = solve_forward(&problem, &dagger, &opts).unwrap();
    problem.u_target = Target::Samples(Arc::new(run.u));
    problem.p_target = Target::Samples(Arc::new(run.p));
    (problem, dagger, opts)
}

fn power_sum(f: &Control, pow: f64) -> f64 {
    let w = f.dt() * f.grid().cell_area();
    f.fields()
        .iter()
        .flat_map(|x| x.values())
        .map(|v| v.abs().powf(pow))
        .sum::<f64>()
        * w
}

fn minimizing_sequence() -> Outcome {
    let (problem, dagger, solver) = inverse_crime(1e-3);
    let f0 = random_control(&dagger, 20.0, 9).unwrap();
    let opts = OptOptions {
        max_outer: 30,
        keep_iterates: true,
        ..OptOptions::default()
    };
    let r = minimize(&problem, &f0, &opts, &solver).map_err(|e| e.to_string())?;
    let j0 = r.history[0].cost.total;
    let monotone = r
        .history
        .windows(2)
        .all(|w| w[1].cost.total <= w[0].cost.total);
    let (mut worst_f, mut worst_dt) = (0.0f64, 0.0f64);
    for f in &r.iterates {
        worst_f = worst_f.max(power_sum(f, 2.0 * problem.q0) / (2.0 * j0 / problem.beta1));
        let d = dt_control(f).map_err(|e| e.to_string())?;
        worst_dt = worst_dt.max(power_sum(&d, 2.0) / (2.0 * j0 / problem.beta2));
    }
    ensure(
        monotone && worst_f <= 1.0 && worst_dt <= 1.0 && r.iterates.len() == r.history.len(),
        format!(
            "{} iterates, J {:.4e} -> {:.4e}, monotone {monotone}, bound usage {worst_f:.3e} / {worst_dt:.3e}",
            r.iterates.len(),
            j0,
            r.history.last().unwrap().cost.total
        ),
    )
}

fn generating_control() -> Outcome {
    let (problem, dagger, solver) = inverse_crime(1e-7);
    let run = solve_forward(&problem, &dagger, &solver).map_err(|e| e.to_string())?;
    let j_dagger = evaluate_cost(&run.u, &run.p, &dagger, &problem)
        .map_err(|e| e.to_string())?
        .total;
    let f0 = random_control(&dagger, 20.0, 5).unwrap();
    let opts = OptOptions {
        max_outer: 200,
        grad_tol: 1e-12,
        ..OptOptions::default()
    };
    let r = minimize(&problem, &f0, &opts, &solver).map_err(|e| e.to_string())?;
    let last = r.history.last().unwrap().cost.total;
    ensure(
        last <= j_dagger + 1e-8,
        format!(
            "J = {last:.3e} after {} iterations, J(f†) + 1e-8 = {:.3e}",
            r.history.len() - 1,
            j_dagger + 1e-8
        ),
    )
}

fn demo_levels() -> Vec<Level> {
    Level::family(16, 20, 3, 4)
}

fn energy() -> Outcome {
    let linear = ProblemSpec::unit_square(CoefficientSet::decoupled_heat(), 0.1);
    let base = FieldSpec::Gaussian {
        amp: 10.0,
        x0: 0.3,
        y0: 0.6,
        width: 0.2,
        tau: 0.01,
    }
    .on_domain(1.0, 1.0);
    let scaled: Vec<SpaceTimeFn> = [1.0, 2.0, 4.0]
        .iter()
        .map(|&lambda| {
            let f = base.clone();
            Arc::new(move |x: f64, y: f64, t: f64| lambda * f(x, y, t)) as SpaceTimeFn
        })
        .collect();
    let opts = AuditOptions::default();
    let reports = check_energy_estimate(&linear, &scaled, &Level::family(16, 10, 2, 2), &opts)
        .map_err(|e| e.to_string())?;
    let mut spread = 0.0f64;
    for r in &reports[1..] {
        for (a, b) in r
            .refinement_series
            .iter()
            .zip(&reports[0].refinement_series)
        {
            spread = spread.max(rel(a.inferred_c, b.inferred_c));
        }
    }

    let src = ProblemSpec::demo_source().on_domain(1.0, 1.0);
    let tilted: SpaceTimeFn = {
        let s = src.clone();
        Arc::new(move |x, y, t| 0.5 * (1.0 + x) * s(x, y, t))
    };
    let demo = check_energy_estimate(&ProblemSpec::demo(), &[src, tilted], &demo_levels(), &opts)
        .map_err(|e| e.to_string())?;
    let stable = demo.iter().all(|r| r.verdict == Verdict::Stable);
    let series: Vec<String> = demo
        .iter()
        .map(|r| {
            let c: Vec<String> = r
                .refinement_series
                .iter()
                .map(|p| format!("{:.4}", p.inferred_c))
                .collect();
            format!("{} [{}]", r.name, c.join(", "))
        })
        .collect();
    ensure(
        spread <= 1e-10 && stable,
        format!(
            "scaling spread {spread:.1e}; demo {} ({})",
            series.join(", "),
            if stable { "stable" } else { "drifting" }
        ),
    )
}

fn multiplicative() -> Outcome {
    let g = Grid2D::with_cells(64, 1.0, 1.0).unwrap();
    let w = ScalarField::from_fn_dirichlet(g, |x, y| (PI * x).sin() * (PI * y).sin());
    let exact = 0.375 / (0.5 * PI / 2f64.sqrt());
    let r = ladyzhenskaya_ratio(&w).ok_or("zero sine field")?;
    let levels: Vec<Vec<ScalarField>> = [16, 32, 64]
        .iter()
        .map(|&n| random_dirichlet_fields(Grid2D::with_cells(n, 1.0, 1.0).unwrap(), 100, 6, 11))
        .collect();
    let rep = multiplicative_series(&levels, DRIFT_FACTOR).map_err(|e| e.to_string())?;
    let maxima: Vec<String> = rep
        .refinement_series
        .iter()
        .map(|p| format!("{:.4}", p.inferred_c))
        .collect();
    ensure(
        rel(r, exact) <= 1e-2 && rep.verdict == Verdict::Stable,
        format!(
            "sine ratio {r:.5} vs {exact:.5}; random max over 16/32/64: {} ({:?})",
            maxima.join(", "),
            rep.verdict
        ),
    )
}

fn gronwall() -> Outcome {
    let (n, dt) = (101, 0.01);
    let series = |rate: f64| (0..n).map(|k| (rate * k as f64 * dt).exp()).collect();
    let exp2 = GronwallInput::new(dt, series(2.0), vec![2.0; n], vec![0.0; n]).unwrap();
    let exp3 = GronwallInput::new(dt, series(3.0), vec![2.0; n], vec![0.0; n]).unwrap();
    let pass = gronwall_verify(&exp2);
    let fail = gronwall_verify(&exp3);

    let src = ProblemSpec::demo_source().on_domain(1.0, 1.0);
    let level = Level { cells: 32, nt: 80 };
    let (_, run) = run_level(&ProblemSpec::demo(), &src, level, &AuditOptions::default())
        .map_err(|e| e.to_string())?;
    let shape = time_derivative_series(&run).map_err(|e| e.to_string())?;
    let fit = fit_gronwall_constant(&shape).map_err(|e| e.to_string())?;
    let below = gronwall_verify(&shape.scaled_rates(0.99 * fit.constant));
    ensure(
        pass.holds && fail.first_violation == Some(0) && fit.outcome.holds && !below.holds,
        format!(
            "e^2t holds {}, e^3t first violation {:?}, solver series fitted C = {:.4e} holds {}",
            pass.holds, fail.first_violation, fit.constant, fit.outcome.holds
        ),
    )
}

fn regularity() -> Outcome {
    let src = ProblemSpec::demo_source().on_domain(1.0, 1.0);
    let audit = regularity_audit(
        &ProblemSpec::demo(),
        &src,
        &demo_levels(),
        &AuditOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let unbounded: Vec<&str> = audit
        .quantities
        .iter()
        .filter(|q| !q.bounded)
        .map(|q| q.name.as_str())
        .collect();
    let alpha = &audit
        .quantity("holder_alpha_u")
        .ok_or("missing holder_alpha_u")?
        .values;
    let alpha_min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(
        unbounded.is_empty() && alpha_min >= 0.20,
        format!(
            "{} quantities, unbounded {:?}, holder alpha of u {:?}",
            audit.quantities.len(),
            unbounded,
            alpha
        ),
    )
}

fn determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.cfg");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut summaries = Vec::new();
    for sub in ["simulate", "verify"] {
        let mut runs = Vec::new();
        for k in 0..2 {
            let out = tmp.path().join(format!("{sub}{k}"));
            let code = deadoil_cli::run([
                "deadoil",
                sub,
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "7",
            ]);
            if code != 0 {
                return Err(format!("{sub} exited with {code}"));
            }
            let text =
                std::fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?;
            let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            runs.push((m["input_hash"].clone(), m["outputs"].clone()));
        }
        if runs[0] != runs[1] {
            return Err(format!("{sub}: output hashes differ between runs"));
        }
        summaries.push(format!(
            "{sub} {} files",
            runs[0].1.as_array().map_or(0, Vec::len)
        ));
    }
    Ok(format!(
        "identical hashes across two runs: {}",
        summaries.join(", ")
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("hypothesis validation", hypotheses),
        ("decoupled heat benchmark", heat_benchmark),
        ("manufactured convergence", convergence),
        ("adjoint gradient", gradient),
        ("minimizing sequence bounds", minimizing_sequence),
        ("generating control recovery", generating_control),
        ("energy estimate", energy),
        ("multiplicative inequality", multiplicative),
        ("gronwall checker", gronwall),
        ("regularity audit", regularity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("criterion {} ({name}): PASS {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL {detail}", k + 1);
            }
        }
    }
    println!(
        "{} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
