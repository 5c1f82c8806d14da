use std::f64::consts::PI;
use std::sync::Arc;

use deadoil::cost::Control;
use deadoil::forward::{mesh, solve_forward, SolverOptions};
use deadoil::laws::LawSpec;
use deadoil::model::validate_hypotheses;
use deadoil::norms::spacetime_lp;
use deadoil::{CoefficientSet, ProblemSpec, Trajectory};

fn relative_spacetime_error(got: &Trajectory, exact: &Trajectory) -> f64 {
    let diff = Trajectory::new(
        got.dt(),
        got.fields()
            .iter()
            .zip(exact.fields())
            .map(|(a, b)| a.sub(b).unwrap())
            .collect(),
    )
    .unwrap();
    spacetime_lp(&diff, 2.0).unwrap() / spacetime_lp(exact, 2.0).unwrap()
}

#[test]
fn decoupled_heat_decays_like_the_separable_solution() {
    let mut problem = ProblemSpec::unit_square(CoefficientSet::decoupled_heat(), 0.01);
    let sine = |x: f64, y: f64, _t: f64| (PI * x).sin() * (PI * y).sin();
    problem.u0 = Arc::new(sine);
    problem.p0 = Arc::new(sine);
    let (cells, nt) = (64, 200);
    let (g, dt) = mesh(&problem, cells, nt).unwrap();
    let f = Control::zeros(g, dt, nt, None).unwrap();
    let run = solve_forward(&problem, &f, &SolverOptions::new(nt)).unwrap();
    let exact = Trajectory::from_fn(g, dt, nt, |x, y, t| {
        (-2.0 * PI * PI * t).exp() * sine(x, y, t)
    })
    .unwrap();
    let eu = relative_spacetime_error(&run.u, &exact);
    let ep = relative_spacetime_error(&run.p, &exact);
    assert!(eu <= 0.02 && ep <= 0.02, "{eu} {ep}");
}

#[test]
fn dipping_diffusivity_is_caught_at_its_minimum() {
    let demo = CoefficientSet::demo();
    let report = validate_hypotheses(&demo, (-2.0, 2.0), 10_001, 1e-6).unwrap();
    assert!(report.passed);

    // 1.6 + 0.7 sin 2r bottoms out at 0.9 < c1 where 2r = -π/2
    let bad = CoefficientSet::from_laws(
        LawSpec::Sine {
            a0: 0.0,
            a1: 1.0,
            amp: 0.3,
            freq: 1.0,
        },
        LawSpec::Sine {
            a0: 0.5,
            a1: 0.0,
            amp: 0.25,
            freq: 1.0,
        },
        LawSpec::Sine {
            a0: 1.6,
            a1: 0.0,
            amp: 0.7,
            freq: 2.0,
        },
        demo.bounds,
    );
    let report = validate_hypotheses(&bad, (-2.0, 2.0), 10_001, 1e-6).unwrap();
    assert!(!report.passed);
    let c = report.first_failure().unwrap();
    assert_eq!(c.clause, "d >= c1");
    assert!(
        (c.witness + PI / 4.0).abs() <= 4.0 / 10_000.0,
        "{}",
        c.witness
    );
    assert!((c.margin + 0.1).abs() < 1e-6);
}
