use std::sync::Arc;

use deadoil::cost::{dt_control, Control};
use deadoil::forward::{mesh, solve_forward, SolverOptions};
use deadoil::model::{ProblemSpec, Target};
use deadoil::optimize::{minimize, random_control, OptOptions};

/// `Σ w |f|^pow` over every slot.
fn power_sum(f: &Control, pow: f64) -> f64 {
    let w = f.dt() * f.grid().cell_area();
    f.fields()
        .iter()
        .flat_map(|x| x.values())
        .map(|v| v.abs().powf(pow))
        .sum::<f64>()
        * w
}

fn inverse_crime(cells: usize, nt: usize, beta: f64) -> (ProblemSpec, Control, SolverOptions) {
    let mut problem = ProblemSpec::demo();
    problem.beta1 = beta;
    problem.beta2 = beta;
    let (g, dt) = mesh(&problem, cells, nt).unwrap();
    let dagger = Control::from_fn(g, dt, nt, None, |x, y, t| {
        40.0 * (std::f64::consts::PI * x).sin()
            * (std::f64::consts::PI * y).sin()
            * (1.0 + 10.0 * t)
    })
    .unwrap();
    let opts = SolverOptions::tight(nt);
    let run = solve_forward(&problem, &dagger, &opts).unwrap();
    problem.u_target = Target::Samples(Arc::new(run.u));
    problem.p_target = Target::Samples(Arc::new(run.p));
    (problem, dagger, opts)
}

const BETA: f64 = 1e-7;

#[test]
fn inverse_crime_reaches_the_generating_cost() {
    let (problem, dagger, solver) = inverse_crime(8, 8, BETA);
    let run = solve_forward(&problem, &dagger, &solver).unwrap();
    let j_dagger = deadoil::cost::evaluate_cost(&run.u, &run.p, &dagger, &problem)
        .unwrap()
        .total;
    let f0 = random_control(&dagger, 20.0, 5).unwrap();
    let opts = OptOptions {
        max_outer: 200,
        grad_tol: 1e-12,
        ..OptOptions::default()
    };
    let r = minimize(&problem, &f0, &opts, &solver).unwrap();
    let last = r.history.last().unwrap();
    eprintln!(
        "J(f†) = {j_dagger:e}, J_final = {:e}, iters {}, |g| {:e}",
        last.cost.total,
        r.history.len() - 1,
        last.grad_norm
    );
    assert!(last.cost.total <= j_dagger + 1e-8);
}

#[test]
fn minimizing_sequence_stays_bounded() {
    let (problem, dagger, solver) = inverse_crime(8, 8, 1e-3);
    let f0 = random_control(&dagger, 20.0, 9).unwrap();
    let opts = OptOptions {
        max_outer: 30,
        keep_iterates: true,
        ..OptOptions::default()
    };
    let r = minimize(&problem, &f0, &opts, &solver).unwrap();
    let j0 = r.history[0].cost.total;
    let pow = 2.0 * problem.q0;
    for (h, f) in r.history.iter().zip(&r.iterates) {
        assert!(h.satisfies_armijo(opts.armijo_c));
        assert!(power_sum(f, pow) <= 2.0 * j0 / problem.beta1);
        assert!(power_sum(&dt_control(f).unwrap(), 2.0) <= 2.0 * j0 / problem.beta2);
    }
    for pair in r.history.windows(2) {
        assert!(pair[1].cost.total <= pair[0].cost.total);
    }
}

#[test]
fn steepest_descent_also_decreases() {
    let (problem, dagger, solver) = inverse_crime(6, 5, 1e-3);
    let f0 = random_control(&dagger, 5.0, 1).unwrap();
    let opts = OptOptions {
        max_outer: 10,
        history_len: 0,
        step0: 5.0,
        ..OptOptions::default()
    };
    let r = minimize(&problem, &f0, &opts, &solver).unwrap();
    assert!(r.history.last().unwrap().cost.total < r.history[0].cost.total);
}
