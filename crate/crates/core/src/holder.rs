//! Empirical parabolic Hölder exponent of a trajectory.
//!
//! For sampled point pairs `(x, t)`, `(y, s)` the quotient
//! `|w(x,t) - w(y,s)| / (|x - y| + |t - s|^{1/2})^α` is evaluated on the
//! exponent grid `α = 0.05, 0.10, ..., 1.00`. The estimate is the largest
//! grid exponent whose maximum quotient stays within ten times the median.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Trajectory;

pub const ALPHA_STEP: f64 = 0.05;
pub const ALPHA_CAP: f64 = 1.0;
pub const SPREAD_FACTOR: f64 = 10.0;
pub const MIN_PAIRS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HolderEstimate {
    pub alpha_hat: f64,
    pub constant_hat: f64,
}

pub fn alpha_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * ALPHA_STEP).collect()
}

/// One space-time sample point: spatial node and time index.
#[derive(Clone, Copy, Debug)]
struct Sample {
    i: usize,
    j: usize,
    n: usize,
}

/// `(|Δw|, parabolic distance)` for a pair.
fn increment(traj: &Trajectory, a: Sample, b: Sample) -> (f64, f64) {
    let g = traj.grid();
    let wa = traj.field(a.n).at(a.i, a.j);
    let wb = traj.field(b.n).at(b.i, b.j);
    let dx = (a.i as f64 - b.i as f64) * g.hx;
    let dy = (a.j as f64 - b.j as f64) * g.hy;
    let dt = (a.n as f64 - b.n as f64).abs() * traj.dt();
    ((wa - wb).abs(), (dx * dx + dy * dy).sqrt() + dt.sqrt())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Apply the max-versus-median rule to a list of `(|Δw|, distance)` pairs.
pub fn estimate_from_increments(increments: &[(f64, f64)]) -> HolderEstimate {
    if increments.iter().all(|&(dw, _)| dw == 0.0) {
        return HolderEstimate {
            alpha_hat: ALPHA_CAP,
            constant_hat: 0.0,
        };
    }
    let mut best: Option<HolderEstimate> = None;
    let mut quotients = Vec::with_capacity(increments.len());
    for alpha in alpha_grid() {
        quotients.clear();
        quotients.extend(increments.iter().map(|&(dw, d)| dw / d.powf(alpha)));
        let max = quotients.iter().copied().fold(0.0, f64::max);
        let med = median(&mut quotients);
        if max <= SPREAD_FACTOR * med {
            best = Some(HolderEstimate {
                alpha_hat: alpha,
                constant_hat: max,
            });
        }
    }
    best.unwrap_or_else(|| HolderEstimate {
        alpha_hat: 0.0,
        constant_hat: increments.iter().map(|p| p.0).fold(0.0, f64::max),
    })
}

/// Sample `n_pairs` distinct point pairs uniformly over nodes and time
/// levels, deterministically from `seed`.
pub fn holder_estimate(traj: &Trajectory, n_pairs: usize, seed: u64) -> Result<HolderEstimate> {
    if n_pairs < MIN_PAIRS {
        return Err(Error::Parameter(format!(
            "Hölder estimate needs at least {MIN_PAIRS} pairs, got {n_pairs}"
        )));
    }
    let g = traj.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| Sample {
        i: rng.gen_range(0..g.nx + 2),
        j: rng.gen_range(0..g.ny + 2),
        n: rng.gen_range(0..=traj.nt()),
    };
    let mut increments = Vec::with_capacity(n_pairs);
    while increments.len() < n_pairs {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if a.i == b.i && a.j == b.j && a.n == b.n {
            continue;
        }
        increments.push(increment(traj, a, b));
    }
    Ok(estimate_from_increments(&increments))
}

/// Same rule over every distinct pair of the trajectory. Quadratic cost; for
/// coarse data only.
pub fn holder_estimate_exhaustive(traj: &Trajectory) -> HolderEstimate {
    let g = traj.grid();
    let mut samples = Vec::new();
    for n in 0..=traj.nt() {
        for j in 0..g.ny + 2 {
            for i in 0..g.nx + 2 {
                samples.push(Sample { i, j, n });
            }
        }
    }
    let mut increments = Vec::with_capacity(samples.len() * (samples.len() - 1) / 2);
    for (k, &a) in samples.iter().enumerate() {
        for &b in &samples[k + 1..] {
            increments.push(increment(traj, a, b));
        }
    }
    estimate_from_increments(&increments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;

    #[test]
    fn constant_trajectory_is_capped() {
        let g = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
        let traj = Trajectory::from_fn(g, 0.1, 4, |_, _, _| 2.5).unwrap();
        let est = holder_estimate(&traj, 500, 1).unwrap();
        assert_eq!(est.alpha_hat, ALPHA_CAP);
        assert_eq!(est.constant_hat, 0.0);
        assert!(holder_estimate(&traj, 50, 1).is_err());
    }

    #[test]
    fn linear_profile_is_lipschitz() {
        let g = Grid2D::new(15, 15, 1.0, 1.0).unwrap();
        let traj = Trajectory::from_fn(g, 0.05, 10, |x, _, _| x).unwrap();
        let est = holder_estimate(&traj, 5000, 7).unwrap();
        assert_eq!(est.alpha_hat, 1.0);
        assert!(est.constant_hat <= 1.0 + 1e-12);
    }

    #[test]
    fn estimate_is_seed_deterministic() {
        let g = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
        let traj = Trajectory::from_fn(g, 0.05, 6, |x, y, t| (x * y + t).sin()).unwrap();
        let a = holder_estimate(&traj, 2000, 42).unwrap();
        let b = holder_estimate(&traj, 2000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn square_root_profile_agrees_with_exhaustive_pairs() {
        // Coarse grid so every pair can be enumerated.
        let g = Grid2D::new(14, 2, 1.0, 0.2).unwrap();
        let traj = Trajectory::from_fn(g, 0.1, 1, |x, _, _| x.sqrt()).unwrap();
        let exhaustive = holder_estimate_exhaustive(&traj);
        let sampled = holder_estimate(&traj, 20_000, 3).unwrap();
        assert!(
            (sampled.alpha_hat - exhaustive.alpha_hat).abs() <= ALPHA_STEP + 1e-12,
            "sampled {sampled:?} exhaustive {exhaustive:?}"
        );
        // A Lipschitz profile on the same grid must score at least as high.
        let lipschitz =
            holder_estimate_exhaustive(&Trajectory::from_fn(g, 0.1, 1, |x, _, _| x).unwrap());
        assert!(exhaustive.alpha_hat <= lipschitz.alpha_hat);
        assert!(exhaustive.alpha_hat >= 0.5);
    }
}
