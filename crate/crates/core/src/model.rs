//! Problem data: constitutive laws, initial data, targets and penalization,
//! plus sampled validation of the structural hypotheses on the laws.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{Grid2D, Trajectory};
use crate::laws::{FieldSpec, LawSpec, ScalarLaw, SpaceTimeFn};

/// Bounds the laws are checked against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HypothesisBounds {
    /// lower bound for `d`
    pub c1: f64,
    /// upper bound for `phi`
    pub c2: f64,
    /// bound for `|d'|`, `|phi'|`, `|phi''|`
    pub c3: f64,
    /// lower bound for `phi'` (uniform parabolicity of the saturation equation)
    pub delta_phi: f64,
}

/// The laws `phi`, `g`, `d` and the derivatives the solver uses.
#[derive(Clone)]
pub struct CoefficientSet {
    pub phi: ScalarLaw,
    pub dphi: ScalarLaw,
    pub d2phi: ScalarLaw,
    pub g: ScalarLaw,
    pub dg: ScalarLaw,
    pub d: ScalarLaw,
    pub dd: ScalarLaw,
    pub bounds: HypothesisBounds,
    /// Registry names the laws were built from, when they were.
    pub source: Option<LawTriple>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawTriple {
    pub phi: LawSpec,
    pub g: LawSpec,
    pub d: LawSpec,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("bounds", &self.bounds)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn from_laws(
        phi: LawSpec,
        g: LawSpec,
        d: LawSpec,
        bounds: HypothesisBounds,
    ) -> CoefficientSet {
        CoefficientSet {
            phi: phi.law(),
            dphi: phi.derivative_law(),
            d2phi: phi.second_derivative_law(),
            g: g.law(),
            dg: g.derivative_law(),
            d: d.law(),
            dd: d.derivative_law(),
            bounds,
            source: Some(LawTriple { phi, g, d }),
        }
    }

    /// The nonlinear set shipped with the examples:
    /// `phi(r) = r + 0.3 sin r`, `g(r) = 0.5 + 0.25 sin r`,
    /// `d(r) = 1.6 + 0.5 sin 2r`.
    pub fn demo() -> CoefficientSet {
        CoefficientSet::from_laws(
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
                amp: 0.5,
                freq: 2.0,
            },
            HypothesisBounds {
                c1: 1.0,
                c2: 3.0,
                c3: 1.5,
                delta_phi: 0.5,
            },
        )
    }

    /// `phi = identity`, `g = 0`, `d = 1`: two decoupled heat equations.
    pub fn decoupled_heat() -> CoefficientSet {
        CoefficientSet::from_laws(
            LawSpec::Identity,
            LawSpec::Constant(0.0),
            LawSpec::Constant(1.0),
            HypothesisBounds {
                c1: 1.0,
                c2: 10.0,
                c3: 1.0,
                delta_phi: 1.0,
            },
        )
    }
}

/// One hypothesis clause with its worst sampled margin (negative = violated).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClauseResult {
    pub clause: String,
    pub margin: f64,
    pub witness: f64,
    pub holds: bool,
}

/// Agreement of a supplied derivative with centered differences of its base law.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub law: String,
    pub max_error: f64,
    pub at: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub range: (f64, f64),
    pub samples: usize,
    pub tol: f64,
    pub clauses: Vec<ClauseResult>,
    pub derivatives: Vec<DerivativeCheck>,
    pub passed: bool,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.clause == name)
    }

    pub fn first_failure(&self) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| !c.holds)
    }
}

fn sample(law: &ScalarLaw, name: &str, r: f64) -> Result<f64> {
    let v = law(r);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::LawEvaluation {
            law: name.to_string(),
            at: r,
        })
    }
}

/// Check the hypotheses on `n_samples` equispaced points of `range`
/// (endpoints included). Derivative consistency uses centered differences
/// with step `1e-5 max(1, |r|)` and passes when the worst error is `<= tol`.
pub fn validate_hypotheses(
    coeffs: &CoefficientSet,
    range: (f64, f64),
    n_samples: usize,
    tol: f64,
) -> Result<ValidationReport> {
    let (lo, hi) = range;
    if n_samples < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Parameter(format!("degenerate range [{lo}, {hi}]")));
    }
    let b = coeffs.bounds;

    // (clause, law value -> margin)
    type Margin = fn(f64, &HypothesisBounds) -> f64;
    let clause_defs: [(&str, &ScalarLaw, &str, Margin); 6] = [
        ("d >= c1", &coeffs.d, "d", |v, b| v - b.c1),
        ("phi <= c2", &coeffs.phi, "phi", |v, b| b.c2 - v),
        ("|d'| <= c3", &coeffs.dd, "dd", |v, b| b.c3 - v.abs()),
        ("|phi'| <= c3", &coeffs.dphi, "dphi", |v, b| b.c3 - v.abs()),
        ("|phi''| <= c3", &coeffs.d2phi, "d2phi", |v, b| {
            b.c3 - v.abs()
        }),
        ("phi' >= delta_phi", &coeffs.dphi, "dphi", |v, b| {
            v - b.delta_phi
        }),
    ];
    let derivative_defs: [(&str, &ScalarLaw, &str, &ScalarLaw, &str); 4] = [
        ("dphi", &coeffs.phi, "phi", &coeffs.dphi, "dphi"),
        ("d2phi", &coeffs.dphi, "dphi", &coeffs.d2phi, "d2phi"),
        ("dg", &coeffs.g, "g", &coeffs.dg, "dg"),
        ("dd", &coeffs.d, "d", &coeffs.dd, "dd"),
    ];

    let mut clauses: Vec<ClauseResult> = clause_defs
        .iter()
        .map(|(name, ..)| ClauseResult {
            clause: name.to_string(),
            margin: f64::INFINITY,
            witness: lo,
            holds: true,
        })
        .collect();
    let mut derivatives: Vec<DerivativeCheck> = derivative_defs
        .iter()
        .map(|(name, ..)| DerivativeCheck {
            law: name.to_string(),
            max_error: 0.0,
            at: lo,
            holds: true,
        })
        .collect();

    for k in 0..n_samples {
        let r = if k + 1 == n_samples {
            hi
        } else {
            lo + (hi - lo) * (k as f64 / (n_samples - 1) as f64)
        };
        for (c, (_, law, lname, margin)) in clauses.iter_mut().zip(&clause_defs) {
            let m = margin(sample(law, lname, r)?, &b);
            if m < c.margin {
                c.margin = m;
                c.witness = r;
            }
        }
        sample(&coeffs.g, "g", r)?;
        let h = 1e-5 * r.abs().max(1.0);
        for (d, (_, base, bname, deriv, dname)) in derivatives.iter_mut().zip(&derivative_defs) {
            let fd = (sample(base, bname, r + h)? - sample(base, bname, r - h)?) / (2.0 * h);
            let err = (sample(deriv, dname, r)? - fd).abs();
            if err > d.max_error {
                d.max_error = err;
                d.at = r;
            }
        }
    }
    for c in &mut clauses {
        c.holds = c.margin >= 0.0;
    }
    for d in &mut derivatives {
        d.holds = d.max_error <= tol;
    }
    let passed = clauses.iter().all(|c| c.holds) && derivatives.iter().all(|d| d.holds);
    Ok(ValidationReport {
        range,
        samples: n_samples,
        tol,
        clauses,
        derivatives,
        passed,
        notes: vec![
            "c1 is read as a lower bound for d only and c2 as an upper bound for phi only; \
             the hypothesis text does not say whether c1 also bounds phi from below"
                .into(),
            "phi' >= delta_phi is required by the time stepping, not by the hypotheses".into(),
        ],
    })
}

/// Axis-aligned rectangle in physical coordinates (closed).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-12;
        x >= self.x0 - eps && x <= self.x1 + eps && y >= self.y0 - eps && y <= self.y1 + eps
    }
}

/// Where the control may be nonzero.
#[derive(Clone, Debug, PartialEq)]
pub enum WellMask {
    /// Interior nodes inside any of the rectangles.
    Rects(Vec<Rect>),
    /// Explicit node flags for one grid.
    Nodes { grid: Grid2D, active: Vec<bool> },
}

impl WellMask {
    pub fn node_mask(&self, grid: &Grid2D) -> Result<Vec<bool>> {
        match self {
            WellMask::Rects(rects) => {
                let mut active = vec![false; grid.len()];
                for (i, j) in grid.interior() {
                    let (x, y) = grid.coords(i, j);
                    active[grid.idx(i, j)] = rects.iter().any(|r| r.contains(x, y));
                }
                Ok(active)
            }
            WellMask::Nodes { grid: g, active } => {
                g.check_same(grid)?;
                let mut active = active.clone();
                for j in 0..g.ny + 2 {
                    for i in 0..g.nx + 2 {
                        if g.is_boundary(i, j) {
                            active[g.idx(i, j)] = false;
                        }
                    }
                }
                Ok(active)
            }
        }
    }
}

/// A tracking target: a closed-form field or stored samples on one mesh.
#[derive(Clone)]
pub enum Target {
    Field(SpaceTimeFn),
    Samples(Arc<Trajectory>),
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Field(_) => f.write_str("Target::Field(..)"),
            Target::Samples(t) => write!(f, "Target::Samples({} steps)", t.nt()),
        }
    }
}

impl Target {
    pub fn zero() -> Target {
        Target::Field(Arc::new(|_, _, _| 0.0))
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub lx: f64,
    pub ly: f64,
    pub t_final: f64,
    pub coefficients: CoefficientSet,
    /// Initial saturation, evaluated as `u0(x, y, 0)`.
    pub u0: SpaceTimeFn,
    /// Initial pressure, evaluated as `p0(x, y, 0)`.
    pub p0: SpaceTimeFn,
    pub u_target: Target,
    pub p_target: Target,
    pub beta1: f64,
    pub beta2: f64,
    pub q0: f64,
    pub well_mask: Option<WellMask>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .field("t_final", &self.t_final)
            .field("coefficients", &self.coefficients)
            .field("beta1", &self.beta1)
            .field("beta2", &self.beta2)
            .field("q0", &self.q0)
            .field("well_mask", &self.well_mask)
            .finish_non_exhaustive()
    }
}

/// Probe-grid resolution for the boundary check on initial data.
const BOUNDARY_PROBE: usize = 31;
const BOUNDARY_TOL: f64 = 1e-12;

impl ProblemSpec {
    /// Unit square, horizon `t_final`, zero data and zero targets.
    pub fn unit_square(coefficients: CoefficientSet, t_final: f64) -> ProblemSpec {
        ProblemSpec {
            lx: 1.0,
            ly: 1.0,
            t_final,
            coefficients,
            u0: Arc::new(|_, _, _| 0.0),
            p0: Arc::new(|_, _, _| 0.0),
            u_target: Target::zero(),
            p_target: Target::zero(),
            beta1: 1.0,
            beta2: 1.0,
            q0: 1.5,
            well_mask: None,
        }
    }

    /// The nonlinear demonstration problem: demo laws, zero initial data,
    /// a smoothly switched-on Gaussian injection at the centre.
    pub fn demo() -> ProblemSpec {
        let mut p = ProblemSpec::unit_square(CoefficientSet::demo(), 0.1);
        p.u_target = Target::Field(
            FieldSpec::PolyBump {
                amp: 0.05,
                rate: 0.0,
            }
            .on_domain(1.0, 1.0),
        );
        p.p_target = Target::Field(
            FieldSpec::PolyBump {
                amp: 0.5,
                rate: 0.0,
            }
            .on_domain(1.0, 1.0),
        );
        p.beta1 = 1e-3;
        p.beta2 = 1e-3;
        p
    }

    /// Source used with [`ProblemSpec::demo`].
    pub fn demo_source() -> FieldSpec {
        FieldSpec::Gaussian {
            amp: 50.0,
            x0: 0.5,
            y0: 0.5,
            width: 0.3,
            tau: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 1.0 && self.q0 < 2.0) {
            return Err(Error::Config(format!(
                "q0 must lie in (1,2), got {}",
                self.q0
            )));
        }
        if !(self.beta1 > 0.0) {
            return Err(Error::Config(format!(
                "beta1 must be positive, got {}",
                self.beta1
            )));
        }
        if !(self.beta2 > 0.0) {
            return Err(Error::Config(format!(
                "beta2 must be positive, got {}",
                self.beta2
            )));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return Err(Error::Config(format!(
                "domain sides must be positive, got {} x {}",
                self.lx, self.ly
            )));
        }
        if !(self.t_final > 0.0) {
            return Err(Error::Config(format!(
                "t_final must be positive, got {}",
                self.t_final
            )));
        }
        let probe = Grid2D::new(BOUNDARY_PROBE, BOUNDARY_PROBE, self.lx, self.ly)?;
        for (name, field) in [("u0", &self.u0), ("p0", &self.p0)] {
            for j in 0..probe.ny + 2 {
                for i in 0..probe.nx + 2 {
                    if !probe.is_boundary(i, j) {
                        continue;
                    }
                    let (x, y) = probe.coords(i, j);
                    let v = field(x, y, 0.0);
                    if !(v.abs() <= BOUNDARY_TOL) {
                        return Err(Error::Config(format!(
                            "{name} must vanish on the boundary, got {v} at ({x}, {y})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mask_nodes(&self, grid: &Grid2D) -> Result<Option<Vec<bool>>> {
        self.well_mask
            .as_ref()
            .map(|m| m.node_mask(grid))
            .transpose()
    }
}

/// Assemble and validate a [`ProblemSpec`] from a parsed configuration.
pub fn build_problem(config: &RunConfig) -> Result<ProblemSpec> {
    let d = &config.domain;
    let c = &config.coefficients;
    let coefficients = CoefficientSet::from_laws(
        c.phi.clone(),
        c.g.clone(),
        c.d.clone(),
        HypothesisBounds {
            c1: c.c1,
            c2: c.c2,
            c3: c.c3,
            delta_phi: c.delta_phi,
        },
    );
    let problem = ProblemSpec {
        lx: d.lx,
        ly: d.ly,
        t_final: d.t_final,
        coefficients,
        u0: config.initial.u0.on_domain(d.lx, d.ly),
        p0: config.initial.p0.on_domain(d.lx, d.ly),
        u_target: Target::Field(config.targets.u_target.on_domain(d.lx, d.ly)),
        p_target: Target::Field(config.targets.p_target.on_domain(d.lx, d.ly)),
        beta1: config.cost.beta1,
        beta2: config.cost.beta2,
        q0: config.cost.q0,
        well_mask: config
            .wells
            .mask
            .as_ref()
            .map(|rects| WellMask::Rects(rects.clone())),
    };
    problem.validate()?;
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn bounds(c1: f64, c3: f64) -> HypothesisBounds {
        HypothesisBounds {
            c1,
            c2: 100.0,
            c3,
            delta_phi: 0.5,
        }
    }

    #[test]
    fn sine_diffusivity_passes() {
        let set = CoefficientSet::from_laws(
            LawSpec::Identity,
            LawSpec::Constant(0.0),
            LawSpec::Sine {
                a0: 2.0,
                a1: 0.0,
                amp: 1.0,
                freq: 1.0,
            },
            bounds(1.0, 1.0),
        );
        let report = validate_hypotheses(&set, (-10.0, 10.0), 10_001, 1e-6).unwrap();
        assert!(report.passed, "{report:?}");
        let m = report.clause("d >= c1").unwrap().margin;
        assert!((0.0..1e-6).contains(&m));
    }

    #[test]
    fn linear_diffusivity_fails_at_left_end() {
        let set = CoefficientSet::from_laws(
            LawSpec::Identity,
            LawSpec::Constant(0.0),
            LawSpec::Identity,
            bounds(1.0, 1.0),
        );
        let report = validate_hypotheses(&set, (-1.0, 1.0), 101, 1e-6).unwrap();
        assert!(!report.passed);
        let c = report.first_failure().unwrap();
        assert_eq!(c.clause, "d >= c1");
        assert_eq!(c.witness, -1.0);
        assert_eq!(c.margin, -2.0);
    }

    #[test]
    fn inconsistent_derivative_is_caught() {
        let phi = LawSpec::Sine {
            a0: 0.0,
            a1: 1.0,
            amp: 0.3,
            freq: 1.0,
        };
        let mut set = CoefficientSet::demo();
        let honest = phi.clone();
        set.dphi = Arc::new(move |r| 2.0 * honest.derivative(r));
        set.bounds.c3 = 10.0;
        let (lo, hi, n) = (-2.0, 2.0, 2001);
        let report = validate_hypotheses(&set, (lo, hi), n, 1e-6).unwrap();
        assert!(!report.passed);
        let check = report.derivatives.iter().find(|d| d.law == "dphi").unwrap();
        assert!(!check.holds);
        // Brute-force oracle: the error is |2φ' - φ'| = |φ'|, maximal where
        // |1 + 0.3 cos r| peaks on the sample set.
        let (mut best, mut at) = (0.0f64, lo);
        for k in 0..n {
            let r = if k + 1 == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            };
            let v = (1.0 + 0.3 * r.cos()).abs();
            if v > best {
                best = v;
                at = r;
            }
        }
        assert!(
            (check.max_error - best).abs() < 1e-8,
            "{} vs {best}",
            check.max_error
        );
        assert!((check.at - at).abs() < 1e-12);
    }

    #[test]
    fn polynomial_margins_are_exact() {
        // d = 2; phi = r + r³/3 on [-1, 1]: max 4/3 at 1,
        // phi' = 1 + r² in [1, 2], phi'' = 2r with max |.| = 2.
        let set = CoefficientSet::from_laws(
            LawSpec::AffinePlusCube {
                a0: 0.0,
                a1: 1.0,
                a3: 1.0 / 3.0,
            },
            LawSpec::Constant(0.0),
            LawSpec::Affine { a0: 2.0, a1: 0.0 },
            HypothesisBounds {
                c1: 1.5,
                c2: 2.0,
                c3: 3.0,
                delta_phi: 0.5,
            },
        );
        let report = validate_hypotheses(&set, (-1.0, 1.0), 10_001, 1e-6).unwrap();
        let margin = |name| report.clause(name).unwrap().margin;
        assert!((margin("d >= c1") - 0.5).abs() < 1e-12);
        assert!((margin("phi <= c2") - (2.0 - 4.0 / 3.0)).abs() < 1e-12);
        assert!((margin("|phi'| <= c3") - 1.0).abs() < 1e-12);
        assert!((margin("|phi''| <= c3") - 1.0).abs() < 1e-12);
        assert!((margin("phi' >= delta_phi") - 0.5).abs() < 1e-12);
        assert!(report.passed);
    }

    #[test]
    fn non_finite_law_is_reported() {
        let mut set = CoefficientSet::demo();
        set.g = Arc::new(|r: f64| 1.0 / r);
        let err = validate_hypotheses(&set, (-1.0, 1.0), 3, 1e-6).unwrap_err();
        assert!(matches!(err, Error::LawEvaluation { ref law, at } if law == "g" && at == 0.0));
    }

    #[test]
    fn validation_is_monotone_in_tolerance() {
        let set = CoefficientSet::demo();
        let tight = validate_hypotheses(&set, (-2.0, 2.0), 1001, 1e-14).unwrap();
        let loose = validate_hypotheses(&set, (-2.0, 2.0), 1001, 1e-3).unwrap();
        assert!(!tight.passed || loose.passed);
        assert!(loose.passed);
        assert!(validate_hypotheses(&set, (1.0, 1.0), 10, 1e-3).is_err());
        assert!(validate_hypotheses(&set, (0.0, 1.0), 1, 1e-3).is_err());
    }

    #[test]
    fn build_problem_checks_parameters() {
        let base = "[domain]\nt_final = 1\n[cost]\nbeta1 = 1\nbeta2 = 1\nq0 = 1.5\n";
        let cfg = parse_config_str(base).unwrap();
        build_problem(&cfg).unwrap();

        let cfg = parse_config_str(&base.replace("q0 = 1.5", "q0 = 2.5")).unwrap();
        let err = build_problem(&cfg).unwrap_err();
        assert!(err.to_string().contains("q0 must lie in (1,2)"), "{err}");

        let cfg = parse_config_str(&base.replace("beta2 = 1", "beta2 = 0")).unwrap();
        assert!(build_problem(&cfg)
            .unwrap_err()
            .to_string()
            .contains("beta2"));

        let cfg = parse_config_str(&format!("{base}[initial]\nu0 = sine_product(1)\n")).unwrap();
        build_problem(&cfg).unwrap();

        let cfg = parse_config_str(&format!("{base}[initial]\np0 = constant(1)\n")).unwrap();
        assert!(build_problem(&cfg).unwrap_err().to_string().contains("p0"));
    }

    #[test]
    fn shipped_sets_pass_validation() {
        let r = validate_hypotheses(&CoefficientSet::demo(), (-2.0, 2.0), 10_001, 1e-6).unwrap();
        assert!(r.passed, "{r:?}");
        ProblemSpec::demo().validate().unwrap();
    }

    #[test]
    fn rect_mask_selects_interior_nodes() {
        let g = Grid2D::new(9, 9, 1.0, 1.0).unwrap();
        let mask = WellMask::Rects(vec![Rect {
            x0: 0.0,
            x1: 0.2,
            y0: 0.0,
            y1: 1.0,
        }]);
        let active = mask.node_mask(&g).unwrap();
        // x = 0.1, 0.2 columns, 9 interior rows each.
        assert_eq!(active.iter().filter(|&&a| a).count(), 18);
        assert!(!active[g.idx(0, 5)]);
    }
}
