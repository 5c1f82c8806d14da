//! INI-style run configuration.
//!
//! ```text
//! [section]
//! key = value   # comment
//! ```
//!
//! Sections and keys are fixed (see [`TEMPLATE`]); unknown ones, duplicate
//! keys and malformed numbers are rejected with the offending line number.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::laws::{FieldSpec, LawSpec};
use crate::model::Rect;
use crate::ops::FaceAverage;

/// Documented configuration with every key at its default. Keys in
/// `[domain] t_final` and `[cost]` are mandatory.
pub const TEMPLATE: &str = "\
# Domain [0, lx] x [0, ly], horizon t_final; nx, ny interior nodes per axis.
[domain]
lx = 1
ly = 1
t_final = 0.1
nx = 31
ny = 31
nt = 40

# Laws by name: identity(), constant(c), affine(a0, a1),
# affine_plus_cube(a0, a1, a3), sine(a0, a1, amp, freq).
[coefficients]
phi = sine(0, 1, 0.3, 1)
g = sine(0.5, 0, 0.25, 1)
d = sine(1.6, 0, 0.5, 2)
c1 = 1
c2 = 3
c3 = 1.5
delta_phi = 0.5
range_min = -2
range_max = 2
samples = 10001
derivative_tol = 1e-6

# Fields: zero(), constant(c), sine_product(amp, kx, ky, rate),
# poly_bump(amp, rate), gaussian(amp, x0, y0, width, tau).
[initial]
u0 = zero()
p0 = zero()

[targets]
u_target = poly_bump(0.05, 0)
p_target = poly_bump(0.5, 0)

[cost]
beta1 = 1e-3
beta2 = 1e-3
q0 = 1.5

[solver]
newton_tol = 1e-10
newton_max = 30
linear_tol = 1e-12
linear_max = 5000
averaging = arithmetic

[optimize]
max_outer = 50
grad_tol = 1e-9
step0 = 1
armijo_c = 1e-4
history_len = 10
f0 = zero()
starts = 1
fd_probes = 50

# mask: `none` or rect(x0, x1, y0, y1) terms joined by `+`;
# candidates: masks separated by `|`.
[wells]
source = gaussian(50, 0.5, 0.5, 0.3, 0.02)
mask = none
candidates = none

# A constant is stable when max/min over the refinement family <= drift.
[audit]
drift = 1.25
";

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct IniEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Raw parsed file: sections in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IniDocument {
    pub sections: BTreeMap<String, Vec<IniEntry>>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["lx", "ly", "t_final", "nx", "ny", "nt"]),
    (
        "coefficients",
        &[
            "phi",
            "g",
            "d",
            "c1",
            "c2",
            "c3",
            "delta_phi",
            "range_min",
            "range_max",
            "samples",
            "derivative_tol",
        ],
    ),
    ("initial", &["u0", "p0"]),
    ("targets", &["u_target", "p_target"]),
    ("cost", &["beta1", "beta2", "q0"]),
    (
        "solver",
        &[
            "newton_tol",
            "newton_max",
            "linear_tol",
            "linear_max",
            "averaging",
        ],
    ),
    (
        "optimize",
        &[
            "max_outer",
            "grad_tol",
            "step0",
            "armijo_c",
            "history_len",
            "f0",
            "starts",
            "fd_probes",
        ],
    ),
    ("wells", &["source", "mask", "candidates"]),
    ("audit", &["drift"]),
];

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(k) => &line[..k],
        None => line,
    }
}

pub fn parse_ini(text: &str) -> Result<IniDocument> {
    let mut doc = IniDocument::default();
    let mut current: Option<String> = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(Error::Config(format!(
                    "line {line_no}: malformed section header"
                )));
            };
            let name = name.trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(Error::Config(format!(
                    "line {line_no}: unknown section [{name}]"
                )));
            }
            if doc.sections.contains_key(name) {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate section [{name}]"
                )));
            }
            doc.sections.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {line_no}: expected `key = value`"
            )));
        };
        let Some(section) = current.as_ref() else {
            return Err(Error::Config(format!(
                "line {line_no}: key outside any section"
            )));
        };
        let (key, value) = (key.trim(), value.trim());
        let allowed = SECTIONS
            .iter()
            .find(|(s, _)| s == section)
            .map(|(_, keys)| *keys)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            return Err(Error::Config(format!(
                "line {line_no}: unknown key `{key}` in [{section}]"
            )));
        }
        let entries = doc.sections.get_mut(section).expect("section registered");
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key `{key}` (first set on line {})",
                prev.line
            )));
        }
        entries.push(IniEntry {
            key: key.to_string(),
            value: value.to_string(),
            line: line_no,
        });
    }
    Ok(doc)
}

impl IniDocument {
    fn entry(&self, section: &str, key: &str) -> Option<&IniEntry> {
        self.sections.get(section)?.iter().find(|e| e.key == key)
    }

    fn with<T>(
        &self,
        section: &str,
        key: &str,
        default: Option<T>,
        parse: impl Fn(&str) -> Result<T>,
    ) -> Result<T> {
        match self.entry(section, key) {
            Some(e) => parse(&e.value).map_err(|err| {
                let msg = match err {
                    Error::Config(m) | Error::Lookup(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: [{section}] {key}: {msg}", e.line))
            }),
            None => default.ok_or_else(|| Error::Config(format!("missing key [{section}] {key}"))),
        }
    }

    fn real(&self, section: &str, key: &str, default: Option<f64>) -> Result<f64> {
        self.with(section, key, default, |s| {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Config(format!("malformed number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("non-finite number `{s}`")))
            }
        })
    }

    fn count(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.with(section, key, Some(default), |s| {
            s.parse()
                .map_err(|_| Error::Config(format!("malformed count `{s}`")))
        })
    }
}

fn parse_mask(text: &str) -> Result<Option<Vec<Rect>>> {
    let text = text.trim();
    if text == "none" {
        return Ok(None);
    }
    let mut rects = Vec::new();
    for term in text.split('+') {
        let term = term.trim();
        let inner = term
            .strip_prefix("rect(")
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("expected rect(x0, x1, y0, y1), got `{term}`")))?;
        let v: Vec<f64> = inner
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("malformed number `{}`", s.trim())))
            })
            .collect::<Result<_>>()?;
        if v.len() != 4 || v[1] < v[0] || v[3] < v[2] {
            return Err(Error::Config(format!("bad rectangle `{term}`")));
        }
        rects.push(Rect {
            x0: v[0],
            x1: v[1],
            y0: v[2],
            y1: v[3],
        });
    }
    Ok(Some(rects))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainConfig {
    pub lx: f64,
    pub ly: f64,
    pub t_final: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientConfig {
    pub phi: LawSpec,
    pub g: LawSpec,
    pub d: LawSpec,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta_phi: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub samples: usize,
    pub derivative_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialConfig {
    pub u0: FieldSpec,
    pub p0: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TargetConfig {
    pub u_target: FieldSpec,
    pub p_target: FieldSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub q0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max: usize,
    pub linear_tol: f64,
    pub linear_max: usize,
    pub averaging: FaceAverage,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimizeConfig {
    pub max_outer: usize,
    pub grad_tol: f64,
    pub step0: f64,
    pub armijo_c: f64,
    pub history_len: usize,
    pub f0: FieldSpec,
    pub starts: usize,
    pub fd_probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WellsConfig {
    pub source: FieldSpec,
    pub mask: Option<Vec<Rect>>,
    pub candidates: Vec<Vec<Rect>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditConfig {
    pub drift: f64,
}

/// Typed configuration, every value parsed at full precision.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub coefficients: CoefficientConfig,
    pub initial: InitialConfig,
    pub targets: TargetConfig,
    pub cost: CostConfig,
    pub solver: SolverConfig,
    pub optimize: OptimizeConfig,
    pub wells: WellsConfig,
    pub audit: AuditConfig,
}

impl RunConfig {
    pub fn from_ini(doc: &IniDocument) -> Result<RunConfig> {
        let law =
            |s: &str, k: &str, d: &str| doc.with(s, k, Some(LawSpec::parse(d)?), LawSpec::parse);
        let field = |s: &str, k: &str, d: &str| {
            doc.with(s, k, Some(FieldSpec::parse(d)?), FieldSpec::parse)
        };
        Ok(RunConfig {
            domain: DomainConfig {
                lx: doc.real("domain", "lx", Some(1.0))?,
                ly: doc.real("domain", "ly", Some(1.0))?,
                t_final: doc.real("domain", "t_final", None)?,
                nx: doc.count("domain", "nx", 31)?,
                ny: doc.count("domain", "ny", 31)?,
                nt: doc.count("domain", "nt", 40)?,
            },
            coefficients: CoefficientConfig {
                phi: law("coefficients", "phi", "sine(0, 1, 0.3, 1)")?,
                g: law("coefficients", "g", "sine(0.5, 0, 0.25, 1)")?,
                d: law("coefficients", "d", "sine(1.6, 0, 0.5, 2)")?,
                c1: doc.real("coefficients", "c1", Some(1.0))?,
                c2: doc.real("coefficients", "c2", Some(3.0))?,
                c3: doc.real("coefficients", "c3", Some(1.5))?,
                delta_phi: doc.real("coefficients", "delta_phi", Some(0.5))?,
                range_min: doc.real("coefficients", "range_min", Some(-2.0))?,
                range_max: doc.real("coefficients", "range_max", Some(2.0))?,
                samples: doc.count("coefficients", "samples", 10_001)?,
                derivative_tol: doc.real("coefficients", "derivative_tol", Some(1e-6))?,
            },
            initial: InitialConfig {
                u0: field("initial", "u0", "zero()")?,
                p0: field("initial", "p0", "zero()")?,
            },
            targets: TargetConfig {
                u_target: field("targets", "u_target", "zero()")?,
                p_target: field("targets", "p_target", "zero()")?,
            },
            cost: CostConfig {
                beta1: doc.real("cost", "beta1", None)?,
                beta2: doc.real("cost", "beta2", None)?,
                q0: doc.real("cost", "q0", None)?,
            },
            solver: SolverConfig {
                newton_tol: doc.real("solver", "newton_tol", Some(1e-10))?,
                newton_max: doc.count("solver", "newton_max", 30)?,
                linear_tol: doc.real("solver", "linear_tol", Some(1e-12))?,
                linear_max: doc.count("solver", "linear_max", 5000)?,
                averaging: doc.with(
                    "solver",
                    "averaging",
                    Some(FaceAverage::Arithmetic),
                    FaceAverage::parse,
                )?,
            },
            optimize: OptimizeConfig {
                max_outer: doc.count("optimize", "max_outer", 50)?,
                grad_tol: doc.real("optimize", "grad_tol", Some(1e-9))?,
                step0: doc.real("optimize", "step0", Some(1.0))?,
                armijo_c: doc.real("optimize", "armijo_c", Some(1e-4))?,
                history_len: doc.count("optimize", "history_len", 10)?,
                f0: field("optimize", "f0", "zero()")?,
                starts: doc.count("optimize", "starts", 1)?,
                fd_probes: doc.count("optimize", "fd_probes", 50)?,
            },
            wells: WellsConfig {
                source: field("wells", "source", "gaussian(50, 0.5, 0.5, 0.3, 0.02)")?,
                mask: doc.with("wells", "mask", Some(None), parse_mask)?,
                candidates: doc.with("wells", "candidates", Some(Vec::new()), |s| {
                    if s.trim() == "none" {
                        return Ok(Vec::new());
                    }
                    s.split('|')
                        .map(|m| {
                            parse_mask(m)?.ok_or_else(|| {
                                Error::Config("candidate mask cannot be `none`".into())
                            })
                        })
                        .collect()
                })?,
            },
            audit: AuditConfig {
                drift: doc.real("audit", "drift", Some(1.25))?,
            },
        })
    }
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    RunConfig::from_ini(&parse_ini(text)?)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
    parse_config_str(&text)
}
