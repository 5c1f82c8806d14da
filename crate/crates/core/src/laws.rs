//! Named registry of scalar constitutive laws and closed-form field generators.
//!
//! Configurations refer to laws and fields as `name(arg, arg, ...)`; the
//! registry turns those into evaluable closures with analytic derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// A scalar law `r -> value`.
pub type ScalarLaw = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A space-time field `(x, y, t) -> value`.
pub type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Split `name(a, b, c)` into the name and its numeric arguments.
fn parse_call(text: &str) -> Result<(String, Vec<f64>)> {
    let text = text.trim();
    let (name, rest) = match text.find('(') {
        Some(open) => {
            if !text.ends_with(')') {
                return Err(Error::Config(format!("missing ')' in `{text}`")));
            }
            (&text[..open], &text[open + 1..text.len() - 1])
        }
        None => (text, ""),
    };
    let name = name.trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::Config(format!("malformed name in `{text}`")));
    }
    let mut args = Vec::new();
    for piece in rest.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        let value: f64 = piece
            .parse()
            .map_err(|_| Error::Config(format!("malformed number `{piece}` in `{text}`")))?;
        args.push(value);
    }
    Ok((name.to_string(), args))
}

fn expect_args(name: &str, args: &[f64], min: usize, max: usize) -> Result<()> {
    if args.len() < min || args.len() > max {
        let want = if min == max {
            format!("{min}")
        } else {
            format!("{min} to {max}")
        };
        return Err(Error::Config(format!(
            "`{name}` takes {want} arguments, got {}",
            args.len()
        )));
    }
    Ok(())
}

fn write_call(f: &mut fmt::Formatter<'_>, name: &str, args: &[f64]) -> fmt::Result {
    write!(f, "{name}(")?;
    for (k, a) in args.iter().enumerate() {
        if k > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{a}")?;
    }
    write!(f, ")")
}

/// Built-in scalar laws usable for φ, g and d.
#[derive(Clone, Debug, PartialEq)]
pub enum LawSpec {
    Identity,
    Constant(f64),
    /// `a0 + a1 r`
    Affine {
        a0: f64,
        a1: f64,
    },
    /// `a0 + a1 r + a3 r^3`
    AffinePlusCube {
        a0: f64,
        a1: f64,
        a3: f64,
    },
    /// `a0 + a1 r + amp sin(freq r)`
    Sine {
        a0: f64,
        a1: f64,
        amp: f64,
        freq: f64,
    },
}

impl LawSpec {
    pub fn parse(text: &str) -> Result<LawSpec> {
        let (name, a) = parse_call(text)?;
        let spec = match name.as_str() {
            "identity" => {
                expect_args(&name, &a, 0, 0)?;
                LawSpec::Identity
            }
            "constant" => {
                expect_args(&name, &a, 1, 1)?;
                LawSpec::Constant(a[0])
            }
            "affine" => {
                expect_args(&name, &a, 2, 2)?;
                LawSpec::Affine { a0: a[0], a1: a[1] }
            }
            "affine_plus_cube" => {
                expect_args(&name, &a, 3, 3)?;
                LawSpec::AffinePlusCube {
                    a0: a[0],
                    a1: a[1],
                    a3: a[2],
                }
            }
            "sine" => {
                expect_args(&name, &a, 4, 4)?;
                LawSpec::Sine {
                    a0: a[0],
                    a1: a[1],
                    amp: a[2],
                    freq: a[3],
                }
            }
            other => return Err(Error::Lookup(format!("unknown law `{other}`"))),
        };
        Ok(spec)
    }

    pub fn value(&self, r: f64) -> f64 {
        match *self {
            LawSpec::Identity => r,
            LawSpec::Constant(c) => c,
            LawSpec::Affine { a0, a1 } => a0 + a1 * r,
            LawSpec::AffinePlusCube { a0, a1, a3 } => a0 + a1 * r + a3 * r * r * r,
            LawSpec::Sine { a0, a1, amp, freq } => a0 + a1 * r + amp * (freq * r).sin(),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            LawSpec::Identity => 1.0,
            LawSpec::Constant(_) => 0.0,
            LawSpec::Affine { a1, .. } => a1,
            LawSpec::AffinePlusCube { a1, a3, .. } => a1 + 3.0 * a3 * r * r,
            LawSpec::Sine { a1, amp, freq, .. } => a1 + amp * freq * (freq * r).cos(),
        }
    }

    pub fn second_derivative(&self, r: f64) -> f64 {
        match *self {
            LawSpec::Identity | LawSpec::Constant(_) | LawSpec::Affine { .. } => 0.0,
            LawSpec::AffinePlusCube { a3, .. } => 6.0 * a3 * r,
            LawSpec::Sine { amp, freq, .. } => -amp * freq * freq * (freq * r).sin(),
        }
    }

    pub fn law(&self) -> ScalarLaw {
        let s = self.clone();
        Arc::new(move |r| s.value(r))
    }

    pub fn derivative_law(&self) -> ScalarLaw {
        let s = self.clone();
        Arc::new(move |r| s.derivative(r))
    }

    pub fn second_derivative_law(&self) -> ScalarLaw {
        let s = self.clone();
        Arc::new(move |r| s.second_derivative(r))
    }
}

impl fmt::Display for LawSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LawSpec::Identity => write_call(f, "identity", &[]),
            LawSpec::Constant(c) => write_call(f, "constant", &[c]),
            LawSpec::Affine { a0, a1 } => write_call(f, "affine", &[a0, a1]),
            LawSpec::AffinePlusCube { a0, a1, a3 } => {
                write_call(f, "affine_plus_cube", &[a0, a1, a3])
            }
            LawSpec::Sine { a0, a1, amp, freq } => write_call(f, "sine", &[a0, a1, amp, freq]),
        }
    }
}

impl Serialize for LawSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Built-in closed-form space-time fields. Coordinates are physical, the
/// domain is `[0, lx] x [0, ly]`.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Zero,
    Constant(f64),
    /// `amp e^{-rate t} sin(kx π x / lx) sin(ky π y / ly)`
    SineProduct {
        amp: f64,
        kx: f64,
        ky: f64,
        rate: f64,
    },
    /// `amp e^{-rate t} 16 x (lx - x) y (ly - y) / (lx² ly²)`, peak value `amp`
    PolyBump {
        amp: f64,
        rate: f64,
    },
    /// `amp ramp(t) exp(-|x - x0|² / (2 width²))`, with
    /// `ramp(t) = 1 - e^{-t/tau}` for `tau > 0` and `ramp = 1` otherwise.
    Gaussian {
        amp: f64,
        x0: f64,
        y0: f64,
        width: f64,
        tau: f64,
    },
}

impl FieldSpec {
    pub fn parse(text: &str) -> Result<FieldSpec> {
        let (name, a) = parse_call(text)?;
        let spec = match name.as_str() {
            "zero" => {
                expect_args(&name, &a, 0, 0)?;
                FieldSpec::Zero
            }
            "constant" => {
                expect_args(&name, &a, 1, 1)?;
                FieldSpec::Constant(a[0])
            }
            "sine_product" => {
                expect_args(&name, &a, 1, 4)?;
                FieldSpec::SineProduct {
                    amp: a[0],
                    kx: a.get(1).copied().unwrap_or(1.0),
                    ky: a.get(2).copied().unwrap_or(1.0),
                    rate: a.get(3).copied().unwrap_or(0.0),
                }
            }
            "poly_bump" => {
                expect_args(&name, &a, 1, 2)?;
                FieldSpec::PolyBump {
                    amp: a[0],
                    rate: a.get(1).copied().unwrap_or(0.0),
                }
            }
            "gaussian" => {
                expect_args(&name, &a, 4, 5)?;
                if a[3] <= 0.0 {
                    return Err(Error::Config("gaussian width must be positive".into()));
                }
                FieldSpec::Gaussian {
                    amp: a[0],
                    x0: a[1],
                    y0: a[2],
                    width: a[3],
                    tau: a.get(4).copied().unwrap_or(0.0),
                }
            }
            other => return Err(Error::Lookup(format!("unknown field generator `{other}`"))),
        };
        Ok(spec)
    }

    pub fn evaluate(&self, lx: f64, ly: f64, x: f64, y: f64, t: f64) -> f64 {
        match *self {
            FieldSpec::Zero => 0.0,
            FieldSpec::Constant(c) => c,
            FieldSpec::SineProduct { amp, kx, ky, rate } => {
                amp * (-rate * t).exp() * (kx * PI * x / lx).sin() * (ky * PI * y / ly).sin()
            }
            FieldSpec::PolyBump { amp, rate } => {
                amp * (-rate * t).exp() * 16.0 * x * (lx - x) * y * (ly - y) / (lx * lx * ly * ly)
            }
            FieldSpec::Gaussian {
                amp,
                x0,
                y0,
                width,
                tau,
            } => {
                let ramp = if tau > 0.0 {
                    1.0 - (-t / tau).exp()
                } else {
                    1.0
                };
                let r2 = (x - x0).powi(2) + (y - y0).powi(2);
                amp * ramp * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    /// Bind the generator to a domain.
    pub fn on_domain(&self, lx: f64, ly: f64) -> SpaceTimeFn {
        let s = self.clone();
        Arc::new(move |x, y, t| s.evaluate(lx, ly, x, y, t))
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FieldSpec::Zero => write_call(f, "zero", &[]),
            FieldSpec::Constant(c) => write_call(f, "constant", &[c]),
            FieldSpec::SineProduct { amp, kx, ky, rate } => {
                write_call(f, "sine_product", &[amp, kx, ky, rate])
            }
            FieldSpec::PolyBump { amp, rate } => write_call(f, "poly_bump", &[amp, rate]),
            FieldSpec::Gaussian {
                amp,
                x0,
                y0,
                width,
                tau,
            } => write_call(f, "gaussian", &[amp, x0, y0, width, tau]),
        }
    }
}

impl Serialize for FieldSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_laws_and_fields() {
        assert_eq!(LawSpec::parse("identity()").unwrap(), LawSpec::Identity);
        assert_eq!(LawSpec::parse("identity").unwrap(), LawSpec::Identity);
        assert_eq!(
            LawSpec::parse("sine(1.5, 0, 0.5, 2)").unwrap(),
            LawSpec::Sine {
                a0: 1.5,
                a1: 0.0,
                amp: 0.5,
                freq: 2.0
            }
        );
        assert!(LawSpec::parse("cosh(1)").is_err());
        assert!(LawSpec::parse("affine(1)").is_err());
        assert!(LawSpec::parse("affine(1, x)").is_err());
        let f = FieldSpec::parse("sine_product(2)").unwrap();
        assert_eq!(
            f,
            FieldSpec::SineProduct {
                amp: 2.0,
                kx: 1.0,
                ky: 1.0,
                rate: 0.0
            }
        );
    }

    #[test]
    fn display_round_trips() {
        let laws = [
            LawSpec::Identity,
            LawSpec::Constant(1e-7),
            LawSpec::AffinePlusCube {
                a0: 0.0,
                a1: 1.0,
                a3: 1.0 / 3.0,
            },
            LawSpec::Sine {
                a0: 1.5,
                a1: -0.1,
                amp: 0.5,
                freq: 2.0,
            },
        ];
        for law in laws {
            assert_eq!(LawSpec::parse(&law.to_string()).unwrap(), law);
        }
        let field = FieldSpec::Gaussian {
            amp: 50.0,
            x0: 0.3,
            y0: 0.7,
            width: 0.1,
            tau: 0.02,
        };
        assert_eq!(FieldSpec::parse(&field.to_string()).unwrap(), field);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let law = LawSpec::Sine {
            a0: 0.0,
            a1: 1.0,
            amp: 0.3,
            freq: 1.7,
        };
        let h = 1e-5;
        for k in 0..20 {
            let r = -2.0 + 0.2 * k as f64;
            let fd = (law.value(r + h) - law.value(r - h)) / (2.0 * h);
            assert!((fd - law.derivative(r)).abs() < 1e-9);
            let fd2 = (law.derivative(r + h) - law.derivative(r - h)) / (2.0 * h);
            assert!((fd2 - law.second_derivative(r)).abs() < 1e-9);
        }
    }
}
