//! Five-point flux-form operators with homogeneous Dirichlet data.
//!
//! Face coefficients live on the lattice edges: `x[idx(i, j)]` belongs to the
//! edge from node `(i, j)` to `(i + 1, j)`, `y[idx(i, j)]` to the edge from
//! `(i, j)` to `(i, j + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

/// How a nodal coefficient is carried to a face.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    pub fn parse(text: &str) -> Result<FaceAverage> {
        match text.trim() {
            "arithmetic" => Ok(FaceAverage::Arithmetic),
            "harmonic" => Ok(FaceAverage::Harmonic),
            other => Err(Error::Config(format!(
                "averaging must be `arithmetic` or `harmonic`, got `{other}`"
            ))),
        }
    }

    #[inline]
    pub fn mean(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => {
                let s = a + b;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * a * b / s
                }
            }
        }
    }

    /// Partial derivative of `mean(a, b)` with respect to `a`.
    #[inline]
    pub fn partial_first(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5,
            FaceAverage::Harmonic => {
                let s = a + b;
                if s == 0.0 {
                    0.0
                } else {
                    2.0 * b * b / (s * s)
                }
            }
        }
    }
}

/// Coefficients on every lattice edge.
#[derive(Clone, Debug)]
pub struct FaceCoefficients {
    grid: Grid2D,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl FaceCoefficients {
    pub fn from_nodal(a: &ScalarField, avg: FaceAverage) -> FaceCoefficients {
        let g = *a.grid();
        let v = a.values();
        let mut x = vec![0.0; g.len()];
        let mut y = vec![0.0; g.len()];
        for j in 0..g.ny + 2 {
            for i in 0..g.nx + 2 {
                let k = g.idx(i, j);
                if i + 1 < g.nx + 2 {
                    x[k] = avg.mean(v[k], v[k + 1]);
                }
                if j + 1 < g.ny + 2 {
                    y[k] = avg.mean(v[k], v[k + g.stride()]);
                }
            }
        }
        FaceCoefficients { grid: g, x, y }
    }

    pub fn unit(grid: Grid2D) -> FaceCoefficients {
        FaceCoefficients::from_nodal(&ScalarField::constant(grid, 1.0), FaceAverage::Arithmetic)
    }
}

/// Discrete `div(c ∇w)` at interior nodes using the actual nodal values of
/// `w` on the boundary ring; zero on boundary nodes.
pub fn flux_divergence(faces: &FaceCoefficients, w: &ScalarField) -> ScalarField {
    let g = faces.grid;
    let s = g.stride();
    let wv = w.values();
    let (ihx2, ihy2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let mut out = ScalarField::zeros(g);
    let o = out.values_mut();
    for (i, j) in g.interior() {
        let k = g.idx(i, j);
        let fx = faces.x[k] * (wv[k + 1] - wv[k]) - faces.x[k - 1] * (wv[k] - wv[k - 1]);
        let fy = faces.y[k] * (wv[k + s] - wv[k]) - faces.y[k - s] * (wv[k] - wv[k - s]);
        o[k] = fx * ihx2 + fy * ihy2;
    }
    out
}

/// `div(a ∇w)` with arithmetic face averaging. `a` must be positive everywhere.
pub fn diffuse(a: &ScalarField, w: &ScalarField) -> Result<ScalarField> {
    diffuse_with(a, w, FaceAverage::Arithmetic)
}

pub fn diffuse_with(a: &ScalarField, w: &ScalarField, avg: FaceAverage) -> Result<ScalarField> {
    let g = *a.grid();
    g.check_same(w.grid())?;
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            let v = a.at(i, j);
            if !(v > 0.0) {
                return Err(Error::Coefficient { i, j, value: v });
            }
        }
    }
    Ok(flux_divergence(&FaceCoefficients::from_nodal(a, avg), w))
}

/// Five-point Laplacian of the nodewise image `phi(u)`. Boundary nodes
/// contribute `phi(u_boundary)`.
pub fn laplace_of_composition(phi: &dyn Fn(f64) -> f64, u: &ScalarField) -> Result<ScalarField> {
    let image = u.map(phi);
    if let Some(node) = image.first_non_finite() {
        return Err(Error::FieldEvaluation { node });
    }
    Ok(flux_divergence(&FaceCoefficients::unit(*u.grid()), &image))
}

/// Symmetric positive definite operator `v -> mass ⊙ v - div(c ∇v)` on
/// interior nodes, for vectors that vanish on the boundary ring.
#[derive(Clone, Debug)]
pub struct SpdStencil {
    grid: Grid2D,
    mass: Vec<f64>,
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl SpdStencil {
    pub fn new(faces: &FaceCoefficients, mass: Vec<f64>) -> SpdStencil {
        let g = faces.grid;
        assert_eq!(mass.len(), g.len());
        let ihx2 = 1.0 / (g.hx * g.hx);
        let ihy2 = 1.0 / (g.hy * g.hy);
        SpdStencil {
            grid: g,
            mass,
            cx: faces.x.iter().map(|c| c * ihx2).collect(),
            cy: faces.y.iter().map(|c| c * ihy2).collect(),
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let g = self.grid;
        let s = g.stride();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, j) in g.interior() {
            let k = g.idx(i, j);
            let vk = v[k];
            out[k] = self.mass[k] * vk
                + self.cx[k] * (vk - v[k + 1])
                + self.cx[k - 1] * (vk - v[k - 1])
                + self.cy[k] * (vk - v[k + s])
                + self.cy[k - s] * (vk - v[k - s]);
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let g = self.grid;
        let s = g.stride();
        let mut d = vec![1.0; g.len()];
        for (i, j) in g.interior() {
            let k = g.idx(i, j);
            d[k] = self.mass[k] + self.cx[k] + self.cx[k - 1] + self.cy[k] + self.cy[k - s];
        }
        d
    }
}

/// Transposed sensitivity of `w -> div(a(u) ∇w)` with respect to `u`:
/// returns `v` with `v_k = Σ_faces ∂a_f/∂u_k (w_j - w_i)(z_i - z_j) / h²`
/// for interior `k`, i.e. `(∂/∂u [div(a(u)∇w)])ᵀ z`. Boundary entries are 0.
pub(crate) fn coefficient_sensitivity(
    a: &ScalarField,
    da: &ScalarField,
    avg: FaceAverage,
    w: &ScalarField,
    z: &ScalarField,
) -> Vec<f64> {
    let g = *a.grid();
    let s = g.stride();
    let (av, dv, wv, zv) = (a.values(), da.values(), w.values(), z.values());
    let mut out = vec![0.0; g.len()];
    let visit = |k: usize, m: usize, ih2: f64, out: &mut Vec<f64>| {
        let t = (wv[m] - wv[k]) * (zv[k] - zv[m]) * ih2;
        if t == 0.0 {
            return;
        }
        out[k] += avg.partial_first(av[k], av[m]) * dv[k] * t;
        out[m] += avg.partial_first(av[m], av[k]) * dv[m] * t;
    };
    let (ihx2, ihy2) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            let k = g.idx(i, j);
            if i + 1 < g.nx + 2 && j >= 1 && j <= g.ny {
                visit(k, k + 1, ihx2, &mut out);
            }
            if j + 1 < g.ny + 2 && i >= 1 && i <= g.nx {
                visit(k, k + s, ihy2, &mut out);
            }
        }
    }
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            if g.is_boundary(i, j) {
                out[g.idx(i, j)] = 0.0;
            }
        }
    }
    out
}
