//! Uniform node lattice on a rectangle, nodal fields and time series of fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform lattice of `(nx + 2) x (ny + 2)` nodes on `[0, lx] x [0, ly]`.
/// The outer ring of nodes is the Dirichlet boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid2D {
    /// `nx`, `ny` count interior nodes per axis.
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Grid2D> {
        if nx < 2 || ny < 2 {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 interior nodes per axis, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Parameter(format!(
                "domain sides must be positive, got {lx} x {ly}"
            )));
        }
        Ok(Grid2D {
            nx,
            ny,
            lx,
            ly,
            hx: lx / (nx + 1) as f64,
            hy: ly / (ny + 1) as f64,
        })
    }

    /// Grid with `cells` intervals per side (mesh width `l / cells`).
    pub fn with_cells(cells: usize, lx: f64, ly: f64) -> Result<Grid2D> {
        if cells < 3 {
            return Err(Error::Parameter(format!(
                "need at least 3 cells per side, got {cells}"
            )));
        }
        Grid2D::new(cells - 1, cells - 1, lx, ly)
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.nx + 2
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.nx + 2) * (self.ny + 2)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 2) + i
    }

    #[inline]
    pub fn coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx + 1 || j == self.ny + 1
    }

    /// Node indices `(i, j)` of every interior node, row by row.
    pub fn interior(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.ny).flat_map(move |j| (1..=self.nx).map(move |i| (i, j)))
    }

    pub fn interior_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn same_as(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.lx == other.lx && self.ly == other.ly
    }

    pub fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "grid {}x{} on {}x{} vs {}x{} on {}x{}",
                self.nx, self.ny, self.lx, self.ly, other.nx, other.ny, other.lx, other.ly
            )))
        }
    }
}

/// One value per lattice node, boundary nodes included.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> ScalarField {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid2D, value: f64) -> ScalarField {
        ScalarField {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "expected {} nodal values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    /// Sample `f(x, y)` at every node.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut values = vec![0.0; grid.len()];
        for j in 0..grid.ny + 2 {
            for i in 0..grid.nx + 2 {
                let (x, y) = grid.coords(i, j);
                values[grid.idx(i, j)] = f(x, y);
            }
        }
        ScalarField { grid, values }
    }

    /// Sample `f(x, y)` at interior nodes, zero on the boundary.
    pub fn from_fn_dirichlet(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut field = ScalarField::zeros(grid);
        for (i, j) in grid.interior() {
            let (x, y) = grid.coords(i, j);
            field.values[grid.idx(i, j)] = f(x, y);
        }
        field
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        self.map(|v| factor * v)
    }

    /// `self - other`, nodewise.
    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&other.grid)?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn boundary_is_zero(&self) -> bool {
        let g = self.grid;
        (0..g.ny + 2)
            .all(|j| (0..g.nx + 2).all(|i| !g.is_boundary(i, j) || self.values[g.idx(i, j)] == 0.0))
    }

    pub fn zero_boundary(&mut self) {
        let g = self.grid;
        for j in 0..g.ny + 2 {
            for i in 0..g.nx + 2 {
                if g.is_boundary(i, j) {
                    self.values[g.idx(i, j)] = 0.0;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mirror image under `x -> lx - x`.
    pub fn mirrored_x(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        for j in 0..g.ny + 2 {
            for i in 0..g.nx + 2 {
                out.values[g.idx(g.nx + 1 - i, j)] = self.values[g.idx(i, j)];
            }
        }
        out
    }

    /// Mirror image under `y -> ly - y`.
    pub fn mirrored_y(&self) -> ScalarField {
        let g = self.grid;
        let mut out = ScalarField::zeros(g);
        for j in 0..g.ny + 2 {
            for i in 0..g.nx + 2 {
                out.values[g.idx(i, g.ny + 1 - j)] = self.values[g.idx(i, j)];
            }
        }
        out
    }
}

/// Fields at `t_n = n dt`, `n = 0..=nt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dt: f64,
    fields: Vec<ScalarField>,
}

impl Trajectory {
    pub fn new(dt: f64, fields: Vec<ScalarField>) -> Result<Trajectory> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let Some(first) = fields.first() else {
            return Err(Error::InsufficientData("trajectory without fields".into()));
        };
        let grid = *first.grid();
        for f in &fields {
            grid.check_same(f.grid())?;
        }
        Ok(Trajectory { dt, fields })
    }

    /// Sample `f(x, y, t)` on every node at `t_n`.
    pub fn from_fn(
        grid: Grid2D,
        dt: f64,
        nt: usize,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Trajectory> {
        let fields = (0..=nt)
            .map(|n| {
                let t = n as f64 * dt;
                ScalarField::from_fn(grid, |x, y| f(x, y, t))
            })
            .collect();
        Trajectory::new(dt, fields)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps (one less than the number of stored fields).
    #[inline]
    pub fn nt(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        self.nt() as f64 * self.dt
    }

    pub fn grid(&self) -> &Grid2D {
        self.fields[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn field(&self, n: usize) -> &ScalarField {
        &self.fields[n]
    }

    pub fn last(&self) -> &ScalarField {
        self.fields.last().expect("trajectory is never empty")
    }

    pub fn map_fields(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Trajectory {
        Trajectory {
            dt: self.dt,
            fields: self.fields.iter().map(f).collect(),
        }
    }

    pub fn check_same_mesh(&self, other: &Trajectory) -> Result<()> {
        self.grid().check_same(other.grid())?;
        if self.nt() != other.nt() || (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return Err(Error::Shape(format!(
                "time meshes differ: {} steps of {} vs {} steps of {}",
                self.nt(),
                self.dt,
                other.nt(),
                other.dt
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_widths_and_boundary() {
        let g = Grid2D::new(3, 4, 1.0, 2.0).unwrap();
        assert_eq!(g.hx, 0.25);
        assert_eq!(g.hy, 0.4);
        assert_eq!(g.len(), 5 * 6);
        assert!(g.is_boundary(0, 3));
        assert!(g.is_boundary(4, 3));
        assert!(g.is_boundary(2, 5));
        assert!(!g.is_boundary(1, 1));
        assert_eq!(g.interior().count(), 12);
        assert!(Grid2D::new(1, 4, 1.0, 1.0).is_err());
        let h = Grid2D::with_cells(16, 1.0, 1.0).unwrap();
        assert_eq!(h.nx, 15);
        assert_eq!(h.hx, 1.0 / 16.0);
    }

    #[test]
    fn dirichlet_sampling_pins_boundary() {
        let g = Grid2D::new(5, 5, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn_dirichlet(g, |_, _| 3.0);
        assert!(f.boundary_is_zero());
        assert_eq!(f.at(3, 3), 3.0);
        let c = ScalarField::constant(g, 3.0);
        assert!(!c.boundary_is_zero());
    }

    #[test]
    fn trajectory_checks_grids() {
        let g = Grid2D::new(3, 3, 1.0, 1.0).unwrap();
        let h = Grid2D::new(4, 3, 1.0, 1.0).unwrap();
        assert!(Trajectory::new(0.1, vec![ScalarField::zeros(g), ScalarField::zeros(h)]).is_err());
        let t = Trajectory::from_fn(g, 0.25, 4, |_, _, t| t).unwrap();
        assert_eq!(t.nt(), 4);
        assert_eq!(t.final_time(), 1.0);
        assert_eq!(t.field(2).at(1, 1), 0.5);
    }
}
