//! CSV serialization of fields and trajectories.
//!
//! A field is written as `x,y,value` rows in lattice order (rows of constant
//! `y`, increasing `x`), every number in shortest round-trip decimal form so
//! reading it back reproduces the same bits. A trajectory is a directory of
//! `step_NNNNN.csv` files plus an `index.json` manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField, Trajectory};

pub const FIELD_HEADER: &str = "x,y,value";
pub const TRAJECTORY_INDEX: &str = "index.json";

pub fn field_to_csv(field: &ScalarField) -> String {
    let g = field.grid();
    let mut out = String::with_capacity(g.len() * 48);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for j in 0..g.ny + 2 {
        for i in 0..g.nx + 2 {
            let (x, y) = g.coords(i, j);
            let _ = writeln!(out, "{x},{y},{}", field.at(i, j));
        }
    }
    out
}

pub fn field_from_csv(text: &str, grid: Grid2D) -> Result<ScalarField> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == FIELD_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "expected header `{FIELD_HEADER}`, got {other:?}"
            )))
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Format(format!(
                "line {}: expected 3 columns",
                lineno + 2
            )));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: malformed number `{s}`", lineno + 2)))
        };
        let k = values.len();
        if k >= grid.len() {
            return Err(Error::Format("more rows than grid nodes".into()));
        }
        let (i, j) = (k % grid.stride(), k / grid.stride());
        let (x, y) = grid.coords(i, j);
        if parse(cols[0])? != x || parse(cols[1])? != y {
            return Err(Error::Format(format!(
                "line {}: coordinates do not match node ({i}, {j})",
                lineno + 2
            )));
        }
        values.push(parse(cols[2])?);
    }
    ScalarField::from_values(grid, values)
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    fs::write(path, field_to_csv(field))?;
    Ok(())
}

pub fn read_field(path: &Path, grid: Grid2D) -> Result<ScalarField> {
    field_from_csv(&fs::read_to_string(path)?, grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub grid: Grid2D,
    pub dt: f64,
    pub nt: usize,
    pub files: Vec<String>,
}

/// Write every step of `traj` into `dir` (created if missing). Returns the
/// paths written, index last.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(traj.nt() + 1);
    let mut written = Vec::with_capacity(traj.nt() + 2);
    for (n, field) in traj.fields().iter().enumerate() {
        let name = format!("step_{n:05}.csv");
        let path = dir.join(&name);
        write_field(&path, field)?;
        files.push(name);
        written.push(path);
    }
    let index = TrajectoryIndex {
        grid: *traj.grid(),
        dt: traj.dt(),
        nt: traj.nt(),
        files,
    };
    let path = dir.join(TRAJECTORY_INDEX);
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, json)?;
    written.push(path);
    Ok(written)
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(dir.join(TRAJECTORY_INDEX))?;
    let index: TrajectoryIndex =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    if index.files.len() != index.nt + 1 {
        return Err(Error::Format(format!(
            "index lists {} files for {} steps",
            index.files.len(),
            index.nt
        )));
    }
    let fields = index
        .files
        .iter()
        .map(|name| read_field(&dir.join(name), index.grid))
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(index.dt, fields)
}
