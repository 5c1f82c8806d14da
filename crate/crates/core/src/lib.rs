//! Simulation, optimal control and estimate auditing for the dead-oil
//! isotherm system: a degenerate-parabolic saturation equation coupled to a
//! linear-in-pressure diffusion equation on a rectangle, with homogeneous
//! Dirichlet data and a distributed injection control.

pub mod adjoint;
pub mod config;
pub mod cost;
pub mod error;
pub mod estimates;
pub mod forward;
pub mod grid;
pub mod holder;
pub mod io;
pub mod laws;
pub mod linalg;
pub mod manufactured;
pub mod model;
pub mod norms;
pub mod ops;
pub mod optimize;

pub use error::{Error, Result};
pub use grid::{Grid2D, ScalarField, Trajectory};
pub use model::{CoefficientSet, ProblemSpec};
