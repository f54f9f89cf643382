//! Grids, measures, distances and cost functionals on the unit circle.

mod coupling;
mod grid;
mod io;
mod lagrangian;
mod wasserstein;

pub use coupling::{project_to_simplex, CouplingFunctional, CouplingTerm, Curvature, LagKernel, MaxF};
pub use grid::{
    project_to_torus, GridDrift, GridField, ProbabilityGrid, TorusGrid, DRIFT_CAP, MASS_TOLERANCE,
    MIN_CELLS,
};
pub use lagrangian::{jump_action, LagrangianSpec};
pub use wasserstein::{empirical_measure, wasserstein1_circle, wasserstein1_masses};
