//! Ergodic HJB and stationary Fokker–Planck solvers, with the independent
//! oracles used to cross-check them.

mod drift;
mod eigen;
mod fokker_planck;
mod hjb;
pub mod linalg;
mod mdp;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use drift::{drift_with_flux, minimal_kinetic, optimal_stationary_drift, StationaryDrift};
pub use eigen::{principal_eigen_oracle, EigenPair};
pub use fokker_planck::{fp_residual, solve_invariant_measure, StationaryMeasure};
pub use hjb::{hjb_residual, solve_ergodic_hjb, solve_ergodic_hjb_with, ErgodicSolution, HjbOptions};
pub use mdp::{closed_measure_min_oracle, uniform_action_grid};

/// One line of solver diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual: f64,
    pub lambda: f64,
}

/// Streams records as JSON lines.
pub fn write_json_lines<W: Write>(mut out: W, records: &[IterationRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
