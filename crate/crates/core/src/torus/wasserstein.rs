use crate::error::{Error, Result};
use crate::torus::grid::{ProbabilityGrid, TorusGrid};

/// W₁ between two measures on the circle, given by cell masses on a grid of
/// spacing `h`. `scratch` is reused to avoid allocation in hot loops.
///
/// On the circle `W₁ = min_c Σ h |D_i - c|` where `D` is the cumulative
/// difference of masses; the minimizing shift is a median of `D`.
pub fn wasserstein1_masses(p: &[f64], q: &[f64], h: f64, scratch: &mut Vec<f64>) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let n = p.len();
    scratch.clear();
    let mut acc = 0.0;
    for (a, b) in p.iter().zip(q) {
        acc += a - b;
        scratch.push(acc);
    }
    scratch.extend_from_within(..n);
    let (cdf, work) = scratch.split_at_mut(n);
    let (_, median, _) = work.select_nth_unstable_by((n - 1) / 2, |a, b| a.total_cmp(b));
    let c = *median;
    h * cdf.iter().map(|d| (d - c).abs()).sum::<f64>()
}

pub fn wasserstein1_circle(mu: &ProbabilityGrid, nu: &ProbabilityGrid) -> Result<f64> {
    let grid = mu.grid();
    grid.ensure_same(&nu.grid())?;
    let mut scratch = Vec::with_capacity(grid.n_cells());
    Ok(wasserstein1_masses(&mu.masses(), &nu.masses(), grid.h(), &mut scratch))
}

/// Puts mass `1/len` on the cell nearest to each point.
pub fn empirical_measure(grid: TorusGrid, points: &[f64]) -> Result<ProbabilityGrid> {
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let mut w = vec![0.0; grid.n_cells()];
    for &x in points {
        w[grid.nearest_cell(x)] += 1.0;
    }
    ProbabilityGrid::new(grid, w)
}
