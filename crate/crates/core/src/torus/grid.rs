use crate::error::{Error, Result};

/// Smallest admissible number of cells.
pub const MIN_CELLS: usize = 8;

/// Tolerance on the total mass of a [`ProbabilityGrid`].
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Cap on drift magnitudes; drifts above it are flagged, not rejected.
pub const DRIFT_CAP: f64 = 8.0;

/// The natural projection of the real line onto the circle `[0, 1)`.
#[inline]
pub fn project_to_torus(x: f64) -> f64 {
    if (0.0..1.0).contains(&x) {
        return x;
    }
    let y = x.rem_euclid(1.0);
    // rem_euclid rounds tiny negative inputs up to exactly 1.0
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Uniform cell-centred discretization of the unit circle.
///
/// Cell `i` covers `[i h, (i + 1) h)` and its node sits at `(i + 1/2) h`.
/// Face `i` is the point `(i + 1) h` separating cell `i` from cell `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    n_cells: usize,
}

impl TorusGrid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_CELLS} cells, got {n_cells}"
            )));
        }
        Ok(Self { n_cells })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.h()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(move |i| self.node(i))
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        if i + 1 == self.n_cells {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n_cells - 1
        } else {
            i - 1
        }
    }

    #[inline]
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n_cells as isize) as usize
    }

    /// Rate `1 / (2 h^2)` of each nearest-neighbour jump of the walk whose
    /// generator is the discrete `Δ/2`.
    #[inline]
    pub fn base_rate(&self) -> f64 {
        0.5 * (self.n_cells * self.n_cells) as f64
    }

    /// Index of the cell whose node is nearest to `x`. A point exactly
    /// halfway between two nodes goes to the lower index.
    pub fn nearest_cell(&self, x: f64) -> usize {
        let s = project_to_torus(x) * self.n_cells as f64;
        let k = s.floor();
        let i = k as usize;
        if s == k && i >= 1 {
            i - 1
        } else {
            i.min(self.n_cells - 1)
        }
    }

    pub fn ensure_same(&self, other: &TorusGrid) -> Result<()> {
        if self.n_cells != other.n_cells {
            return Err(Error::GridMismatch {
                left: self.n_cells,
                right: other.n_cells,
            });
        }
        Ok(())
    }
}

/// Scalar quantity sampled at the nodes (value functions, potentials).
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidInput(format!(
                "field has {} values on a {}-cell grid",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `∫ values dx` by the midpoint rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.h()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Shifted copy with `∫ values dx = 0`.
    pub fn centered(&self) -> Self {
        let mean = self.integral();
        self.map(|v| v - mean)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &GridField, b: f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Periodic linear interpolation between nodes.
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.grid.n_cells();
        let s = project_to_torus(x) * n as f64 - 0.5;
        let k = s.floor();
        let frac = s - k;
        let i = self.grid.wrap(k as isize);
        let j = self.grid.next(i);
        (1.0 - frac) * self.values[i] + frac * self.values[j]
    }

    /// Staggered drift `-(v_{i+1} - v_i) / h`, the discrete `-Dv`.
    pub fn neg_gradient(&self) -> GridDrift {
        let inv_h = self.grid.n_cells() as f64;
        let n = self.grid.n_cells();
        let values = (0..n)
            .map(|i| -(self.values[self.grid.next(i)] - self.values[i]) * inv_h)
            .collect();
        GridDrift {
            grid: self.grid,
            values,
        }
    }
}

/// Velocity field on the faces: `values[i]` is the drift at face `i`,
/// between cell `i` and cell `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDrift {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridDrift {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidInput(format!(
                "drift has {} values on a {}-cell grid",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite drift at face {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, (0..grid.n_cells()).map(|i| f(grid.face(i))).collect())
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_cells()],
        }
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn exceeds_cap(&self) -> bool {
        self.max_abs() > DRIFT_CAP
    }

    pub fn max_abs_diff(&self, other: &GridDrift) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
    }

    /// Periodic linear interpolation between faces.
    #[inline]
    pub fn interpolate(&self, x: f64) -> f64 {
        let n = self.grid.n_cells();
        let s = project_to_torus(x) * n as f64 - 1.0;
        let k = s.floor();
        let frac = s - k;
        let i = if k < 0.0 { n - 1 } else { (k as usize).min(n - 1) };
        let j = self.grid.next(i);
        (1.0 - frac) * self.values[i] + frac * self.values[j]
    }
}

/// Nonnegative density on the nodes with unit total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGrid {
    grid: TorusGrid,
    density: Vec<f64>,
}

impl ProbabilityGrid {
    /// Normalizes `weights` (any nonnegative, not all zero) to unit mass.
    pub fn new(grid: TorusGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.n_cells() {
            return Err(Error::InvalidInput(format!(
                "density has {} values on a {}-cell grid",
                weights.len(),
                grid.n_cells()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "density must be finite and nonnegative (node {i}: {})",
                weights[i]
            )));
        }
        let mass: f64 = weights.iter().sum::<f64>() * grid.h();
        if mass <= 0.0 {
            return Err(Error::InvalidInput("density has zero total mass".into()));
        }
        let density = weights.into_iter().map(|w| w / mass).collect();
        Ok(Self { grid, density })
    }

    /// Keeps `density` as given when its mass is already 1 within
    /// [`MASS_TOLERANCE`]; otherwise normalizes.
    pub fn from_density(grid: TorusGrid, density: Vec<f64>) -> Result<Self> {
        let m = Self::new(grid, density.clone())?;
        let mass = density.iter().sum::<f64>() * grid.h();
        if (mass - 1.0).abs() <= MASS_TOLERANCE {
            Ok(Self { grid, density })
        } else {
            Ok(m)
        }
    }

    /// Builds from cell masses `p_i` (summing to one after normalization).
    pub fn from_masses(grid: TorusGrid, masses: &[f64]) -> Result<Self> {
        Self::new(grid, masses.to_vec())
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        Self {
            grid,
            density: vec![1.0; grid.n_cells()],
        }
    }

    /// All mass in one cell.
    pub fn point_mass(grid: TorusGrid, cell: usize) -> Result<Self> {
        if cell >= grid.n_cells() {
            return Err(Error::InvalidInput(format!("cell {cell} out of range")));
        }
        let mut w = vec![0.0; grid.n_cells()];
        w[cell] = 1.0;
        Self::new(grid, w)
    }

    /// Density proportional to `exp(-beta * u)`.
    pub fn gibbs(u: &GridField, beta: f64) -> Result<Self> {
        let umin = u.min();
        Self::new(
            u.grid(),
            u.values().iter().map(|&v| (-beta * (v - umin)).exp()).collect(),
        )
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Cell masses `density * h`.
    pub fn masses(&self) -> Vec<f64> {
        let h = self.grid.h();
        self.density.iter().map(|d| d * h).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.h()
    }

    pub fn min_density(&self) -> f64 {
        self.density.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn zero_cells(&self) -> usize {
        self.density.iter().filter(|&&d| d <= 0.0).count()
    }

    /// `∫ f dm`.
    pub fn expectation(&self, f: &GridField) -> Result<f64> {
        self.grid.ensure_same(&f.grid())?;
        Ok(self
            .density
            .iter()
            .zip(f.values())
            .map(|(d, v)| d * v)
            .sum::<f64>()
            * self.grid.h())
    }

    /// `(1 - s) self + s other`.
    pub fn mix(&self, other: &ProbabilityGrid, s: f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("mixing weight {s} outside [0, 1]")));
        }
        Self::new(
            self.grid,
            self.density
                .iter()
                .zip(&other.density)
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect(),
        )
    }

    pub fn l1_distance(&self, other: &ProbabilityGrid) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        Ok(self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.h())
    }

    pub fn as_field(&self) -> GridField {
        GridField {
            grid: self.grid,
            values: self.density.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_torus(0.25), 0.25);
        assert_eq!(project_to_torus(-0.25), 0.75);
        assert_eq!(project_to_torus(3.5), 0.5);
        assert_eq!(project_to_torus(-1e-300), 0.0);
    }

    #[test]
    fn grid_rejects_tiny() {
        assert!(TorusGrid::new(7).is_err());
        assert!(TorusGrid::new(8).is_ok());
    }

    #[test]
    fn nearest_cell_ties_go_down() {
        let g = TorusGrid::new(8).unwrap();
        assert_eq!(g.nearest_cell(0.5), 3);
        assert_eq!(g.nearest_cell(0.0), 0);
        assert_eq!(g.nearest_cell(0.51), 4);
        assert_eq!(g.nearest_cell(0.999), 7);
        assert_eq!(g.nearest_cell(1.0625), 0);
    }

    #[test]
    fn probability_normalizes() {
        let g = TorusGrid::new(16).unwrap();
        let p = ProbabilityGrid::new(g, (0..16).map(|i| i as f64 + 1.0).collect()).unwrap();
        assert!((p.total_mass() - 1.0).abs() < MASS_TOLERANCE);
        assert!(ProbabilityGrid::new(g, vec![0.0; 16]).is_err());
        let mut w = vec![1.0; 16];
        w[3] = -1e-3;
        assert!(ProbabilityGrid::new(g, w).is_err());
    }

    #[test]
    fn drift_interpolation_hits_faces() {
        let g = TorusGrid::new(8).unwrap();
        let a = GridDrift::new(g, (0..8).map(|i| i as f64).collect()).unwrap();
        for i in 0..8 {
            assert!((a.interpolate(g.face(i)) - i as f64).abs() < 1e-12);
        }
        // halfway between face 7 (x = 1) and face 0 (x = 1/8)
        assert!((a.interpolate(1.0 / 16.0) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn field_interpolation_hits_nodes() {
        let g = TorusGrid::new(8).unwrap();
        let f = GridField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        for i in 0..8 {
            assert!((f.interpolate(g.node(i)) - f.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn neg_gradient_of_linear_ramp() {
        let g = TorusGrid::new(8).unwrap();
        let u = GridField::new(g, (0..8).map(|i| i as f64).collect()).unwrap();
        let a = u.neg_gradient();
        assert!((a.values()[0] + 8.0).abs() < 1e-12);
        // wrap-around face jumps back by 7 cells
        assert!((a.values()[7] - 56.0).abs() < 1e-12);
    }
}
