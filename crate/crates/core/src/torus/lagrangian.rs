use crate::error::{Error, Result};
use crate::torus::grid::{GridDrift, GridField, ProbabilityGrid, TorusGrid};

/// `(x - 1) e^x + 1`, the relative entropy cost of tilting a jump rate by
/// the factor `e^x`. Nonnegative, with `x^2 / 2` leading behaviour.
pub fn jump_action(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // sum_{k>=2} (k - 1) x^k / k!
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..=14u32 {
            term *= x / k as f64;
            sum += term * (k - 1) as f64;
        }
        sum
    } else {
        (x - 1.0) * x.exp() + 1.0
    }
}

/// The quadratic Lagrangian `L(a, x) = a^2 / 2 + ℓ(x) + c0`.
///
/// Its Hamiltonian is `H(p, x) = p^2 / 2 - ℓ(x) - c0` with `H_p = p`.
/// On the grid the kinetic part is realized as the action of the
/// nearest-neighbour jump chain with rates `ρ e^{± a h}` (`ρ = 1/(2h^2)`),
/// which tends to `a^2 / 2` as `h → 0` and is exactly dual to the discrete
/// HJB operator used by the solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianSpec {
    potential: GridField,
    offset: f64,
}

impl LagrangianSpec {
    /// Uses the smallest offset making `ℓ + c0 ≥ 0`.
    pub fn new(potential: GridField) -> Self {
        let offset = (-potential.min()).max(0.0);
        Self { potential, offset }
    }

    pub fn with_offset(potential: GridField, offset: f64) -> Result<Self> {
        if !(offset >= 0.0) || potential.min() + offset < -1e-14 {
            return Err(Error::InvalidInput(format!(
                "offset {offset} does not make the potential nonnegative (min {})",
                potential.min()
            )));
        }
        Ok(Self { potential, offset })
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.potential.grid()
    }

    pub fn potential(&self) -> &GridField {
        &self.potential
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `ℓ_i + c0` at every node.
    pub fn state_costs(&self) -> Vec<f64> {
        self.potential.values().iter().map(|v| v + self.offset).collect()
    }

    /// `L(a, x)` at an arbitrary point, interpolating `ℓ`.
    #[inline]
    pub fn running_cost(&self, a: f64, x: f64) -> f64 {
        0.5 * a * a + self.potential.interpolate(x) + self.offset
    }

    #[inline]
    pub fn running_cost_at(&self, a: f64, node: usize) -> f64 {
        0.5 * a * a + self.potential.values()[node] + self.offset
    }

    #[inline]
    pub fn hamiltonian(&self, p: f64, node: usize) -> f64 {
        0.5 * p * p - self.potential.values()[node] - self.offset
    }

    #[inline]
    pub fn hamiltonian_p(&self, p: f64) -> f64 {
        p
    }

    /// Kinetic part of the discrete action of `(m, α)`.
    pub fn kinetic_action(&self, m: &ProbabilityGrid, alpha: &GridDrift) -> Result<f64> {
        let grid = self.grid();
        grid.ensure_same(&m.grid())?;
        grid.ensure_same(&alpha.grid())?;
        let h = grid.h();
        let rho = grid.base_rate();
        let a = alpha.values();
        let d = m.density();
        let mut total = 0.0;
        for i in 0..grid.n_cells() {
            let right = jump_action(a[i] * h);
            let left = jump_action(-a[grid.prev(i)] * h);
            total += d[i] * h * rho * (right + left);
        }
        Ok(total)
    }

    /// Discrete `∫ L(α(x), x) m(dx)`.
    pub fn stationary_cost(&self, m: &ProbabilityGrid, alpha: &GridDrift) -> Result<f64> {
        let potential = m.expectation(&self.potential)? + self.offset;
        Ok(self.kinetic_action(m, alpha)? + potential)
    }
}
