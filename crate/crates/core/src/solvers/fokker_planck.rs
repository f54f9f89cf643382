use crate::error::{Error, Result};
use crate::solvers::linalg::solve_cyclic_tridiagonal;
use crate::torus::{GridDrift, ProbabilityGrid};

#[derive(Clone, Debug)]
pub struct StationaryMeasure {
    pub mu: ProbabilityGrid,
    pub iterations: usize,
    pub residual: f64,
}

/// Jump rates of the walk whose generator discretizes `½Δ + a·D`:
/// across face `e`, right with `ρ e^{a_e h}` and left with `ρ e^{-a_e h}`.
/// Returns (rate out of `i` to the right, rate out of `i` to the left).
fn rates(drift: &GridDrift) -> (Vec<f64>, Vec<f64>) {
    let g = drift.grid();
    let h = g.h();
    let rho = g.base_rate();
    let a = drift.values();
    let right = a.iter().map(|a| rho * (a * h).exp()).collect();
    let left = (0..g.n_cells())
        .map(|i| rho * (-a[g.prev(i)] * h).exp())
        .collect();
    (right, left)
}

/// Sup-norm of the stationary Fokker–Planck residual `Gᵀμ` in density units.
pub fn fp_residual(mu: &ProbabilityGrid, drift: &GridDrift) -> Result<f64> {
    let g = mu.grid();
    g.ensure_same(&drift.grid())?;
    let (right, left) = rates(drift);
    let d = mu.density();
    let mut worst = 0.0f64;
    for j in 0..g.n_cells() {
        let (p, q) = (g.prev(j), g.next(j));
        let r = d[p] * right[p] + d[q] * left[q] - d[j] * (right[j] + left[j]);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Positive null vector of the adjoint generator by inverse iteration on
/// `εI - Gᵀ`.
pub fn solve_invariant_measure(drift: &GridDrift) -> Result<StationaryMeasure> {
    let g = drift.grid();
    let n = g.n_cells();
    let (right, left) = rates(drift);
    let diag: Vec<f64> = right.iter().zip(&left).map(|(r, l)| r + l).collect();
    let eps = 1e-10 * diag.iter().fold(0.0f64, |m, x| m.max(*x));
    let b: Vec<f64> = diag.iter().map(|d| d + eps).collect();
    let a: Vec<f64> = (0..n).map(|j| -right[g.prev(j)]).collect();
    let c: Vec<f64> = (0..n).map(|j| -left[g.next(j)]).collect();

    let mut x = vec![1.0 / n as f64; n];
    let mut change = f64::INFINITY;
    for it in 1..=50 {
        let y = solve_cyclic_tridiagonal(&a, &b, &c, &x);
        let s: f64 = y.iter().sum();
        if !s.is_finite() || s <= 0.0 {
            return Err(Error::PowerIterationStagnation(format!(
                "iteration {it}: non-positive iterate (sum {s:e}), shift {eps:e}"
            )));
        }
        let y: Vec<f64> = y.into_iter().map(|v| (v / s).max(0.0)).collect();
        change = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = y;
        if change <= 1e-13 {
            let mu = ProbabilityGrid::from_masses(g, &x)?;
            if mu.zero_cells() > 0 {
                return Err(Error::PowerIterationStagnation(format!(
                    "{} cells underflowed to zero density",
                    mu.zero_cells()
                )));
            }
            let residual = fp_residual(&mu, drift)?;
            return Ok(StationaryMeasure {
                mu,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::PowerIterationStagnation(format!(
        "L1 change {change:e} after 50 iterations, shift {eps:e}, max rate {:e}",
        diag.iter().fold(0.0f64, |m, x| m.max(*x))
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{GridField, TorusGrid};
    use std::f64::consts::PI;

    #[test]
    fn zero_and_constant_drift_give_uniform() {
        let g = TorusGrid::new(64).unwrap();
        for c in [0.0, 2.5, -7.0] {
            let s = solve_invariant_measure(&GridDrift::from_fn(g, |_| c).unwrap()).unwrap();
            for d in s.mu.density() {
                assert!((d - 1.0).abs() < 1e-10, "c = {c}");
            }
        }
    }

    #[test]
    fn gradient_drift_gives_gibbs_measure() {
        let g = TorusGrid::new(256).unwrap();
        let u = GridField::from_fn(g, |x| 0.4 * (2.0 * PI * x).cos() + 0.1 * (6.0 * PI * x).sin()).unwrap();
        let s = solve_invariant_measure(&u.neg_gradient()).unwrap();
        let gibbs = ProbabilityGrid::gibbs(&u, 2.0).unwrap();
        assert!(s.mu.l1_distance(&gibbs).unwrap() < 1e-8);
        assert!(s.mu.min_density() > 0.0);
        assert!(s.residual < 1e-6);
    }

    #[test]
    fn nonreversible_drift_is_positive_and_stationary() {
        let g = TorusGrid::new(128).unwrap();
        let a = GridDrift::from_fn(g, |x| 3.0 + 2.0 * (2.0 * PI * x).sin()).unwrap();
        let s = solve_invariant_measure(&a).unwrap();
        assert!(s.mu.min_density() > 0.0);
        assert!(fp_residual(&s.mu, &a).unwrap() < 1e-6);
    }
}
