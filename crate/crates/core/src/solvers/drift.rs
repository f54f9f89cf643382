use crate::error::{Error, Result};
use crate::torus::{GridDrift, GridField, LagrangianSpec, ProbabilityGrid};

#[derive(Clone, Debug)]
pub struct StationaryDrift {
    pub alpha: GridDrift,
    /// Potential with `α = Dψ`, zero mean.
    pub psi: GridField,
    /// `∫ L(α, x) m(dx)` (discrete action).
    pub cost: f64,
}

fn check_positive(m: &ProbabilityGrid) -> Result<()> {
    match m.zero_cells() {
        0 => Ok(()),
        k => Err(Error::NonPositiveMeasure { zero_cells: k }),
    }
}

/// The drift field keeping `m` invariant with constant probability flux
/// `phi` through every face.
///
/// Across face `e` between masses `p` and `q`, the flux
/// `ρ(p e^{s} - q e^{-s})` equals `phi` for
/// `s = asinh(phi / (2ρ√(pq))) + ½ log(q/p)`, and `a_e = s / h`.
pub fn drift_with_flux(m: &ProbabilityGrid, phi: f64) -> Result<GridDrift> {
    check_positive(m)?;
    let g = m.grid();
    let rho = g.base_rate();
    let p = m.masses();
    let a = (0..g.n_cells())
        .map(|i| {
            let (pi, pj) = (p[i], p[g.next(i)]);
            let s = (phi / (2.0 * rho * (pi * pj).sqrt())).asinh() + 0.5 * (pj / pi).ln();
            s / g.h()
        })
        .collect();
    GridDrift::new(g, a)
}

/// Least kinetic action among drifts leaving `m` invariant:
/// `ρ Σ_e (√p_i - √p_{i+1})^2`.
pub fn minimal_kinetic(m: &ProbabilityGrid) -> f64 {
    let g = m.grid();
    let rho = g.base_rate();
    let p = m.masses();
    (0..g.n_cells())
        .map(|i| {
            let d = p[i].sqrt() - p[g.next(i)].sqrt();
            d * d
        })
        .sum::<f64>()
        * rho
}

/// Cheapest drift keeping `m` invariant.
///
/// The derivative of the action with respect to the flux is `Σ_e s_e`, and
/// `Σ_e ½ log(p_{e+1}/p_e) = 0` around the circle, so the optimum carries no
/// flux and is the gradient field `α = ½ D log m`.
pub fn optimal_stationary_drift(l: &LagrangianSpec, m: &ProbabilityGrid) -> Result<StationaryDrift> {
    l.grid().ensure_same(&m.grid())?;
    let alpha = drift_with_flux(m, 0.0)?;
    let psi = GridField::new(m.grid(), m.density().iter().map(|d| 0.5 * d.ln()).collect())?.centered();
    let cost = l.stationary_cost(m, &alpha)?;
    Ok(StationaryDrift { alpha, psi, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::fp_residual;
    use crate::torus::TorusGrid;
    use std::f64::consts::PI;

    fn setup(n: usize) -> (TorusGrid, LagrangianSpec) {
        let g = TorusGrid::new(n).unwrap();
        (g, LagrangianSpec::new(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos()).unwrap()))
    }

    #[test]
    fn uniform_measure_needs_no_drift() {
        let (g, l) = setup(64);
        let s = optimal_stationary_drift(&l, &ProbabilityGrid::uniform(g)).unwrap();
        assert_eq!(s.alpha.max_abs(), 0.0);
        let mean_ell = l.potential().integral();
        assert!((s.cost - mean_ell - l.offset()).abs() < 1e-12);
    }

    #[test]
    fn gibbs_inversion() {
        let (g, l) = setup(256);
        let u = GridField::from_fn(g, |x| 0.3 * (2.0 * PI * x).sin() - 0.2 * (4.0 * PI * x).cos()).unwrap();
        let m = ProbabilityGrid::gibbs(&u, 2.0).unwrap();
        let s = optimal_stationary_drift(&l, &m).unwrap();
        assert!(s.alpha.max_abs_diff(&u.neg_gradient()).unwrap() < 1e-8);
        assert!(fp_residual(&m, &s.alpha).unwrap() < 1e-6);
        assert!(s.psi.combine(1.0, &u, 1.0).unwrap().centered().sup_norm() < 1e-10);
    }

    #[test]
    fn flux_costs_more_and_stays_stationary() {
        let (g, l) = setup(64);
        let m = ProbabilityGrid::new(g, g.nodes().map(|x| 1.2 + (2.0 * PI * x).sin()).collect()).unwrap();
        let best = optimal_stationary_drift(&l, &m).unwrap();
        assert!((best.cost - l.stationary_cost(&m, &best.alpha).unwrap()).abs() < 1e-15);
        let kin = l.kinetic_action(&m, &best.alpha).unwrap();
        assert!((kin - minimal_kinetic(&m)).abs() < 1e-10 * kin.max(1.0));
        for phi in [-0.3, -0.01, 0.02, 1.0] {
            let a = drift_with_flux(&m, phi).unwrap();
            assert!(fp_residual(&m, &a).unwrap() < 1e-8);
            assert!(l.stationary_cost(&m, &a).unwrap() > best.cost);
        }
    }

    #[test]
    fn zero_cells_rejected() {
        let (g, l) = setup(16);
        let m = ProbabilityGrid::point_mass(g, 3).unwrap();
        assert!(matches!(
            optimal_stationary_drift(&l, &m),
            Err(Error::NonPositiveMeasure { zero_cells: 15 })
        ));
    }
}
