//! The stationary MFG equilibrium and the payoff band.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::sampling::random_smooth_density;
use crate::solvers::{fp_residual, hjb_residual, solve_ergodic_hjb, solve_invariant_measure};
use crate::torus::{
    wasserstein1_circle, CouplingFunctional, GridField, LagrangianSpec, MaxF, ProbabilityGrid,
};

#[derive(Clone, Debug)]
pub struct MfgEquilibrium {
    pub lambda0: f64,
    pub u0: GridField,
    pub mu0: ProbabilityGrid,
    pub e_mfg: f64,
    pub e_max: f64,
    pub e_max_certified: bool,
    pub max_f: MaxF,
    pub hjb_residual: f64,
    pub fp_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MfgSummary {
    pub lambda0: f64,
    pub e_mfg: f64,
    pub e_max: f64,
    pub e_max_certified: bool,
    pub f_mu0: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
}

impl MfgEquilibrium {
    pub fn summary(&self, f: &CouplingFunctional) -> MfgSummary {
        MfgSummary {
            lambda0: self.lambda0,
            e_mfg: self.e_mfg,
            e_max: self.e_max,
            e_max_certified: self.e_max_certified,
            f_mu0: f.eval(&self.mu0),
            hjb_residual: self.hjb_residual,
            fp_residual: self.fp_residual,
        }
    }
}

/// `F(μ)` is constant in space, so the equilibrium is the ergodic control
/// problem without coupling plus its invariant measure.
pub fn solve_mfg(l: &LagrangianSpec, f: &CouplingFunctional) -> Result<MfgEquilibrium> {
    let grid = l.grid();
    grid.ensure_same(&f.grid())?;
    let zero = GridField::zeros(grid);
    let sol = solve_ergodic_hjb(l, &zero)?;
    let alpha = sol.u.neg_gradient();
    let mu0 = solve_invariant_measure(&alpha)?.mu;
    let f_mu0 = f.eval(&mu0);

    // substitute into the coupled system: -½Δu + H(Du) = (λ0 - F(μ0)) + F(μ0)
    let coupling = GridField::constant(grid, f_mu0);
    let hjb_res = hjb_residual(l, &coupling, &sol.u, sol.lambda - f_mu0)?;
    let fp_res = fp_residual(&mu0, &alpha)?;

    let max_f = f.max();
    // λ here is the top eigenvalue, i.e. minus the optimal average cost
    let lambda0 = sol.lambda;
    Ok(MfgEquilibrium {
        lambda0,
        e_mfg: -lambda0 + f_mu0,
        e_max: -lambda0 + max_f.value,
        e_max_certified: max_f.certified,
        max_f,
        u0: sol.u,
        mu0,
        hjb_residual: hjb_res,
        fp_residual: fp_res,
    })
}

#[derive(Clone, Debug)]
pub struct UniquenessProbe {
    pub lambdas: Vec<f64>,
    pub measures: Vec<ProbabilityGrid>,
    /// Largest `|λ - λ0|` over the starts.
    pub max_lambda_spread: f64,
    /// Largest `W₁(μ, μ0)` over the starts.
    pub max_measure_spread: f64,
}

/// Runs the fixed-point map `m ↦ invariant measure of the HJB drift for
/// the coupling F(m)` from `starts` random measures.
pub fn uniqueness_probe(
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    eq: &MfgEquilibrium,
    starts: usize,
    seed: u64,
) -> Result<UniquenessProbe> {
    let grid = l.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambdas = Vec::with_capacity(starts);
    let mut measures = Vec::with_capacity(starts);
    for _ in 0..starts {
        let mut m = random_smooth_density(grid, &mut rng, 4, 1.0);
        let mut lambda = f64::NAN;
        for _ in 0..50 {
            let coupling = GridField::constant(grid, f.eval(&m));
            let s = solve_ergodic_hjb(l, &coupling)?;
            let next = solve_invariant_measure(&s.u.neg_gradient())?.mu;
            let moved = wasserstein1_circle(&m, &next)?;
            // report the ergodic constant of the uncoupled problem
            lambda = s.lambda + f.eval(&m);
            m = next;
            if moved < 1e-13 {
                break;
            }
        }
        lambdas.push(lambda);
        measures.push(m);
    }
    let max_lambda_spread = lambdas
        .iter()
        .fold(0.0f64, |a, l| a.max((l - eq.lambda0).abs()));
    let mut max_measure_spread = 0.0f64;
    for m in &measures {
        max_measure_spread = max_measure_spread.max(wasserstein1_circle(m, &eq.mu0)?);
    }
    Ok(UniquenessProbe {
        lambdas,
        measures,
        max_lambda_spread,
        max_measure_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::principal_eigen_oracle;
    use crate::torus::{LagKernel, TorusGrid};
    use std::f64::consts::PI;

    fn cos_coupling(g: TorusGrid) -> CouplingFunctional {
        CouplingFunctional::convolution(LagKernel::from_fn(g, |d| (2.0 * PI * d).cos()).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn flat_potential() {
        let g = TorusGrid::new(32).unwrap();
        let l = LagrangianSpec::new(GridField::zeros(g));
        let f = cos_coupling(g);
        let eq = solve_mfg(&l, &f).unwrap();
        assert_eq!(eq.lambda0, 0.0);
        assert_eq!(eq.u0.sup_norm(), 0.0);
        assert!(eq.mu0.density().iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!((eq.e_mfg - f.eval(&ProbabilityGrid::uniform(g))).abs() < 1e-12);
    }

    #[test]
    fn cosine_instance_against_eigen_oracle() {
        let g = TorusGrid::new(256).unwrap();
        let l = LagrangianSpec::with_offset(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos()).unwrap(), 0.5)
            .unwrap();
        let f = cos_coupling(g);
        let eq = solve_mfg(&l, &f).unwrap();
        let e = principal_eigen_oracle(&l, &GridField::zeros(g)).unwrap();
        assert!((eq.lambda0 - e.lambda).abs() < 1e-8);
        let w2 = ProbabilityGrid::new(g, e.w.values().iter().map(|w| w * w).collect()).unwrap();
        assert!(eq.mu0.l1_distance(&w2).unwrap() < 1e-8);
        assert!(eq.hjb_residual < 1e-8 && eq.fp_residual < 1e-8);
        assert!(eq.e_mfg <= eq.e_max && eq.e_max_certified);

        let probe = uniqueness_probe(&l, &f, &eq, 10, 3).unwrap();
        assert!(probe.max_lambda_spread < 1e-6);
        assert!(probe.max_measure_spread < 1e-6);
    }
}
