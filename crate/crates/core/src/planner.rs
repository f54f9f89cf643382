//! Social planner, its convex primal oracle, and the penalized systems whose
//! couplings `-n δF/δm` push `F(mⁿ)` towards `max F`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::random_smooth_density;
use crate::solvers::{
    fp_residual, hjb_residual, solve_ergodic_hjb_with, solve_invariant_measure, HjbOptions,
};
use crate::torus::{
    project_to_simplex, wasserstein1_circle, CouplingFunctional, GridDrift, GridField, LagrangianSpec,
    ProbabilityGrid,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Damping of the measure update.
    pub tau: f64,
    /// Stop once `W₁(m, m⁺)` falls below this.
    pub tol_w1: f64,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tau: 0.1,
            tol_w1: 1e-9,
            max_iter: 100_000,
            starts: 5,
            seed: 0x5eed,
        }
    }
}

/// One converged start of a damped fixed-point run.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub u: GridField,
    pub lambda: f64,
    pub m: ProbabilityGrid,
    pub alpha: GridDrift,
    pub iterations: usize,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub objective: f64,
    pub start: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateRecord {
    pub start: usize,
    pub converged: bool,
    pub objective: f64,
    pub iterations: usize,
    /// W₁ distance to the selected fixed point.
    pub distance_to_selected: f64,
}

struct System<'a> {
    l: &'a LagrangianSpec,
    /// Right-hand side `f(m)` of the HJB equation.
    rhs: Box<dyn Fn(&ProbabilityGrid) -> GridField + Sync + 'a>,
    objective: Box<dyn Fn(&ProbabilityGrid, &GridDrift) -> f64 + Sync + 'a>,
}

impl System<'_> {
    fn run(&self, m0: ProbabilityGrid, start: usize, opts: &FixedPointOptions) -> Result<FixedPoint> {
        let mut m = m0;
        let mut hjb = HjbOptions::default();
        let mut tau = opts.tau;
        let mut best = f64::INFINITY;
        let mut stalled = 0usize;
        for it in 1..=opts.max_iter {
            let s = solve_ergodic_hjb_with(self.l, &(self.rhs)(&m), &hjb)?;
            let next = solve_invariant_measure(&s.u.neg_gradient())?.mu;
            let moved = wasserstein1_circle(&m, &next)?;
            hjb.warm_start = Some(s.u);
            if moved <= opts.tol_w1 {
                return self.polish(next, hjb, it, start);
            }
            if moved < best * (1.0 - 1e-3) {
                best = moved;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 100 {
                    tau = (tau * 0.5).max(1e-3);
                    stalled = 0;
                }
            }
            m = m.mix(&next, tau)?;
        }
        Err(Error::NoFixedPoint(format!(
            "start {start}: W₁ step {best:.3e} after {} iterations",
            opts.max_iter
        )))
    }

    fn polish(&self, m: ProbabilityGrid, hjb: HjbOptions, iterations: usize, start: usize) -> Result<FixedPoint> {
        let s = solve_ergodic_hjb_with(self.l, &(self.rhs)(&m), &hjb)?;
        let alpha = s.u.neg_gradient();
        let m = solve_invariant_measure(&alpha)?.mu;
        let hjb_res = hjb_residual(self.l, &(self.rhs)(&m), &s.u, s.lambda)?;
        let fp_res = fp_residual(&m, &alpha)?;
        let objective = (self.objective)(&m, &alpha);
        Ok(FixedPoint {
            u: s.u,
            lambda: s.lambda,
            m,
            alpha,
            iterations,
            hjb_residual: hjb_res,
            fp_residual: fp_res,
            objective,
            start,
        })
    }

    /// Runs every start and keeps the fixed point of lowest objective.
    fn multistart(
        &self,
        starts: Vec<ProbabilityGrid>,
        opts: &FixedPointOptions,
    ) -> Result<(FixedPoint, Vec<CandidateRecord>)> {
        let results: Vec<Result<FixedPoint>> = starts
            .into_par_iter()
            .enumerate()
            .map(|(k, m0)| self.run(m0, k, opts))
            .collect();
        let mut best: Option<FixedPoint> = None;
        let mut last_err = None;
        for r in &results {
            match r {
                Ok(fp) => {
                    if best.as_ref().is_none_or(|b| fp.objective < b.objective) {
                        best = Some(fp.clone());
                    }
                }
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        let best = best.ok_or_else(|| Error::NoFixedPoint(last_err.unwrap_or_default()))?;
        let mut records = Vec::with_capacity(results.len());
        for (k, r) in results.iter().enumerate() {
            records.push(match r {
                Ok(fp) => CandidateRecord {
                    start: k,
                    converged: true,
                    objective: fp.objective,
                    iterations: fp.iterations,
                    distance_to_selected: wasserstein1_circle(&fp.m, &best.m)?,
                },
                Err(_) => CandidateRecord {
                    start: k,
                    converged: false,
                    objective: f64::NAN,
                    iterations: opts.max_iter,
                    distance_to_selected: f64::NAN,
                },
            });
        }
        Ok((best, records))
    }
}

fn default_starts(l: &LagrangianSpec, opts: &FixedPointOptions) -> Vec<ProbabilityGrid> {
    let grid = l.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![ProbabilityGrid::uniform(grid)];
    while starts.len() < opts.starts.max(1) {
        starts.push(random_smooth_density(grid, &mut rng, 4, 1.0));
    }
    starts
}

#[derive(Clone, Debug)]
pub struct PlannerSolution {
    pub u_tilde: GridField,
    pub lambda: f64,
    pub m_tilde: ProbabilityGrid,
    pub alpha_tilde: GridDrift,
    /// `∫ L(α̃) m̃ + F(m̃)`.
    pub e_min: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
    pub candidates: Vec<CandidateRecord>,
}

/// Minimizes `∫L(α)m + F(m)` over stationary pairs via the planner's MFG
/// system with coupling `δF/δm(m, ·)`.
pub fn solve_planner(
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    opts: &FixedPointOptions,
) -> Result<PlannerSolution> {
    l.grid().ensure_same(&f.grid())?;
    let sys = System {
        l,
        rhs: Box::new(|m| f.flat_derivative(m)),
        objective: Box::new(|m, a| l.stationary_cost(m, a).expect("same grid") + f.eval(m)),
    };
    let (fp, candidates) = sys.multistart(default_starts(l, opts), opts)?;
    Ok(PlannerSolution {
        e_min: fp.objective,
        u_tilde: fp.u,
        lambda: fp.lambda,
        m_tilde: fp.m,
        alpha_tilde: fp.alpha,
        hjb_residual: fp.hjb_residual,
        fp_residual: fp.fp_residual,
        iterations: fp.iterations,
        candidates,
    })
}

#[derive(Clone, Debug)]
pub struct PenalizedSolution {
    pub n: f64,
    pub u_n: GridField,
    pub m_n: ProbabilityGrid,
    pub alpha_n: GridDrift,
    pub f_value: f64,
    /// `∫ L(αⁿ) mⁿ`.
    pub kinetic: f64,
    /// `∫ L(αⁿ) mⁿ - n F(mⁿ)`, the penalized objective.
    pub objective: f64,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
    pub candidates: Vec<CandidateRecord>,
}

impl PenalizedSolution {
    /// `∫ L(αⁿ) mⁿ + F(mⁿ)`.
    pub fn value(&self) -> f64 {
        self.kinetic + self.f_value
    }
}

/// Fixed point of the system with coupling `-n δF/δm(m, ·)`. `extra_starts`
/// are tried besides the default multistart (e.g. the previous ladder rung).
pub fn solve_penalized(
    n: f64,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    opts: &FixedPointOptions,
    extra_starts: &[ProbabilityGrid],
) -> Result<PenalizedSolution> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!("penalization n = {n} must be positive")));
    }
    l.grid().ensure_same(&f.grid())?;
    let sys = System {
        l,
        rhs: Box::new(move |m| f.flat_derivative(m).map(|v| -n * v)),
        objective: Box::new(move |m, a| l.stationary_cost(m, a).expect("same grid") - n * f.eval(m)),
    };
    let mut starts = default_starts(l, opts);
    starts.extend(extra_starts.iter().cloned());
    // the residual of the coupled HJB scales with n times the measure error
    let scaled = FixedPointOptions {
        tol_w1: opts.tol_w1 / n.max(1.0),
        ..opts.clone()
    };
    let (fp, candidates) = sys.multistart(starts, &scaled)?;
    let kinetic = l.stationary_cost(&fp.m, &fp.alpha)?;
    Ok(PenalizedSolution {
        n,
        f_value: f.eval(&fp.m),
        kinetic,
        objective: fp.objective,
        u_n: fp.u,
        m_n: fp.m,
        alpha_n: fp.alpha,
        hjb_residual: fp.hjb_residual,
        fp_residual: fp.fp_residual,
        iterations: fp.iterations,
        candidates,
    })
}

/// Solves the rungs `n = 1, 2, 4, ..., 2^max_exponent`, warm-starting each
/// from the previous one.
pub fn penalized_ladder(
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    max_exponent: u32,
    opts: &FixedPointOptions,
) -> Result<Vec<PenalizedSolution>> {
    let mut out: Vec<PenalizedSolution> = Vec::new();
    for k in 0..=max_exponent {
        let warm: Vec<ProbabilityGrid> = out.last().map(|p| vec![p.m_n.clone()]).unwrap_or_default();
        out.push(solve_penalized((1u64 << k) as f64, l, f, opts, &warm)?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PrimalOracle {
    pub value: f64,
    pub m: ProbabilityGrid,
    /// Optimal probability flux through every face.
    pub flux: f64,
    pub iterations: usize,
}

const PRIMAL_FLOOR: f64 = 1e-14;

/// Minimal kinetic cost of moving flux `phi` across a face between masses
/// `p` and `q`, with its partial derivatives in `(p, q, phi)`.
fn edge_cost(rho: f64, p: f64, q: f64, phi: f64) -> (f64, f64, f64, f64) {
    let sq = (p * q).sqrt();
    let z = phi / (2.0 * rho * sq);
    let root = (1.0 + z * z).sqrt();
    let half_log = 0.5 * (q / p).ln();
    let s = z.asinh() + half_log;
    let value = rho * (p + q) + phi * s - 2.0 * rho * sq * root;
    let dp = rho - rho * (q / p).sqrt() * root - phi / (2.0 * p);
    let dq = rho - rho * (p / q).sqrt() * root + phi / (2.0 * q);
    (value, dp, dq, s)
}

fn primal_objective(l_costs: &[f64], f: &CouplingFunctional, rho: f64, p: &[f64], phi: f64) -> f64 {
    let n = p.len();
    let mut total = f.eval_masses(p);
    for i in 0..n {
        let j = if i + 1 == n { 0 } else { i + 1 };
        total += edge_cost(rho, p[i], p[j], phi).0 + p[i] * l_costs[i];
    }
    total
}

fn primal_gradient(l_costs: &[f64], f: &CouplingFunctional, rho: f64, p: &[f64], phi: f64) -> (Vec<f64>, f64) {
    let n = p.len();
    let mut g = f.mass_gradient(p);
    let mut gphi = 0.0;
    for i in 0..n {
        let j = if i + 1 == n { 0 } else { i + 1 };
        let (_, dp, dq, s) = edge_cost(rho, p[i], p[j], phi);
        g[i] += dp + l_costs[i];
        g[j] += dq;
        gphi += s;
    }
    (g, gphi)
}

/// Minimizes the convex primal problem over cell masses `p` and the loop
/// flux `phi` directly, by accelerated projected gradient with backtracking
/// and adaptive restart. Requires `F` convex.
pub fn primal_oracle(l: &LagrangianSpec, f: &CouplingFunctional) -> Result<PrimalOracle> {
    let grid = l.grid();
    grid.ensure_same(&f.grid())?;
    if !f.is_convex() {
        return Err(Error::OracleInapplicable(format!(
            "coupling curvature {:?} is not convex",
            f.curvature()
        )));
    }
    let n = grid.n_cells();
    let rho = grid.base_rate();
    let costs = l.state_costs();
    let proj = |v: &[f64]| project_to_simplex(v, PRIMAL_FLOOR);

    let mut x = vec![1.0 / n as f64; n];
    let mut xphi = 0.0;
    let mut y = x.clone();
    let mut yphi = xphi;
    let mut t = 1.0f64;
    let mut lip = rho * n as f64;
    let mut fx = primal_objective(&costs, f, rho, &x, xphi);
    let mut history: Vec<f64> = vec![fx];
    let mut iterations = 0;
    for it in 0..400_000 {
        iterations = it + 1;
        let fy = primal_objective(&costs, f, rho, &y, yphi);
        let (gy, gphi) = primal_gradient(&costs, f, rho, &y, yphi);
        let (xn, phin, fxn) = loop {
            let trial: Vec<f64> = y.iter().zip(&gy).map(|(y, g)| y - g / lip).collect();
            let xn = proj(&trial);
            let phin = yphi - gphi / lip;
            let fxn = primal_objective(&costs, f, rho, &xn, phin);
            let mut lin = fy + gphi * (phin - yphi);
            let mut sq = (phin - yphi).powi(2);
            for ((a, b), g) in xn.iter().zip(&y).zip(&gy) {
                lin += g * (a - b);
                sq += (a - b) * (a - b);
            }
            if fxn.is_finite() && fxn <= lin + 0.5 * lip * sq + 1e-15 * fy.abs() {
                break (xn, phin, fxn);
            }
            lip *= 2.0;
        };
        if fxn > fx {
            // restart momentum
            t = 1.0;
            y = x.clone();
            yphi = xphi;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / tn;
        y = xn
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        y = proj(&y);
        yphi = phin + beta * (phin - xphi);
        x = xn;
        xphi = phin;
        fx = fxn;
        t = tn;
        lip *= 0.95;
        history.push(fx);
        let k = history.len();
        if k > 500 && (history[k - 501] - fx).abs() <= 1e-12 * fx.abs().max(1.0) {
            break;
        }
    }
    Ok(PrimalOracle {
        value: fx,
        m: ProbabilityGrid::from_masses(grid, &x)?,
        flux: xphi,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfg::solve_mfg;
    use crate::solvers::optimal_stationary_drift;
    use crate::torus::{LagKernel, TorusGrid};
    use std::f64::consts::PI;

    fn cosine_l(g: TorusGrid) -> LagrangianSpec {
        LagrangianSpec::with_offset(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos()).unwrap(), 0.5).unwrap()
    }

    #[test]
    fn edge_cost_gradients_match_finite_differences() {
        let rho = 800.0;
        for &(p, q, phi) in &[(0.01, 0.02, 0.3), (0.05, 0.004, -1.5), (0.03, 0.03, 0.0)] {
            let (_, dp, dq, ds) = edge_cost(rho, p, q, phi);
            let e = 1e-7;
            let fd = |dp_: f64, dq_: f64, dphi: f64| {
                (edge_cost(rho, p + dp_, q + dq_, phi + dphi).0 - edge_cost(rho, p - dp_, q - dq_, phi - dphi).0) / 2.0
            };
            assert!((fd(e * p, 0.0, 0.0) / (e * p) - dp).abs() < 1e-4 * dp.abs().max(1.0));
            assert!((fd(0.0, e * q, 0.0) / (e * q) - dq).abs() < 1e-4 * dq.abs().max(1.0));
            assert!((fd(0.0, 0.0, e) / e - ds).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_coupling_reduces_to_ergodic_control() {
        let g = TorusGrid::new(64).unwrap();
        let l = cosine_l(g);
        let f = CouplingFunctional::constant(g, 0.2);
        let eq = solve_mfg(&l, &f).unwrap();
        let p = solve_planner(&l, &f, &FixedPointOptions::default()).unwrap();
        assert!((p.e_min - (-eq.lambda0 + 0.2)).abs() < 1e-9);
        assert!(p.m_tilde.l1_distance(&eq.mu0).unwrap() < 1e-8);
    }

    #[test]
    fn planner_matches_primal_for_linear_coupling() {
        let g = TorusGrid::new(64).unwrap();
        let l = cosine_l(g);
        let f = CouplingFunctional::linear(GridField::from_fn(g, |x| (2.0 * PI * x).sin()).unwrap());
        let p = solve_planner(&l, &f, &FixedPointOptions::default()).unwrap();
        let o = primal_oracle(&l, &f).unwrap();
        assert!((p.e_min - o.value).abs() < 1e-6, "{} vs {}", p.e_min, o.value);
        assert!(o.flux.abs() < 1e-6);
        assert!(p.hjb_residual < 1e-7 && p.fp_residual < 1e-7);
        let d = optimal_stationary_drift(&l, &p.m_tilde).unwrap();
        assert!(d.alpha.max_abs_diff(&p.alpha_tilde).unwrap() < 1e-6);
    }

    #[test]
    fn flat_primal_value_is_constant() {
        let g = TorusGrid::new(32).unwrap();
        let l = LagrangianSpec::new(GridField::zeros(g));
        let o = primal_oracle(&l, &CouplingFunctional::constant(g, 0.4)).unwrap();
        assert!((o.value - 0.4).abs() < 1e-10);
    }

    #[test]
    fn primal_rejects_nonconvex() {
        let g = TorusGrid::new(32).unwrap();
        let k = LagKernel::from_fn(g, |d| (2.0 * PI * d).cos()).unwrap();
        let f = CouplingFunctional::convolution(k, -0.5).unwrap();
        assert!(matches!(
            primal_oracle(&cosine_l(g), &f),
            Err(Error::OracleInapplicable(_))
        ));
    }

    #[test]
    fn penalized_small_n_and_ladder_monotone() {
        let g = TorusGrid::new(64).unwrap();
        let l = cosine_l(g);
        let k = LagKernel::from_fn(g, |d| (2.0 * PI * d).cos()).unwrap();
        let f = CouplingFunctional::convolution(k, 0.5).unwrap();
        let eq = solve_mfg(&l, &f).unwrap();
        let tiny = solve_penalized(1e-6, &l, &f, &FixedPointOptions::default(), &[]).unwrap();
        assert!(tiny.m_n.l1_distance(&eq.mu0).unwrap() < 1e-5);
        let ladder = penalized_ladder(&l, &f, 4, &FixedPointOptions::default()).unwrap();
        for w in ladder.windows(2) {
            assert!(w[1].f_value >= w[0].f_value - 1e-6);
        }
        for r in &ladder {
            assert!(r.kinetic >= -eq.lambda0 - 1e-10);
            assert!(r.hjb_residual < 1e-7 && r.fp_residual < 1e-7, "{} {}", r.hjb_residual, r.fp_residual);
        }
    }
}
