//! Stationary targets `(m̂, α̂)` with prescribed payoff, the trigger
//! tolerance `δ`, and the N-player payoff `e^N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mfg::MfgEquilibrium;
use crate::planner::{solve_penalized, FixedPointOptions, PenalizedSolution, PlannerSolution};
use crate::sampling::random_smooth_density;
use crate::solvers::{optimal_stationary_drift, solve_invariant_measure};
use crate::torus::{
    wasserstein1_circle, CouplingFunctional, GridDrift, GridField, LagrangianSpec, ProbabilityGrid,
};

/// Tolerance of the bisection on `value(λ) = e`.
pub const TARGET_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct HomotopyPoint {
    pub lambda: f64,
    pub phi: GridField,
    pub alpha: GridDrift,
    pub m: ProbabilityGrid,
    /// `∫ L(α^λ) m^λ`.
    pub kinetic: f64,
    pub f_value: f64,
    pub value: f64,
}

/// `φ^λ = (1-λ) ũ + λ uⁿ`, `α^λ = -Dφ^λ`, `m^λ` its invariant measure.
pub fn homotopy_point(
    lambda: f64,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    planner: &PlannerSolution,
    penalized: &PenalizedSolution,
) -> Result<HomotopyPoint> {
    let phi = planner.u_tilde.combine(1.0 - lambda, &penalized.u_n, lambda)?;
    let alpha = phi.neg_gradient();
    let m = solve_invariant_measure(&alpha)?.mu;
    let kinetic = l.stationary_cost(&m, &alpha)?;
    let f_value = f.eval(&m);
    Ok(HomotopyPoint {
        lambda,
        phi,
        alpha,
        m,
        kinetic,
        f_value,
        value: kinetic + f_value,
    })
}

/// `value(λ)` on `points` equally spaced values of `λ ∈ [0, 1]`.
pub fn lambda_scan(
    points: usize,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    planner: &PlannerSolution,
    penalized: &PenalizedSolution,
) -> Result<Vec<HomotopyPoint>> {
    let points = points.max(2);
    (0..points)
        .into_par_iter()
        .map(|k| homotopy_point(k as f64 / (points - 1) as f64, l, f, planner, penalized))
        .collect()
}

#[derive(Clone, Debug)]
pub struct TargetPair {
    pub e: f64,
    pub lambda_star: f64,
    pub m_hat: ProbabilityGrid,
    pub alpha_hat: GridDrift,
    pub phi: GridField,
    pub value: f64,
    pub kinetic: f64,
    pub f_value: f64,
    pub bisection_steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetSummary {
    pub e: f64,
    pub lambda_star: f64,
    pub value: f64,
    pub kinetic: f64,
    pub f_value: f64,
    pub bisection_steps: usize,
    pub max_abs_drift: f64,
    pub min_density: f64,
}

impl TargetPair {
    pub fn summary(&self) -> TargetSummary {
        TargetSummary {
            e: self.e,
            lambda_star: self.lambda_star,
            value: self.value,
            kinetic: self.kinetic,
            f_value: self.f_value,
            bisection_steps: self.bisection_steps,
            max_abs_drift: self.alpha_hat.max_abs(),
            min_density: self.m_hat.min_density(),
        }
    }

    fn from_point(e: f64, p: HomotopyPoint, steps: usize) -> Self {
        TargetPair {
            e,
            lambda_star: p.lambda,
            m_hat: p.m,
            alpha_hat: p.alpha,
            phi: p.phi,
            value: p.value,
            kinetic: p.kinetic,
            f_value: p.f_value,
            bisection_steps: steps,
        }
    }
}

/// Finds `λ*` with `|value(λ*) - e| ≤ 1e-5` by bisection between the
/// planner (`λ = 0`, value `e_min`) and the penalized solution (`λ = 1`).
pub fn build_target(
    e: f64,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    planner: &PlannerSolution,
    penalized: &PenalizedSolution,
) -> Result<TargetPair> {
    let e_max = -ergodic_constant(l)? + f.max().value;
    if !(e >= planner.e_min - TARGET_TOLERANCE) || e >= e_max {
        return Err(Error::TargetOutOfBand {
            target: e,
            e_min: planner.e_min,
            e_max,
        });
    }
    let start = homotopy_point(0.0, l, f, planner, penalized)?;
    if (start.value - e).abs() <= TARGET_TOLERANCE {
        return Ok(TargetPair::from_point(e, start, 0));
    }
    let end = homotopy_point(1.0, l, f, planner, penalized)?;
    if !(end.value > e) {
        return Err(Error::BracketViolation {
            value_one: end.value,
            target: e,
        });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut gap = f64::INFINITY;
    for step in 1..=60 {
        let mid = 0.5 * (lo + hi);
        let p = homotopy_point(mid, l, f, planner, penalized)?;
        gap = (p.value - e).abs();
        if gap <= TARGET_TOLERANCE {
            return Ok(TargetPair::from_point(e, p, step));
        }
        if p.value < e {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionFailure { iterations: 60, gap })
}

fn ergodic_constant(l: &LagrangianSpec) -> Result<f64> {
    Ok(crate::solvers::solve_ergodic_hjb(l, &GridField::zeros(l.grid()))?.lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub samples: usize,
    pub holdout: usize,
    /// Largest mixing weight of a perturbation.
    pub s_max: f64,
    pub s_min: f64,
    pub cap: f64,
    pub floor: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            holdout: 50,
            s_max: 0.5,
            s_min: 1e-4,
            cap: 0.1,
            floor: 1e-4,
            seed: 0xde17a,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeSample {
    pub w1: f64,
    pub cost: f64,
    pub spike: bool,
    pub s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderStep {
    pub delta: f64,
    pub samples_within: usize,
    pub worst_drop: f64,
    pub admissible: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DeltaCalibration {
    pub delta: f64,
    pub epsilon: f64,
    pub base_cost: f64,
    /// The calibration is empirical, never certified.
    pub heuristic: bool,
    pub ladder: Vec<LadderStep>,
    pub holdout_within: usize,
    pub holdout_violations: usize,
    pub samples: Vec<ProbeSample>,
}

fn probe_samples(
    target: &TargetPair,
    l: &LagrangianSpec,
    count: usize,
    opts: &CalibrationOptions,
    stream: u64,
) -> Result<Vec<ProbeSample>> {
    let grid = target.m_hat.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let (lo, hi) = (opts.s_min.ln(), opts.s_max.ln());
    let draws: Vec<(ProbabilityGrid, bool, f64)> = (0..count)
        .map(|k| {
            let spike = k % 2 == 1;
            let q = if spike {
                ProbabilityGrid::point_mass(grid, rng.random_range(0..grid.n_cells())).expect("cell in range")
            } else {
                random_smooth_density(grid, &mut rng, 4, 1.0)
            };
            let s = (lo + (hi - lo) * rng.random::<f64>()).exp();
            (q, spike, s)
        })
        .collect();
    draws
        .into_par_iter()
        .map(|(q, spike, s)| {
            let m = target.m_hat.mix(&q, s)?;
            Ok(ProbeSample {
                w1: wasserstein1_circle(&m, &target.m_hat)?,
                cost: optimal_stationary_drift(l, &m)?.cost,
                spike,
                s,
            })
        })
        .collect()
}

/// Largest `δ` in `cap · 2^{-k}` such that every probed perturbation `m'`
/// of `m̂` within `W₁ ≤ δ` costs at least `c(m̂) - ε/3`.
pub fn calibrate_delta(
    epsilon: f64,
    target: &TargetPair,
    l: &LagrangianSpec,
    opts: &CalibrationOptions,
) -> Result<DeltaCalibration> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon {epsilon} must be positive")));
    }
    let base_cost = optimal_stationary_drift(l, &target.m_hat)?.cost;
    let samples = probe_samples(target, l, opts.samples, opts, 1)?;
    let slack = epsilon / 3.0;
    let mut ladder = Vec::new();
    let mut chosen = None;
    let mut delta = opts.cap;
    while delta >= opts.floor {
        let within: Vec<&ProbeSample> = samples.iter().filter(|s| s.w1 <= delta).collect();
        let worst_drop = within
            .iter()
            .map(|s| base_cost - s.cost)
            .fold(f64::NEG_INFINITY, f64::max);
        let admissible = within.iter().all(|s| s.cost >= base_cost - slack);
        ladder.push(LadderStep {
            delta,
            samples_within: within.len(),
            worst_drop,
            admissible,
        });
        if admissible {
            chosen = Some(delta);
            break;
        }
        delta *= 0.5;
    }
    let delta = chosen.ok_or(Error::NoAdmissibleDelta { floor: opts.floor })?;
    let holdout = probe_samples(target, l, opts.holdout, opts, 2)?;
    let within: Vec<&ProbeSample> = holdout.iter().filter(|s| s.w1 <= delta).collect();
    let holdout_violations = within.iter().filter(|s| s.cost < base_cost - slack).count();
    Ok(DeltaCalibration {
        delta,
        epsilon,
        base_cost,
        heuristic: true,
        ladder,
        holdout_within: within.len(),
        holdout_violations,
        samples,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum ExpectationMethod {
    /// Exact expectation from the kernel moments.
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct PayoffEN {
    pub n_players: usize,
    pub e_n: f64,
    pub kinetic: f64,
    pub expectation: f64,
    pub stderr: f64,
}

/// Monte Carlo `E[F(empirical of M iid draws from m)]` with its standard error.
pub fn expected_empirical_mc(
    f: &CouplingFunctional,
    m: &ProbabilityGrid,
    sample_size: usize,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let p = m.masses();
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for v in &p {
        acc += v;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![0usize; sample_size];
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        for c in cells.iter_mut() {
            let x = rng.random::<f64>() * acc;
            *c = cdf.partition_point(|v| *v <= x).min(p.len() - 1);
        }
        let v = f.eval_cells(&cells);
        sum += v;
        sum2 += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `e^N = ∫L(α̂)m̂ + E[F(empirical of N-1 iid draws from m̂)]`.
pub fn compute_en(
    n_players: usize,
    target: &TargetPair,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    method: ExpectationMethod,
) -> Result<PayoffEN> {
    if n_players < 2 {
        return Err(Error::InvalidInput(format!("need N ≥ 2 players, got {n_players}")));
    }
    let kinetic = l.stationary_cost(&target.m_hat, &target.alpha_hat)?;
    let others = n_players - 1;
    let (expectation, stderr) = match method {
        ExpectationMethod::ClosedForm => (f.expected_empirical(&target.m_hat, others), 0.0),
        ExpectationMethod::MonteCarlo { draws, seed } => {
            expected_empirical_mc(f, &target.m_hat, others, draws, seed)
        }
    };
    Ok(PayoffEN {
        n_players,
        e_n: kinetic + expectation,
        kinetic,
        expectation,
        stderr,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RungCheck {
    pub n: f64,
    pub f_value: f64,
    pub value_one: f64,
    pub bracket: bool,
    pub e_n: Option<f64>,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub penalized: PenalizedSolution,
    pub target: TargetPair,
    pub e_n: PayoffEN,
    pub rungs: Vec<RungCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub margin: f64,
    pub max_exponent: u32,
    pub fixed_point: FixedPointOptions,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            margin: 0.01,
            max_exponent: 14,
            fixed_point: FixedPointOptions::default(),
        }
    }
}

/// Smallest `n` on the ladder `1, 2, 4, ...` whose punishment makes the
/// target payoff credible for `N` players:
/// `e^N ≤ -λ0 + E[F(empirical of N-1 draws from mⁿ)] - margin`.
pub fn select_penalization(
    e_target: f64,
    n_players: usize,
    l: &LagrangianSpec,
    f: &CouplingFunctional,
    mfg: &MfgEquilibrium,
    planner: &PlannerSolution,
    opts: &SelectionOptions,
) -> Result<Selection> {
    if e_target >= mfg.e_max || e_target < planner.e_min - TARGET_TOLERANCE {
        return Err(Error::TargetOutOfBand {
            target: e_target,
            e_min: planner.e_min,
            e_max: mfg.e_max,
        });
    }
    let mut rungs = Vec::new();
    let mut previous: Option<PenalizedSolution> = None;
    for k in 0..=opts.max_exponent {
        let n = (1u64 << k) as f64;
        let warm: Vec<ProbabilityGrid> = previous.iter().map(|p| p.m_n.clone()).collect();
        let pen = solve_penalized(n, l, f, &opts.fixed_point, &warm)?;
        let bound = -mfg.lambda0 + f.expected_empirical(&pen.m_n, n_players - 1) - opts.margin;
        let value_one = pen.value();
        let mut check = RungCheck {
            n,
            f_value: pen.f_value,
            value_one,
            bracket: value_one > e_target,
            e_n: None,
            bound,
            satisfied: false,
        };
        if check.bracket {
            let target = build_target(e_target, l, f, planner, &pen)?;
            let e_n = compute_en(n_players, &target, l, f, ExpectationMethod::ClosedForm)?;
            check.e_n = Some(e_n.e_n);
            check.satisfied = e_n.e_n <= bound;
            rungs.push(check);
            if rungs.last().is_some_and(|c| c.satisfied) {
                return Ok(Selection {
                    penalized: pen,
                    target,
                    e_n,
                    rungs,
                });
            }
        } else {
            rungs.push(check);
        }
        previous = Some(pen);
    }
    Err(Error::LadderExhausted {
        last_n: (1u64 << opts.max_exponent) as f64,
        reason: format!(
            "no rung satisfies the credibility condition for N = {n_players}; e = {e_target} is too close to e_max = {}",
            mfg.e_max
        ),
    })
}
