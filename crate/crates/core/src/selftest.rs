//! Fast self-check of the exact examples and the cheap oracle equivalences.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::Serialize;

use crate::config::{ExperimentConfig, PRESETS};
use crate::error::Result;
use crate::mfg::solve_mfg;
use crate::planner::{primal_oracle, solve_planner, FixedPointOptions};
use crate::sim::{
    replay_theta, simulate_run, step, DeviationPolicy, PathState, SimConfig, TriggerParams, REPLAY_HEADER,
};
use crate::solvers::{
    closed_measure_min_oracle, principal_eigen_oracle, solve_ergodic_hjb_with, solve_invariant_measure,
    uniform_action_grid, HjbOptions,
};
use crate::target::expected_empirical_mc;
use crate::torus::{
    empirical_measure, project_to_torus, wasserstein1_circle, CouplingFunctional, GridDrift, GridField,
    LagKernel, LagrangianSpec, ProbabilityGrid, TorusGrid,
};

#[derive(Clone, Debug, Default)]
pub struct SelftestOptions {
    /// Loosens the HJB tolerance to `1e-1`, which must make the harness fail.
    pub corrupt_tolerance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestSummary {
    pub checks: Vec<SelftestCheck>,
}

impl SelftestSummary {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{} {:<28} {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.pass).count(),
            self.checks.len()
        );
        out
    }
}

struct Checks(Vec<SelftestCheck>);

impl Checks {
    fn add(&mut self, name: &'static str, pass: bool, detail: String) {
        self.0.push(SelftestCheck { name, pass, detail });
    }

    /// Records a check whose computation may itself fail.
    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) {
        match f() {
            Ok((pass, detail)) => self.add(name, pass, detail),
            Err(e) => self.add(name, false, format!("error: {e}")),
        }
    }
}

fn cos_instance(n: usize) -> Result<(LagrangianSpec, CouplingFunctional)> {
    let g = TorusGrid::new(n)?;
    let l = LagrangianSpec::with_offset(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos())?, 0.5)?;
    let f = CouplingFunctional::convolution(LagKernel::from_fn(g, |d| (2.0 * PI * d).cos())?, 0.5)?;
    Ok((l, f))
}

pub fn selftest(opts: &SelftestOptions) -> SelftestSummary {
    let mut c = Checks(Vec::new());

    let cases = [(0.25, 0.25), (-0.25, 0.75), (3.5, 0.5)];
    let bad: Vec<_> = cases.iter().filter(|(x, y)| project_to_torus(*x) != *y).collect();
    c.add("project-to-torus", bad.is_empty(), format!("{} of 3 exact", 3 - bad.len()));

    c.run("coupling-examples", || {
        let g = TorusGrid::new(64)?;
        let u = ProbabilityGrid::uniform(g);
        let lin = CouplingFunctional::linear(GridField::from_fn(g, |x| 1.0 + x)?);
        let mean = 1.0 + 0.5;
        let (_, f) = cos_instance(64)?;
        let bump = ProbabilityGrid::point_mass(g, 10)?;
        let e1 = (lin.eval(&u) - mean).abs();
        let e2 = f.eval(&u).abs();
        let e3 = (f.eval(&bump) - 0.5).abs();
        Ok((
            e1 < 1e-12 && e2 < 1e-12 && e3 < 1e-12,
            format!("errors {e1:.1e}, {e2:.1e}, {e3:.1e}"),
        ))
    });

    c.run("wasserstein-examples", || {
        let g = TorusGrid::new(64)?;
        let a = empirical_measure(g, &[0.1])?;
        let b = empirical_measure(g, &[0.3])?;
        let anti = empirical_measure(g, &[0.6])?;
        let d1 = wasserstein1_circle(&a, &b)?;
        let d2 = wasserstein1_circle(&a, &anti)?;
        let d0 = wasserstein1_circle(&a, &a)?;
        let (x, y) = (g.node(g.nearest_cell(0.1)), g.node(g.nearest_cell(0.3)));
        let z = g.node(g.nearest_cell(0.6));
        let e = (d1 - (y - x)).abs() + (d2 - (z - x).min(1.0 - (z - x))).abs() + d0;
        Ok((e < 1e-12, format!("total error {e:.1e}")))
    });

    let hjb_opts = HjbOptions {
        tol: if opts.corrupt_tolerance { 1e-1 } else { HjbOptions::default().tol },
        ..HjbOptions::default()
    };
    c.run("hjb-eigen-agreement", || {
        let (l, _) = cos_instance(128)?;
        let zero = GridField::zeros(l.grid());
        let s = solve_ergodic_hjb_with(&l, &zero, &hjb_opts)?;
        let e = principal_eigen_oracle(&l, &zero)?;
        let gap = (s.lambda - e.lambda).abs();
        Ok((gap <= 1e-8, format!("|Δλ| = {gap:.2e}")))
    });

    c.run("gibbs-invariant-measure", || {
        let (l, _) = cos_instance(128)?;
        let s = solve_ergodic_hjb_with(&l, &GridField::zeros(l.grid()), &hjb_opts)?;
        let mu = solve_invariant_measure(&s.u.neg_gradient())?.mu;
        let gibbs = ProbabilityGrid::gibbs(&s.u, 2.0)?;
        let d = mu.l1_distance(&gibbs)?;
        Ok((d <= 1e-8, format!("L1 = {d:.2e}")))
    });

    c.run("mfg-residuals", || {
        let (l, f) = cos_instance(128)?;
        let eq = solve_mfg(&l, &f)?;
        Ok((
            eq.hjb_residual < 1e-8 && eq.fp_residual < 1e-8 && eq.e_max_certified,
            format!("hjb {:.1e}, fp {:.1e}", eq.hjb_residual, eq.fp_residual),
        ))
    });

    c.run("closed-measure-duality", || {
        let (l, _) = cos_instance(32)?;
        let e = principal_eigen_oracle(&l, &GridField::zeros(l.grid()))?;
        let v = closed_measure_min_oracle(&l, &uniform_action_grid(2.0, 41))?;
        let gap = (v + e.lambda).abs();
        Ok((gap <= 0.02, format!("|min + λ0| = {gap:.2e}")))
    });

    c.run("planner-primal-agreement", || {
        let (l, f) = cos_instance(32)?;
        let p = solve_planner(&l, &f, &FixedPointOptions::default())?;
        let o = primal_oracle(&l, &f)?;
        let gap = (p.e_min - o.value).abs();
        Ok((gap <= 1e-4, format!("|Δe_min| = {gap:.2e}")))
    });

    c.run("empirical-expectation", || {
        let (_, f) = cos_instance(32)?;
        let m = ProbabilityGrid::gibbs(&GridField::from_fn(f.grid(), |x| (2.0 * PI * x).cos())?, 1.0)?;
        let exact = f.expected_empirical(&m, 7);
        let (mc, se) = expected_empirical_mc(&f, &m, 7, 20_000, 5);
        let z = (exact - mc).abs() / se;
        Ok((z <= 4.0, format!("{z:.2} standard errors")))
    });

    c.run("brownian-scaling", || {
        let g = TorusGrid::new(16)?;
        let p = TriggerParams::new(
            1e9,
            1.0,
            GridDrift::zeros(g),
            GridDrift::zeros(g),
            ProbabilityGrid::uniform(g),
            1.0,
        )?;
        let dev = DeviationPolicy::conform();
        let mut s = PathState::new(g, 1, 1e-3, 9, 0);
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = s.positions[0];
            step(&mut s, &p, &dev);
            let mut d = s.positions[0] - x;
            d -= d.round();
            sq += d * d;
        }
        let ratio = sq / n as f64 / 1e-3;
        Ok(((ratio - 1.0).abs() <= 0.05, format!("variance / dt = {ratio:.4}")))
    });

    c.run("trigger-replay", || {
        let (l, f) = cos_instance(32)?;
        let g = l.grid();
        let p = TriggerParams::new(
            2.0,
            0.02,
            GridDrift::zeros(g),
            GridDrift::zeros(g),
            ProbabilityGrid::uniform(g),
            0.5,
        )?;
        let cfg = SimConfig {
            n_players: 4,
            dt: 1e-2,
            horizon: 20.0,
            burn_in: 1.0,
            n_runs: 1,
            seed: 3,
            f_sample_interval: 0.1,
        };
        let mut matched = 0;
        let mut fired = 0;
        for run in 0..4 {
            let mut buf = format!("{REPLAY_HEADER}\n").into_bytes();
            let out = simulate_run(&cfg, &p, &DeviationPolicy::conform(), &l, &f, run, Some((&mut buf, 1)))?;
            let theta = replay_theta(buf.as_slice(), cfg.n_players, &p, cfg.dt, 1)?;
            matched += (theta == out.theta) as usize;
            fired += out.theta.is_some_and(|t| t >= p.grace) as usize;
        }
        Ok((matched == 4 && fired > 0, format!("{matched} of 4 replays exact, {fired} fired")))
    });

    c.run("config-round-trip", || {
        let mut ok = 0;
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name)?;
            ok += (ExperimentConfig::from_toml(&cfg.to_toml()?)? == cfg) as usize;
        }
        Ok((ok == PRESETS.len(), format!("{ok} of {} presets", PRESETS.len())))
    });

    SelftestSummary { checks: c.0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_and_corrupted() {
        let a = selftest(&SelftestOptions::default());
        assert!(a.pass(), "{}", a.render());
        let b = selftest(&SelftestOptions { corrupt_tolerance: true });
        assert!(!b.pass());
        assert!(b.failed().contains(&"hjb-eigen-agreement"), "{}", b.render());
        assert_eq!(a, selftest(&SelftestOptions::default()));
    }
}
