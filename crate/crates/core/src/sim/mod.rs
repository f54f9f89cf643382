//! N-player game under trigger strategies.

mod engine;
mod experiments;
mod params;
mod replay;

pub use engine::{player_rng, simulate_run, step, PathState, RunOutcome};
pub use experiments::{
    deviation_row, deviation_suite, estimate_payoffs, sweep_csv, sweep_n, DeviationReport, DeviationRow, PayoffEstimate,
    PayoffReport, SweepRow, STAT_BUDGET_SIGMAS,
};
pub use params::{DeviationKind, DeviationPolicy, SimConfig, TriggerParams};
pub use replay::{replay_theta, REPLAY_HEADER};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{CouplingFunctional, GridDrift, GridField, LagrangianSpec, ProbabilityGrid, TorusGrid};
    use std::f64::consts::PI;

    fn setup() -> (LagrangianSpec, CouplingFunctional, TriggerParams) {
        let g = TorusGrid::new(32).unwrap();
        let l = LagrangianSpec::with_offset(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos()).unwrap(), 0.5)
            .unwrap();
        let f = CouplingFunctional::linear(GridField::from_fn(g, |x| 1.0 + (2.0 * PI * x).sin()).unwrap());
        let p = TriggerParams::new(
            1.0,
            0.02,
            GridDrift::zeros(g),
            GridDrift::from_fn(g, |x| (2.0 * PI * x).sin()).unwrap(),
            ProbabilityGrid::uniform(g),
            0.5,
        )
        .unwrap();
        (l, f, p)
    }

    fn cfg() -> SimConfig {
        SimConfig {
            n_players: 4,
            dt: 1e-2,
            horizon: 30.0,
            burn_in: 2.0,
            n_runs: 6,
            seed: 11,
            f_sample_interval: 0.1,
        }
    }

    #[test]
    fn replay_reproduces_theta() {
        let (l, f, p) = setup();
        let c = cfg();
        let mut fired = 0;
        for run in 0..6 {
            let mut buf = Vec::new();
            buf.extend_from_slice(REPLAY_HEADER.as_bytes());
            buf.push(b'\n');
            let out = simulate_run(&c, &p, &DeviationPolicy::conform(), &l, &f, run, Some((&mut buf, 1))).unwrap();
            let theta = replay_theta(buf.as_slice(), c.n_players, &p, c.dt, 1).unwrap();
            assert_eq!(theta, out.theta);
            fired += out.theta.is_some() as usize;
        }
        assert!(fired > 0);
    }

    #[test]
    fn estimates_are_schedule_independent() {
        let (l, f, p) = setup();
        let a = estimate_payoffs(&cfg(), &p, &DeviationPolicy::conform(), &l, &f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| estimate_payoffs(&cfg(), &p, &DeviationPolicy::conform(), &l, &f))
            .unwrap();
        assert_eq!(a.estimates, b.estimates);
        assert_eq!(a.json_lines().unwrap(), b.json_lines().unwrap());
        assert!(a.estimates.iter().all(|e| e.n_runs == 6 && e.stderr > 0.0));
    }

    #[test]
    fn suite_shapes() {
        let (l, f, p) = setup();
        let g = p.target.grid();
        let policies = [
            DeviationPolicy::conform(),
            DeviationPolicy::lazy(&p.conform),
            DeviationPolicy::custom(GridDrift::from_fn(g, |_| 2.0).unwrap()),
        ];
        let (rep, runs) = deviation_suite(&cfg(), &p, &policies, 1.5, 0.05, &l, &f).unwrap();
        assert_eq!(rep.rows.len(), 3);
        assert_eq!(runs.len(), 3);
        assert_eq!(rep.table().lines().count(), 4);
    }
}
