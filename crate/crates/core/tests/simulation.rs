//! Long-horizon probes of the simulated game on a 128-cell grid.

use std::f64::consts::PI;
use std::sync::OnceLock;

use ergofolk::mfg::{solve_mfg, MfgEquilibrium};
use ergofolk::planner::{solve_planner, FixedPointOptions};
use ergofolk::sim::*;
use ergofolk::target::{select_penalization, Selection, SelectionOptions};
use ergofolk::torus::*;

struct Instance {
    l: LagrangianSpec,
    f: CouplingFunctional,
    mfg: MfgEquilibrium,
    sel: Selection,
}

fn instance() -> &'static Instance {
    static CELL: OnceLock<Instance> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = TorusGrid::new(128).unwrap();
        let l = LagrangianSpec::with_offset(GridField::from_fn(g, |x| 0.5 * (2.0 * PI * x).cos()).unwrap(), 0.5)
            .unwrap();
        let f = CouplingFunctional::convolution(LagKernel::from_fn(g, |d| (2.0 * PI * d).cos()).unwrap(), 0.5)
            .unwrap();
        let mfg = solve_mfg(&l, &f).unwrap();
        let planner = solve_planner(&l, &f, &FixedPointOptions::default()).unwrap();
        let e = 0.5 * (planner.e_min + mfg.e_max);
        let sel = select_penalization(e, 8, &l, &f, &mfg, &planner, &SelectionOptions::default()).unwrap();
        Instance { l, f, mfg, sel }
    })
}

fn params(grace: f64, delta: f64) -> TriggerParams {
    let i = instance();
    TriggerParams::new(
        grace,
        delta,
        i.sel.target.alpha_hat.clone(),
        i.sel.penalized.alpha_n.clone(),
        i.sel.target.m_hat.clone(),
        1.0,
    )
    .unwrap()
}

fn long_run(n_players: usize) -> SimConfig {
    SimConfig {
        n_players,
        dt: 1e-3,
        horizon: 2000.0,
        burn_in: 100.0,
        n_runs: 1,
        seed: 77,
        f_sample_interval: 0.1,
    }
}

#[test]
fn occupation_converges_to_target_without_trigger() {
    let i = instance();
    let out = simulate_run(&long_run(4), &params(1e9, 1.0), &DeviationPolicy::conform(), &i.l, &i.f, 0, None).unwrap();
    assert!(out.theta.is_none());
    for d in &out.final_distance {
        assert!(*d <= 0.05, "W1 to target {d}");
    }
}

#[test]
fn punished_players_occupy_penalized_measure() {
    let i = instance();
    let p = params(1.0, 1e-12);
    let out = simulate_run(&long_run(4), &p, &DeviationPolicy::conform(), &i.l, &i.f, 0, None).unwrap();
    assert_eq!(out.theta, Some(1.0));
    let post = out.post_trigger.unwrap();
    assert_eq!(post.len(), 3);
    for m in &post {
        let d = wasserstein1_circle(m, &i.sel.penalized.m_n).unwrap();
        assert!(d <= 0.05, "W1 to mⁿ {d}");
    }
}

#[test]
fn running_cost_never_beats_ergodic_constant() {
    let i = instance();
    let floor = -i.mfg.lambda0 - 0.05;
    let cfg = SimConfig {
        horizon: 500.0,
        ..long_run(3)
    };
    for (policy, p) in [
        (DeviationPolicy::conform(), params(1e9, 1.0)),
        (DeviationPolicy::lazy(&i.sel.target.alpha_hat), params(1.0, 1e-12)),
        (DeviationPolicy::selfish(&i.mfg.u0), params(1e9, 1.0)),
    ] {
        let out = simulate_run(&cfg, &p, &policy, &i.l, &i.f, 0, None).unwrap();
        for a in &out.l_average {
            assert!(*a >= floor, "{:?}: {a} < {floor}", policy.kind);
        }
    }
}

#[test]
fn conforming_players_are_exchangeable() {
    let i = instance();
    let cfg = SimConfig {
        n_players: 6,
        horizon: 200.0,
        burn_in: 20.0,
        n_runs: 8,
        ..long_run(6)
    };
    let rep = estimate_payoffs(&cfg, &params(1e9, 1.0), &DeviationPolicy::conform(), &i.l, &i.f).unwrap();
    let means: Vec<f64> = rep.estimates.iter().map(|e| e.mean).collect();
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    for e in &rep.estimates {
        assert!((e.mean - grand).abs() <= 4.0 * e.stderr, "{} vs {grand} ± {}", e.mean, e.stderr);
    }
    assert_eq!(rep.p_trigger(), 0.0);
}

#[test]
fn lazy_deviation_is_detected() {
    let i = instance();
    let uniform = ProbabilityGrid::uniform(i.l.grid());
    let gap = wasserstein1_circle(&uniform, &i.sel.target.m_hat).unwrap();
    // the lazy player's occupation tends to the uniform measure
    let p = params(50.0, 0.5 * gap);
    let cfg = SimConfig {
        horizon: 200.0,
        burn_in: 10.0,
        n_runs: 4,
        ..long_run(4)
    };
    let rep = estimate_payoffs(&cfg, &p, &DeviationPolicy::lazy(&p.conform), &i.l, &i.f).unwrap();
    assert_eq!(rep.p_trigger(), 1.0);
}
