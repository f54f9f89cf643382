use std::f64::consts::PI;

use ergofolk::config::{Auto, ExperimentConfig};
use ergofolk::mfg::solve_mfg;
use ergofolk::planner::{solve_planner, FixedPointOptions};
use ergofolk::solvers::{
    fp_residual, hjb_residual, optimal_stationary_drift, principal_eigen_oracle, solve_ergodic_hjb,
    solve_invariant_measure,
};
use ergofolk::torus::*;
use proptest::prelude::*;

const N: usize = 32;

fn grid() -> TorusGrid {
    TorusGrid::new(N).unwrap()
}

fn measure(floor: f64) -> impl Strategy<Value = ProbabilityGrid> {
    prop::collection::vec(0.0f64..1.0, N).prop_map(move |w| {
        let w: Vec<f64> = w.into_iter().map(|x| x * x * x + floor).collect();
        let total: f64 = w.iter().sum();
        ProbabilityGrid::from_masses(grid(), &w.iter().map(|x| x / total).collect::<Vec<_>>()).unwrap()
    })
}

fn trig_field() -> impl Strategy<Value = GridField> {
    prop::collection::vec(-1.0f64..1.0, 4).prop_map(|c| {
        GridField::from_fn(grid(), |x| {
            c[0] * (2.0 * PI * x).cos() + c[1] * (2.0 * PI * x).sin() + c[2] * (4.0 * PI * x).cos()
                + c[3] * (6.0 * PI * x).sin()
        })
        .unwrap()
    })
}

fn coupling() -> impl Strategy<Value = CouplingFunctional> {
    (trig_field(), prop::collection::vec(-1.0f64..1.0, 3), -1.0f64..1.0).prop_map(|(g, k, w)| {
        let kernel = LagKernel::from_fn(grid(), |d| {
            k[0] * (2.0 * PI * d).cos() + k[1] * (4.0 * PI * d).cos() + k[2] * (6.0 * PI * d).cos()
        })
        .unwrap();
        CouplingFunctional::sum(
            grid(),
            vec![CouplingTerm::Linear(g), CouplingTerm::Convolution { kernel, weight: w }],
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_lands_in_unit_interval(x in -1e6f64..1e6) {
        let y = project_to_torus(x);
        prop_assert!((0.0..1.0).contains(&y));
        let k = (x - y).round();
        prop_assert!((x - y - k).abs() < 1e-6);
    }

    #[test]
    fn w1_is_a_metric(a in measure(0.0), b in measure(0.0), c in measure(0.0)) {
        let ab = wasserstein1_circle(&a, &b).unwrap();
        let ba = wasserstein1_circle(&b, &a).unwrap();
        let bc = wasserstein1_circle(&b, &c).unwrap();
        let ac = wasserstein1_circle(&a, &c).unwrap();
        prop_assert!(ab >= 0.0 && ab <= 0.5 + 1e-12);
        prop_assert!((ab - ba).abs() < 1e-14);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert!(wasserstein1_circle(&a, &a).unwrap() < 1e-15);
    }

    #[test]
    fn w1_is_rotation_invariant(a in measure(0.0), b in measure(0.0), shift in 0usize..N) {
        let rot = |m: &ProbabilityGrid| {
            let p = m.masses();
            let q: Vec<f64> = (0..N).map(|i| p[(i + shift) % N]).collect();
            ProbabilityGrid::from_masses(grid(), &q).unwrap()
        };
        let d = wasserstein1_circle(&a, &b).unwrap();
        let r = wasserstein1_circle(&rot(&a), &rot(&b)).unwrap();
        prop_assert!((d - r).abs() < 1e-12);
    }

    #[test]
    fn coupling_is_nonnegative(f in coupling(), m in measure(0.0), cell in 0usize..N) {
        prop_assert!(f.eval(&m) >= -1e-12);
        prop_assert!(f.eval(&ProbabilityGrid::point_mass(grid(), cell).unwrap()) >= -1e-12);
    }

    /// `F(m1) - F(m0) = ∫0^1 ∫ δF/δm(m_s, y) (m1 - m0)(dy) ds`, by Simpson's
    /// rule, which is exact for the quadratic functionals used here.
    #[test]
    fn flat_derivative_integral_identity(f in coupling(), m0 in measure(0.0), m1 in measure(0.0)) {
        let diff: Vec<f64> = m1.masses().iter().zip(m0.masses()).map(|(a, b)| a - b).collect();
        let pair = |s: f64| {
            let m = m0.mix(&m1, s).unwrap();
            f.flat_derivative(&m).values().iter().zip(&diff).map(|(d, q)| d * q).sum::<f64>()
        };
        let integral = (pair(0.0) + 4.0 * pair(0.5) + pair(1.0)) / 6.0;
        prop_assert!((f.eval(&m1) - f.eval(&m0) - integral).abs() < 1e-8);
    }

    #[test]
    fn hjb_matches_eigen_oracle(v in trig_field()) {
        let l = LagrangianSpec::new(v);
        let zero = GridField::zeros(grid());
        let s = solve_ergodic_hjb(&l, &zero).unwrap();
        let e = principal_eigen_oracle(&l, &zero).unwrap();
        prop_assert!((s.lambda - e.lambda).abs() < 1e-8);
        prop_assert!(hjb_residual(&l, &zero, &s.u, s.lambda).unwrap() < 1e-8);
        prop_assert!(s.u.integral().abs() < 1e-10);
    }

    #[test]
    fn gradient_drift_has_gibbs_measure(u in trig_field()) {
        let mu = solve_invariant_measure(&u.neg_gradient()).unwrap().mu;
        let gibbs = ProbabilityGrid::gibbs(&u, 2.0).unwrap();
        prop_assert!(mu.l1_distance(&gibbs).unwrap() < 1e-8);
    }

    #[test]
    fn invariant_measure_is_stationary(a in trig_field()) {
        let drift = GridDrift::new(grid(), a.values().to_vec()).unwrap();
        let mu = solve_invariant_measure(&drift).unwrap().mu;
        prop_assert!(fp_residual(&mu, &drift).unwrap() < 1e-8);
        prop_assert!(mu.min_density() > 0.0);
    }

    /// No stationary pair beats the ergodic constant.
    #[test]
    fn stationary_cost_bounded_by_ergodic_constant(v in trig_field(), m in measure(1e-3)) {
        let l = LagrangianSpec::new(v);
        let lambda0 = solve_ergodic_hjb(&l, &GridField::zeros(grid())).unwrap().lambda;
        let cost = optimal_stationary_drift(&l, &m).unwrap().cost;
        prop_assert!(cost >= -lambda0 - 1e-9);
    }

    #[test]
    fn leave_one_out_is_exact(f in coupling(), cells in prop::collection::vec(0usize..N, 2..12)) {
        let loo = f.leave_one_out(&cells);
        for i in 0..cells.len() {
            let mut others = cells.clone();
            others.remove(i);
            prop_assert!((loo[i] - f.eval_cells(&others)).abs() < 1e-12);
        }
    }

    #[test]
    fn config_round_trip(n in 8usize..512, e in 0.0f64..2.0, seed in any::<u64>(), runs in 1usize..100) {
        let mut cfg = ExperimentConfig::preset("paper-instance").unwrap();
        cfg.n_cells = n;
        cfg.e = Auto::Value(e);
        cfg.seed = seed;
        cfg.n_runs = runs;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn grid_io_round_trip(m in measure(0.0), v in trig_field()) {
        prop_assert_eq!(ProbabilityGrid::from_csv(&m.to_csv()).unwrap(), m.clone());
        prop_assert_eq!(ProbabilityGrid::from_json(&m.to_json()).unwrap(), m);
        prop_assert_eq!(GridField::from_csv(&v.to_csv()).unwrap(), v.clone());
        let d = v.neg_gradient();
        prop_assert_eq!(GridDrift::from_json(&d.to_json()).unwrap(), d);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// `e_min ≤ e_MFG ≤ e_max` on random instances.
    #[test]
    fn payoff_band_is_ordered(v in trig_field(), f in coupling()) {
        let l = LagrangianSpec::new(v);
        let eq = solve_mfg(&l, &f).unwrap();
        let p = solve_planner(&l, &f, &FixedPointOptions { starts: 3, ..FixedPointOptions::default() }).unwrap();
        prop_assert!(p.e_min <= eq.e_mfg + 1e-7, "{} > {}", p.e_min, eq.e_mfg);
        prop_assert!(eq.e_mfg <= eq.e_max + 1e-12);
    }
}
