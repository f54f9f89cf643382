use crate::error::{Error, Result};
use crate::torus::LagrangianSpec;

/// `k` equally spaced actions on `[-a_max, a_max]`.
pub fn uniform_action_grid(a_max: f64, k: usize) -> Vec<f64> {
    assert!(k >= 2);
    (0..k)
        .map(|j| -a_max + 2.0 * a_max * j as f64 / (k - 1) as f64)
        .collect()
}

/// Minimal average cost of the controlled walk whose generator is the
/// centred discretization of `½Δ + a·D`, i.e. the minimum of `∫L dν` over
/// discrete closed measures `ν` supported on `actions`.
///
/// Uniformized at rate `2/h^2` (so every state keeps probability ½ of
/// staying put) and solved by relative value iteration.
pub fn closed_measure_min_oracle(l: &LagrangianSpec, actions: &[f64]) -> Result<f64> {
    let g = l.grid();
    let n = g.n_cells();
    let h = g.h();
    if actions.is_empty() {
        return Err(Error::InvalidInput("empty action grid".into()));
    }
    if let Some(a) = actions.iter().find(|a| a.abs() * h > 1.0) {
        return Err(Error::InvalidInput(format!(
            "action {a} too large for h = {h}: centred rates turn negative"
        )));
    }
    let unif = 2.0 / (h * h);
    // per action: (step cost excluding ℓ, p_right, p_left)
    let moves: Vec<(f64, f64, f64)> = actions
        .iter()
        .map(|&a| (0.5 * a * a / unif, 0.25 + 0.25 * a * h, 0.25 - 0.25 * a * h))
        .collect();
    let state: Vec<f64> = l.state_costs().iter().map(|c| c / unif).collect();

    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let max_sweeps = 2_000_000;
    let mut span = f64::INFINITY;
    for _ in 0..max_sweeps {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let (vr, vl) = (v[g.next(i)], v[g.prev(i)]);
            let best = moves
                .iter()
                .map(|&(c, pr, pl)| c + pr * vr + pl * vl)
                .fold(f64::INFINITY, f64::min);
            next[i] = state[i] + 0.5 * v[i] + best;
            let d = next[i] - v[i];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        let anchor = next[0];
        for (v, nx) in v.iter_mut().zip(&next) {
            *v = nx - anchor;
        }
        if span * unif <= 1e-9 {
            return Ok(0.5 * (lo + hi) * unif);
        }
    }
    Err(Error::ValueIterationNonConvergence {
        iterations: max_sweeps,
        span: span * unif,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{GridField, TorusGrid};

    #[test]
    fn flat_cost_is_zero() {
        let g = TorusGrid::new(16).unwrap();
        let l = LagrangianSpec::new(GridField::zeros(g));
        let v = closed_measure_min_oracle(&l, &uniform_action_grid(8.0, 41)).unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn constant_potential_shifts_value() {
        let g = TorusGrid::new(16).unwrap();
        let l = LagrangianSpec::new(GridField::constant(g, 0.3));
        let v = closed_measure_min_oracle(&l, &uniform_action_grid(8.0, 41)).unwrap();
        assert!((v - 0.3).abs() < 1e-9);
    }

    #[test]
    fn rejects_oversized_actions() {
        let g = TorusGrid::new(16).unwrap();
        let l = LagrangianSpec::new(GridField::zeros(g));
        assert!(closed_measure_min_oracle(&l, &[20.0]).is_err());
    }
}
