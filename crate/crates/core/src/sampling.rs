//! Seeded random measures for multistarts and perturbation probes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::torus::{ProbabilityGrid, TorusGrid};

/// Density `∝ exp(Σ_{k ≤ modes} (a_k cos 2πkx + b_k sin 2πkx))` with
/// `a_k, b_k ~ N(0, (amplitude / k)^2)`.
pub fn random_smooth_density<R: Rng + ?Sized>(
    grid: TorusGrid,
    rng: &mut R,
    modes: usize,
    amplitude: f64,
) -> ProbabilityGrid {
    let coeffs: Vec<(f64, f64)> = (1..=modes)
        .map(|k| {
            let s = amplitude / k as f64;
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            (s * a, s * b)
        })
        .collect();
    let w = grid
        .nodes()
        .map(|x| {
            let e: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(j, (a, b))| {
                    let t = 2.0 * std::f64::consts::PI * (j + 1) as f64 * x;
                    a * t.cos() + b * t.sin()
                })
                .sum();
            e.exp()
        })
        .collect();
    ProbabilityGrid::new(grid, w).expect("exponential weights are positive")
}
