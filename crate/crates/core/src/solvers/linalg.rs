//! Tridiagonal solvers used by the Newton and inverse-iteration loops.

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = d_i` (Thomas algorithm).
/// `a[0]` and `c[n-1]` are ignored. No pivoting: callers pass diagonally
/// dominant systems.
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    debug_assert!(a.len() == n && c.len() == n && d.len() == n);
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    x
}

/// Periodic variant: `a[0]` couples row 0 to `x_{n-1}` and `c[n-1]` couples
/// row `n-1` to `x_0`. Sherman–Morrison on top of [`solve_tridiagonal`].
pub fn solve_cyclic_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, d);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(x, z)| x - fact * z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply_cyclic(a: &[f64], b: &[f64], c: &[f64], x: &[f64]) -> Vec<f64> {
        let n = b.len();
        (0..n)
            .map(|i| a[i] * x[(i + n - 1) % n] + b[i] * x[i] + c[i] * x[(i + 1) % n])
            .collect()
    }

    #[test]
    fn tridiagonal_solves() {
        let a = [0.0, -1.0, -1.0, -1.0];
        let b = [4.0, 4.0, 4.0, 4.0];
        let c = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, -2.0, 3.0, 0.5];
        let d: Vec<f64> = (0..4)
            .map(|i| {
                b[i] * x[i] + if i > 0 { a[i] * x[i - 1] } else { 0.0 } + if i < 3 { c[i] * x[i + 1] } else { 0.0 }
            })
            .collect();
        let got = solve_tridiagonal(&a, &b, &c, &d);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn cyclic_solves() {
        let n = 9;
        let a: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let c: Vec<f64> = (0..n).map(|i| -0.5 - 0.05 * i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| 3.0 + 0.2 * i as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let d = apply_cyclic(&a, &b, &c, &x);
        let got = solve_cyclic_tridiagonal(&a, &b, &c, &d);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-13);
        }
    }
}
