use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::Result;
use crate::torus::{GridField, LagrangianSpec};

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub lambda: f64,
    /// Positive eigenfunction with `max w = 1`.
    pub w: GridField,
    /// `-log w`, recentred to zero mean.
    pub u: GridField,
}

/// Top eigenpair of the periodic matrix `½Δ_h - ℓ - c0 - f` by a dense
/// symmetric eigensolve.
pub fn principal_eigen_oracle(l: &LagrangianSpec, f: &GridField) -> Result<EigenPair> {
    let g = l.grid();
    g.ensure_same(&f.grid())?;
    let n = g.n_cells();
    let rho = g.base_rate();
    let costs = l.state_costs();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -2.0 * rho - costs[i] - f.values()[i];
        m[(i, g.next(i))] += rho;
        m[(i, g.prev(i))] += rho;
    }
    let eig = SymmetricEigen::new(m);
    let (k, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let col = eig.eigenvectors.column(k);
    let sign = if col.sum() < 0.0 { -1.0 } else { 1.0 };
    let vals: Vec<f64> = col.iter().map(|v| sign * v).collect();
    let top = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let w = GridField::new(g, vals.iter().map(|v| v / top).collect())?;
    let u = w.map(|v| -v.ln()).centered();
    Ok(EigenPair { lambda, w, u })
}
