use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::torus::grid::{GridField, ProbabilityGrid, TorusGrid};

/// Even convolution kernel sampled at the lags `r h`, `r = 0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LagKernel {
    grid: TorusGrid,
    lags: Vec<f64>,
    /// Nonzero DFT modes `(k, K̂_k)` when there are few of them.
    modes: Option<Vec<(usize, f64)>>,
}

impl LagKernel {
    /// Samples `k` at `r h`; the result is symmetrized so that `K(-d) = K(d)`.
    pub fn from_fn(grid: TorusGrid, k: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_lags(grid, (0..grid.n_cells()).map(|r| k(r as f64 * grid.h())).collect())
    }

    pub fn from_lags(grid: TorusGrid, lags: Vec<f64>) -> Result<Self> {
        let n = grid.n_cells();
        if lags.len() != n {
            return Err(Error::InvalidInput(format!(
                "kernel has {} lags on a {n}-cell grid",
                lags.len()
            )));
        }
        if lags.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite kernel value".into()));
        }
        let sym = (0..n).map(|r| 0.5 * (lags[r] + lags[(n - r) % n])).collect();
        let mut k = Self {
            grid,
            lags: sym,
            modes: None,
        };
        let spec = k.spectrum();
        let scale = spec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let modes: Vec<(usize, f64)> = spec
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1e-13 * scale)
            .map(|(k, v)| (k, *v))
            .collect();
        if modes.len() <= n / 8 {
            k.modes = Some(modes);
        }
        Ok(k)
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    #[inline]
    pub fn at_lag(&self, r: usize) -> f64 {
        self.lags[r]
    }

    #[inline]
    pub fn between(&self, a: usize, b: usize) -> f64 {
        let n = self.lags.len();
        self.lags[(a + n - b) % n]
    }

    /// Real DFT coefficients `K̂_k = Σ_r K_r cos(2π k r / n)`.
    pub fn spectrum(&self) -> Vec<f64> {
        let n = self.lags.len();
        (0..n)
            .map(|k| {
                self.lags
                    .iter()
                    .enumerate()
                    .map(|(r, v)| v * (2.0 * PI * ((k * r) % n) as f64 / n as f64).cos())
                    .sum()
            })
            .collect()
    }

    /// `(K * m)(x_a) = Σ_b K(x_a - x_b) m_b h`.
    pub fn convolve(&self, m: &ProbabilityGrid) -> Vec<f64> {
        self.convolve_masses(&m.masses())
    }

    pub fn convolve_masses(&self, p: &[f64]) -> Vec<f64> {
        let n = self.lags.len();
        match &self.modes {
            Some(modes) => {
                let mut out = vec![0.0; n];
                for &(k, coef) in modes {
                    let theta = 2.0 * PI * k as f64 / n as f64;
                    let (mut c, mut s) = (0.0, 0.0);
                    for (b, pb) in p.iter().enumerate() {
                        let (sn, cs) = (theta * b as f64).sin_cos();
                        c += pb * cs;
                        s += pb * sn;
                    }
                    let scale = coef / n as f64;
                    for (a, o) in out.iter_mut().enumerate() {
                        let (sn, cs) = (theta * a as f64).sin_cos();
                        *o += scale * (cs * c + sn * s);
                    }
                }
                out
            }
            None => (0..n)
                .map(|a| (0..n).map(|b| self.between(a, b) * p[b]).sum())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CouplingTerm {
    /// `F(m) = ∫ g dm`.
    Linear(GridField),
    /// `F(m) = weight ∬ K(x - y) m(dx) m(dy)`.
    Convolution { kernel: LagKernel, weight: f64 },
}

/// Shape of the quadratic part of `F` on the simplex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curvature {
    Affine,
    Convex,
    Concave,
    Mixed,
}

#[derive(Clone, Debug)]
pub struct MaxF {
    pub value: f64,
    pub argmax: ProbabilityGrid,
    /// False when the maximum comes from a multistart local search.
    pub certified: bool,
}

/// Mean-field coupling `F` as a sum of linear and convolution terms plus an
/// offset chosen once so that `F ≥ 0` on every probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFunctional {
    grid: TorusGrid,
    terms: Vec<CouplingTerm>,
    offset: f64,
}

impl CouplingFunctional {
    pub fn sum(grid: TorusGrid, terms: Vec<CouplingTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("coupling needs at least one term".into()));
        }
        for t in &terms {
            let g = match t {
                CouplingTerm::Linear(f) => f.grid(),
                CouplingTerm::Convolution { kernel, weight } => {
                    if !weight.is_finite() {
                        return Err(Error::InvalidInput("non-finite convolution weight".into()));
                    }
                    kernel.grid
                }
            };
            grid.ensure_same(&g)?;
        }
        let mut f = Self {
            grid,
            terms,
            offset: 0.0,
        };
        f.offset = (-f.lower_bound()).max(0.0);
        Ok(f)
    }

    pub fn linear(g: GridField) -> Self {
        let grid = g.grid();
        Self::sum(grid, vec![CouplingTerm::Linear(g)]).expect("linear term on its own grid")
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        Self::linear(GridField::constant(grid, c))
    }

    pub fn convolution(kernel: LagKernel, weight: f64) -> Result<Self> {
        let grid = kernel.grid;
        Self::sum(grid, vec![CouplingTerm::Convolution { kernel, weight }])
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn terms(&self) -> &[CouplingTerm] {
        &self.terms
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `F(m)`, offset included.
    pub fn eval(&self, m: &ProbabilityGrid) -> f64 {
        let masses = m.masses();
        self.eval_masses(&masses)
    }

    pub fn eval_masses(&self, p: &[f64]) -> f64 {
        let mut total = self.offset;
        for t in &self.terms {
            match t {
                CouplingTerm::Linear(g) => {
                    total += g.values().iter().zip(p).map(|(g, p)| g * p).sum::<f64>();
                }
                CouplingTerm::Convolution { kernel, weight } => {
                    let kp = kernel.convolve_masses(p);
                    total += weight * kp.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        total
    }

    /// `F` of the empirical measure putting mass `1/len` on each listed cell.
    pub fn eval_cells(&self, cells: &[usize]) -> f64 {
        let inv = 1.0 / cells.len() as f64;
        let mut total = self.offset;
        for t in &self.terms {
            match t {
                CouplingTerm::Linear(g) => {
                    total += cells.iter().map(|&c| g.values()[c]).sum::<f64>() * inv;
                }
                CouplingTerm::Convolution { kernel, weight } => {
                    let mut q = 0.0;
                    for &a in cells {
                        for &b in cells {
                            q += kernel.between(a, b);
                        }
                    }
                    total += weight * q * inv * inv;
                }
            }
        }
        total
    }

    /// `F` of the empirical measure of all listed cells but the `i`-th, for
    /// every `i`, in `O(len^2)` overall.
    pub fn leave_one_out(&self, cells: &[usize]) -> Vec<f64> {
        let k = cells.len();
        assert!(k >= 2, "leave-one-out needs two cells");
        let inv = 1.0 / (k - 1) as f64;
        let mut out = vec![self.offset; k];
        for t in &self.terms {
            match t {
                CouplingTerm::Linear(g) => {
                    let g = g.values();
                    let total: f64 = cells.iter().map(|&c| g[c]).sum();
                    for (o, &c) in out.iter_mut().zip(cells) {
                        *o += (total - g[c]) * inv;
                    }
                }
                CouplingTerm::Convolution { kernel, weight } => {
                    let rows: Vec<f64> = cells
                        .iter()
                        .map(|&a| cells.iter().map(|&b| kernel.between(a, b)).sum())
                        .collect();
                    let total: f64 = rows.iter().sum();
                    let k0 = kernel.at_lag(0);
                    for (o, r) in out.iter_mut().zip(&rows) {
                        *o += weight * (total - 2.0 * r + k0) * inv * inv;
                    }
                }
            }
        }
        out
    }

    /// `E[F(empirical measure of M iid draws from m)]`, exactly: a
    /// convolution term sees `K(0)/M` from the diagonal pairs and
    /// `(1 - 1/M)` of its value from the rest; linear terms are unbiased.
    pub fn expected_empirical(&self, m: &ProbabilityGrid, draws: usize) -> f64 {
        assert!(draws >= 1);
        let inv = 1.0 / draws as f64;
        let p = m.masses();
        let mut total = self.offset;
        for t in &self.terms {
            match t {
                CouplingTerm::Linear(g) => {
                    total += g.values().iter().zip(&p).map(|(g, p)| g * p).sum::<f64>();
                }
                CouplingTerm::Convolution { kernel, weight } => {
                    let kp = kernel.convolve_masses(&p);
                    let q: f64 = kp.iter().zip(&p).map(|(a, b)| a * b).sum();
                    total += weight * (kernel.at_lag(0) * inv + (1.0 - inv) * q);
                }
            }
        }
        total
    }

    /// `δF/δm(m, ·)` at every node.
    pub fn flat_derivative(&self, m: &ProbabilityGrid) -> GridField {
        GridField::new(self.grid, self.mass_gradient(&m.masses())).expect("finite flat derivative")
    }

    /// Gradient of `F` with respect to the cell masses.
    pub fn mass_gradient(&self, p: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells();
        let mut out = vec![0.0; n];
        for t in &self.terms {
            match t {
                CouplingTerm::Linear(g) => {
                    for (o, v) in out.iter_mut().zip(g.values()) {
                        *o += v;
                    }
                }
                CouplingTerm::Convolution { kernel, weight } => {
                    for (o, c) in out.iter_mut().zip(kernel.convolve_masses(p)) {
                        *o += 2.0 * weight * c;
                    }
                }
            }
        }
        out
    }

    pub fn flat_derivative_at(&self, m: &ProbabilityGrid, node: usize) -> f64 {
        self.flat_derivative(m).values()[node]
    }

    /// Combined Fourier weights `Σ_terms weight K̂_k` of the quadratic part.
    fn quadratic_spectrum(&self) -> Option<Vec<f64>> {
        let mut acc: Option<Vec<f64>> = None;
        for t in &self.terms {
            if let CouplingTerm::Convolution { kernel, weight } = t {
                let s = kernel.spectrum();
                match acc.as_mut() {
                    None => acc = Some(s.iter().map(|v| weight * v).collect()),
                    Some(a) => a.iter_mut().zip(&s).for_each(|(a, v)| *a += weight * v),
                }
            }
        }
        acc
    }

    pub fn curvature(&self) -> Curvature {
        let Some(spec) = self.quadratic_spectrum() else {
            return Curvature::Affine;
        };
        let scale = spec.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let tol = 1e-12 * scale;
        let nontrivial = &spec[1..];
        let has_pos = nontrivial.iter().any(|&v| v > tol);
        let has_neg = nontrivial.iter().any(|&v| v < -tol);
        match (has_pos, has_neg) {
            (false, false) => Curvature::Affine,
            (true, false) => Curvature::Convex,
            (false, true) => Curvature::Concave,
            (true, true) => Curvature::Mixed,
        }
    }

    pub fn is_convex(&self) -> bool {
        matches!(self.curvature(), Curvature::Affine | Curvature::Convex)
    }

    /// Lower bound of `F - offset` over all probability measures, from
    /// Parseval: `Σ K_{a-b} p_a p_b = (1/n) Σ_k K̂_k |p̂_k|^2` with `|p̂_k| ≤ 1`.
    fn lower_bound(&self) -> f64 {
        let n = self.grid.n_cells() as f64;
        let mut bound = 0.0;
        for t in &self.terms {
            if let CouplingTerm::Linear(g) = t {
                bound += g.min();
            }
        }
        if let Some(spec) = self.quadratic_spectrum() {
            // drop roundoff-level coefficients so exact kernels get exact bounds
            let scale = spec.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let clean = |v: f64| if v.abs() <= 1e-12 * scale { 0.0 } else { v };
            bound += (clean(spec[0]) + spec[1..].iter().map(|&v| clean(v).min(0.0)).sum::<f64>()) / n;
        }
        bound
    }

    /// Maximum of `F` over the probability simplex of the grid.
    pub fn max(&self) -> MaxF {
        let n = self.grid.n_cells();
        match self.curvature() {
            Curvature::Affine | Curvature::Convex => {
                // a convex function on a polytope peaks at a vertex
                let mut best = (0usize, f64::NEG_INFINITY);
                for c in 0..n {
                    let v = self.eval_cells(&[c]);
                    if v > best.1 {
                        best = (c, v);
                    }
                }
                MaxF {
                    value: best.1,
                    argmax: ProbabilityGrid::point_mass(self.grid, best.0).expect("cell in range"),
                    certified: true,
                }
            }
            Curvature::Concave => {
                let (p, v) = self.projected_ascent(vec![1.0 / n as f64; n]);
                MaxF {
                    value: v,
                    argmax: ProbabilityGrid::from_masses(self.grid, &p).expect("simplex point"),
                    certified: true,
                }
            }
            Curvature::Mixed => {
                let mut starts: Vec<Vec<f64>> = vec![vec![1.0 / n as f64; n]];
                for c in (0..n).step_by((n / 8).max(1)) {
                    let mut p = vec![0.2 / n as f64; n];
                    p[c] += 0.8;
                    starts.push(p);
                }
                let (p, v) = starts
                    .into_iter()
                    .map(|s| self.projected_ascent(s))
                    .fold((Vec::new(), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                MaxF {
                    value: v,
                    argmax: ProbabilityGrid::from_masses(self.grid, &p).expect("simplex point"),
                    certified: false,
                }
            }
        }
    }

    fn projected_ascent(&self, mut p: Vec<f64>) -> (Vec<f64>, f64) {
        let mut value = self.eval_masses(&p);
        let mut step = 1.0;
        for _ in 0..5000 {
            let g = self.mass_gradient(&p);
            let mut improved = false;
            while step > 1e-14 {
                let trial: Vec<f64> = p.iter().zip(&g).map(|(p, g)| p + step * g).collect();
                let q = project_to_simplex(&trial, 0.0);
                let v = self.eval_masses(&q);
                if v > value + 1e-15 {
                    let moved = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>();
                    p = q;
                    value = v;
                    improved = moved > 1e-13;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (p, value)
    }
}

/// Euclidean projection onto `{p : Σ p = 1, p_i ≥ floor}`.
pub fn project_to_simplex(y: &[f64], floor: f64) -> Vec<f64> {
    let n = y.len();
    let budget = 1.0 - floor * n as f64;
    let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - budget) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    shifted.iter().map(|v| (v - theta).max(0.0) + floor).collect()
}
