//! Uniform time × intensity lattice and the implicit-Euler operator rows
//! shared by the pricing PDE and the variational-inequality solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{IntensityDiffusion, OneFactorView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub maturity: f64,
    /// Number of time steps `M`; there are `M + 1` time nodes.
    pub steps: usize,
    /// Number of intensity cells `K`; there are `K + 1` intensity nodes.
    pub cells: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Grid {
    pub fn new(
        maturity: f64,
        steps: usize,
        cells: usize,
        lambda_min: f64,
        lambda_max: f64,
    ) -> Result<Self> {
        if !(maturity > 0.0) || steps == 0 || cells < 2 || !(lambda_max > lambda_min) {
            return Err(Error::Domain(format!(
                "invalid grid: maturity {maturity}, steps {steps}, cells {cells}, \
                 range [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self {
            maturity,
            steps,
            cells,
            lambda_min,
            lambda_max,
        })
    }

    /// Default domain for a one-factor model: `[0, 10·level]` for
    /// nonnegative intensities; for Gaussian intensities the lower end is
    /// six stationary standard deviations below the smaller long-run level.
    pub fn for_view(view: &OneFactorView, maturity: f64, steps: usize, cells: usize) -> Result<Self> {
        let level = view.market.level.max(view.investor.level);
        let lambda_max = 10.0 * level.max(1e-12);
        let lambda_min = if view.nonnegative {
            0.0
        } else {
            [view.market, view.investor]
                .iter()
                .map(|d| d.level - 6.0 * stationary_sd(d, maturity))
                .fold(f64::INFINITY, f64::min)
        };
        Self::new(maturity, steps, cells, lambda_min, lambda_max)
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    pub fn h(&self) -> f64 {
        (self.lambda_max - self.lambda_min) / self.cells as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        if n == self.steps {
            self.maturity
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn lambda(&self, j: usize) -> f64 {
        if j == self.cells {
            self.lambda_max
        } else {
            self.lambda_min + j as f64 * self.h()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.t(n)).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        (0..=self.cells).map(|j| self.lambda(j)).collect()
    }

    /// Index of the cell containing `lam`, clamped to the lattice.
    pub fn cell_of(&self, lam: f64) -> usize {
        let u = ((lam - self.lambda_min) / self.h()).floor();
        (u.max(0.0) as usize).min(self.cells - 1)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}

fn stationary_sd(d: &IntensityDiffusion, horizon: f64) -> f64 {
    if d.kappa > 0.0 {
        (d.var_const / (2.0 * d.kappa)).sqrt()
    } else {
        (d.var_const * horizon).sqrt()
    }
}

/// Tridiagonal implicit-Euler rows: for each node
/// `diag·V_j − lo·V_{j−1} − up·V_{j+1} = V_j^{next} + dt·source_j`.
#[derive(Debug, Clone)]
pub struct Operator {
    pub lo: Vec<f64>,
    pub diag: Vec<f64>,
    pub up: Vec<f64>,
}

/// Coefficients of the generator `a(λ)∂_λ + ½v(λ)∂²_λ − k(λ)` at node `λ`.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    pub drift: f64,
    pub variance: f64,
    pub killing: f64,
}

impl Operator {
    /// Assemble rows. Convection is centered unless the cell Péclet number
    /// `|a|h/(v/2)` exceeds 2, in which case it is upwinded. Row 0 keeps
    /// only the inward drift, which is the degenerate square-root boundary;
    /// callers with a Dirichlet lower end overwrite it.
    pub fn assemble<F: Fn(f64) -> Coefficients>(grid: &Grid, coeff: F) -> Self {
        let k = grid.cells;
        let (dt, h) = (grid.dt(), grid.h());
        let mut lo = vec![0.0; k + 1];
        let mut diag = vec![1.0; k + 1];
        let mut up = vec![0.0; k + 1];
        for j in 0..=k {
            let c = coeff(grid.lambda(j));
            let diff = 0.5 * c.variance / (h * h);
            let (l, u) = if j == 0 {
                (0.0, c.drift.max(0.0) / h)
            } else if c.variance > 0.0 && c.drift.abs() * h <= c.variance {
                (diff - 0.5 * c.drift / h, diff + 0.5 * c.drift / h)
            } else {
                (diff + (-c.drift).max(0.0) / h, diff + c.drift.max(0.0) / h)
            };
            lo[j] = dt * l;
            up[j] = dt * u;
            diag[j] = 1.0 + dt * (l + u + c.killing);
        }
        Self { lo, diag, up }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Residual `A·v − rhs` at interior node `j`.
    pub fn residual(&self, v: &[f64], rhs: &[f64], j: usize) -> f64 {
        let mut s = self.diag[j] * v[j] - rhs[j];
        if j > 0 {
            s -= self.lo[j] * v[j - 1];
        }
        if j + 1 < v.len() {
            s -= self.up[j] * v[j + 1];
        }
        s
    }
}

/// Thomas algorithm for `lo[i]·x[i−1] + diag[i]·x[i] + up[i]·x[i+1] = rhs[i]`
/// with the sign convention of the arguments as given.
pub fn solve_tridiagonal(lo: &[f64], diag: &[f64], up: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = up[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { up[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
