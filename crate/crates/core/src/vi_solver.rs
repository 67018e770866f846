//! Implicit finite differences with projected SOR for the premium
//! variational inequalities: delayed liquidation, delayed purchase, the
//! index swap with self-exciting jumps, and sequential buy-then-sell.

use serde::{Deserialize, Serialize};

use crate::drift::{drift_grid, g_cdx_affine, g_deterministic, DeterministicInputs};
use crate::error::{Error, Result};
use crate::grid::{Coefficients, Grid, Operator};
use crate::models::{one_factor_view, ClaimSpec, MeasurePair, OneFactorView, Pair, TopDownParams};
use crate::numeric::{adaptive_simpson, bisect, gaussian_expectation, int_phi_phi, phi, simpson_samples, MonotoneCubic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JumpMode {
    /// Second-order Taylor expansion of the jump integral, folded into the
    /// drift and diffusion.
    #[default]
    Taylor2,
    /// Jump integral evaluated by monotone cubic interpolation, lagged one
    /// sweep.
    ExactInterp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub omega: f64,
    /// Sup-norm tolerance on the complementarity residual at each step.
    pub tol: f64,
    pub max_iter: usize,
    pub jump_mode: JumpMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            omega: 1.5,
            tol: 1e-9,
            max_iter: 10_000,
            jump_mode: JumpMode::Taylor2,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Domain(format!("omega {} outside (0, 2)", self.omega)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Domain("tol and max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiumKind {
    Liquidation,
    Purchase,
    Cdx,
    Sequential,
    Unconstrained,
}

#[derive(Debug, Clone)]
pub struct PremiumSurface {
    pub grid: Grid,
    /// `values[n][j]` at time node `n`, intensity node `j`.
    pub values: Vec<Vec<f64>>,
    pub kind: PremiumKind,
    /// PSOR sweeps used at each time step (zero at maturity).
    pub iterations: Vec<usize>,
    /// Final complementarity residual at each time step.
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PremiumSurface {
    /// Linear interpolation in `λ` on time row `n`, flat outside the grid.
    pub fn interpolate(&self, n: usize, lambda: f64) -> f64 {
        lerp_row(&self.grid, &self.values[n], lambda)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) fn lerp_row(grid: &Grid, row: &[f64], lambda: f64) -> f64 {
    if lambda <= grid.lambda_min {
        return row[0];
    }
    if lambda >= grid.lambda_max {
        return row[grid.cells];
    }
    let j = grid.cell_of(lambda);
    let w = (lambda - grid.lambda(j)) / grid.h();
    row[j] * (1.0 - w) + row[j + 1] * w
}

struct Jumps {
    rate: Vec<f64>,
    atoms: Vec<(f64, f64)>,
}

/// A discretized obstacle problem marched backward from a zero terminal
/// value.
struct Problem<'a> {
    grid: &'a Grid,
    op: Operator,
    source: Option<&'a [Vec<f64>]>,
    obstacle: Option<&'a [Vec<f64>]>,
    /// Dirichlet values at the lower end, one per time node.
    lower: Option<Vec<f64>>,
    jumps: Option<Jumps>,
}

struct Solution {
    values: Vec<Vec<f64>>,
    iterations: Vec<usize>,
    residuals: Vec<f64>,
    warnings: Vec<String>,
}

impl Problem<'_> {
    fn solve(&self, cfg: &SolverConfig) -> Result<Solution> {
        cfg.validate()?;
        let (m, k) = (self.grid.steps, self.grid.cells);
        let dt = self.grid.dt();
        let mut values = vec![vec![0.0; k + 1]; m + 1];
        let mut iterations = vec![0; m + 1];
        let mut residuals = vec![0.0; m + 1];
        let mut warnings = Vec::new();
        if (1..k).any(|j| self.op.diag[j] < self.op.lo[j] + self.op.up[j]) {
            warnings.push("operator is not diagonally dominant".to_string());
        }
        let zeros = vec![0.0; k + 1];
        let mut x: Vec<f64> = vec![0.0; k + 1];
        for n in (0..m).rev() {
            let obstacle = self.obstacle.map_or(&zeros[..], |o| &o[n][..]);
            let base: Vec<f64> = match self.source {
                Some(s) => (0..=k).map(|j| values[n + 1][j] + dt * s[n][j]).collect(),
                None => values[n + 1].clone(),
            };
            for j in 0..=k {
                x[j] = x[j].max(obstacle[j]);
            }
            if let Some(d) = &self.lower {
                x[0] = d[n];
            }
            let (it, res, omega) = self.psor(&base, obstacle, &mut x, cfg, n)?;
            if omega < cfg.omega {
                warnings.push(format!("step {n}: relaxation reduced to {omega}"));
            }
            iterations[n] = it;
            residuals[n] = res;
            values[n].copy_from_slice(&x);
        }
        Ok(Solution {
            values,
            iterations,
            residuals,
            warnings,
        })
    }

    fn psor(
        &self,
        base: &[f64],
        obstacle: &[f64],
        x: &mut [f64],
        cfg: &SolverConfig,
        step: usize,
    ) -> Result<(usize, f64, f64)> {
        let k = self.grid.cells;
        let op = &self.op;
        let dt = self.grid.dt();
        let first = usize::from(self.lower.is_some());
        let mut omega = cfg.omega;
        let mut rhs = base.to_vec();
        let mut checkpoint = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for it in 1..=cfg.max_iter {
            if let Some(jumps) = &self.jumps {
                let interp = MonotoneCubic::new(self.grid.lambda_min, self.grid.h(), x);
                for j in 0..=k {
                    let l = self.grid.lambda(j);
                    let e: f64 = jumps.atoms.iter().map(|(z, p)| p * interp.eval(l + z)).sum();
                    rhs[j] = base[j] + dt * jumps.rate[j] * e;
                }
            }
            for j in first..=k {
                let y = if j == k {
                    x[k - 1]
                } else {
                    let left = if j > 0 { op.lo[j] * x[j - 1] } else { 0.0 };
                    (rhs[j] + left + op.up[j] * x[j + 1]) / op.diag[j]
                };
                x[j] = (x[j] + omega * (y - x[j])).max(obstacle[j]);
            }
            residual = (first..k)
                .map(|j| op.residual(x, &rhs, j).min(x[j] - obstacle[j]).abs())
                .fold(0.0, f64::max);
            if residual <= cfg.tol {
                return Ok((it, residual, omega));
            }
            if it % 50 == 0 {
                if residual > checkpoint {
                    omega *= 0.5;
                }
                checkpoint = residual;
            }
        }
        Err(Error::NonConvergence {
            step,
            iterations: cfg.max_iter,
            residual,
        })
    }
}

fn check_horizon(claim: &ClaimSpec, grid: &Grid) -> Result<()> {
    if (grid.maturity - claim.maturity()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from claim maturity {}",
            grid.maturity,
            claim.maturity()
        )));
    }
    Ok(())
}

fn investor_operator(view: &OneFactorView, grid: &Grid) -> Operator {
    let d = view.investor;
    Operator::assemble(grid, |l| Coefficients {
        drift: d.drift(l),
        variance: d.variance(l),
        killing: view.rate + view.intensity_ratio * l,
    })
}

/// Value at `λ_min` of never exercising, `E[∫ e^{−∫(r+λ̃)} sign·G du]`
/// floored at zero, for Gaussian intensities. The killed expectation is
/// taken in closed form by tilting the joint Gaussian law of
/// `(∫λ, λ_u)`, then integrated in `u` by Simpson.
fn gaussian_hold_values(claim: &ClaimSpec, pair: &MeasurePair, grid: &Grid, sign: f64) -> Result<Vec<f64>> {
    let view = one_factor_view(pair)?;
    let d = view.investor;
    let a = view.intensity_ratio;
    let s2 = d.var_const;
    let horizon = grid.maturity;
    let spread_sd = if d.kappa > 0.0 {
        (s2 / (2.0 * d.kappa)).sqrt()
    } else {
        (s2 * horizon).sqrt()
    };
    let shift = a.abs() * s2 * horizon * horizon * 0.5;
    let lo = grid.lambda_min.min(d.level) - 9.0 * spread_sd - shift;
    let hi = grid.lambda_max.max(grid.lambda_min + 9.0 * spread_sd + shift);
    let fine = Grid::new(horizon, 2 * grid.steps, 2000, lo, hi)?;
    let g = drift_grid(claim, pair, &fine)?;
    let lam0 = grid.lambda_min;
    let du = fine.dt();
    let mut out = vec![0.0; grid.steps + 1];
    for (n, slot) in out.iter_mut().enumerate().take(grid.steps) {
        let start = 2 * n;
        let samples: Vec<f64> = (start..=fine.steps)
            .map(|i| {
                let tau = fine.t(i) - fine.t(start);
                let e = (-d.kappa * tau).exp();
                let mean_l = d.level + (lam0 - d.level) * e;
                let mean_i = d.level * tau + (lam0 - d.level) * phi(d.kappa, tau);
                let var_i = s2 * int_phi_phi(d.kappa, d.kappa, tau);
                let cov = 0.5 * s2 * phi(d.kappa, tau).powi(2);
                let var_l = s2 * phi(2.0 * d.kappa, tau);
                let weight = (-view.rate * tau - a * mean_i + 0.5 * a * a * var_i).exp();
                let row = &g[i];
                weight * gaussian_expectation(|l| lerp_row(&fine, row, l), mean_l - a * cov, var_l.sqrt())
            })
            .collect();
        *slot = (sign * simpson_samples(&samples, du)).max(0.0);
    }
    Ok(out)
}

fn single_name(claim: &ClaimSpec, pair: &MeasurePair, grid: &Grid, cfg: &SolverConfig, sign: f64) -> Result<(Solution, OneFactorView)> {
    if matches!(claim, ClaimSpec::Cdx { .. }) {
        return Err(Error::Unsupported("use solve_cdx_vi for index swaps".into()));
    }
    check_horizon(claim, grid)?;
    let view = one_factor_view(pair)?;
    let mut g = drift_grid(claim, pair, grid)?;
    if sign < 0.0 {
        g.iter_mut().flatten().for_each(|v| *v = -*v);
    }
    let lower = if view.nonnegative {
        None
    } else {
        Some(gaussian_hold_values(claim, pair, grid, sign)?)
    };
    let problem = Problem {
        grid,
        op: investor_operator(&view, grid),
        source: Some(&g),
        obstacle: None,
        lower,
        jumps: None,
    };
    Ok((problem.solve(cfg)?, view))
}

fn surface(grid: &Grid, kind: PremiumKind, s: Solution) -> PremiumSurface {
    PremiumSurface {
        grid: *grid,
        values: s.values,
        kind,
        iterations: s.iterations,
        residuals: s.residuals,
        warnings: s.warnings,
    }
}

/// Pre-default delayed liquidation premium `L̂` on a one-factor lattice.
pub fn solve_liquidation_vi(claim: &ClaimSpec, pair: &MeasurePair, grid: &Grid, cfg: &SolverConfig) -> Result<PremiumSurface> {
    let (s, _) = single_name(claim, pair, grid, cfg, 1.0)?;
    Ok(surface(grid, PremiumKind::Liquidation, s))
}

/// Delayed purchase premium `L̂ᵇ`: the same problem driven by `−G`.
pub fn solve_purchase_vi(claim: &ClaimSpec, pair: &MeasurePair, grid: &Grid, cfg: &SolverConfig) -> Result<PremiumSurface> {
    let (s, _) = single_name(claim, pair, grid, cfg, -1.0)?;
    Ok(surface(grid, PremiumKind::Purchase, s))
}

fn obstacle_problem(pair: &MeasurePair, grid: &Grid, obstacle: &[Vec<f64>], lower: Option<Vec<f64>>, cfg: &SolverConfig) -> Result<Solution> {
    let view = one_factor_view(pair)?;
    let problem = Problem {
        grid,
        op: investor_operator(&view, grid),
        source: None,
        obstacle: Some(obstacle),
        lower: if view.nonnegative { None } else { lower },
        jumps: None,
    };
    problem.solve(cfg)
}

/// Sequential buy-then-sell value `Û`: an obstacle problem with obstacle
/// `L̂` and no running source. The purchase region is `{Û = L̂}`.
pub fn solve_sequential_vi(pair: &MeasurePair, grid: &Grid, lhat: &PremiumSurface, cfg: &SolverConfig) -> Result<PremiumSurface> {
    if !grid.same_shape(&lhat.grid) {
        return Err(Error::GridMismatch("liquidation premium was solved on a different grid".into()));
    }
    let lower = lhat.values.iter().map(|row| row[0]).collect();
    let s = obstacle_problem(pair, grid, &lhat.values, Some(lower), cfg)?;
    Ok(surface(grid, PremiumKind::Sequential, s))
}

/// Buy-sell value with short sales allowed, solved directly as a double
/// stopping problem: before either trade the investor may execute the
/// sale or the purchase first, so the obstacle is `max(L̂, L̂ᵇ)`.
pub fn solve_unconstrained_vi(
    pair: &MeasurePair,
    grid: &Grid,
    lhat: &PremiumSurface,
    lhat_b: &PremiumSurface,
    cfg: &SolverConfig,
) -> Result<PremiumSurface> {
    if !grid.same_shape(&lhat.grid) || !grid.same_shape(&lhat_b.grid) {
        return Err(Error::GridMismatch("premia were solved on a different grid".into()));
    }
    let obstacle: Vec<Vec<f64>> = lhat
        .values
        .iter()
        .zip(&lhat_b.values)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
        .collect();
    let lower = lhat.values.iter().zip(&lhat_b.values).map(|(a, b)| a[0] + b[0]).collect();
    let s = obstacle_problem(pair, grid, &obstacle, Some(lower), cfg)?;
    Ok(surface(grid, PremiumKind::Unconstrained, s))
}

/// Default lattice for the index swap: `λ ∈ [0, 10·μθ]`.
pub fn cdx_grid(pair: &Pair<TopDownParams>, maturity: f64, steps: usize, cells: usize) -> Result<Grid> {
    let level = pair.market.mu * pair.market.theta.max(pair.investor.theta);
    Grid::new(maturity, steps, cells, 0.0, 10.0 * level)
}

/// Delayed liquidation premium of the index swap. Discounting is at `r`
/// only; defaults enter through the jump term at rate `(μ̃/μ)λ` with jump
/// size `μηz`, `z` drawn from the investor's loss law.
pub fn solve_cdx_vi(pair: &Pair<TopDownParams>, spread: f64, grid: &Grid, cfg: &SolverConfig) -> Result<PremiumSurface> {
    let (m, i) = (&pair.market, &pair.investor);
    let ratio = i.mu / m.mu;
    let scale = m.mu * m.eta;
    let g: Vec<Vec<f64>> = (0..=grid.steps)
        .map(|n| {
            let (a, b) = g_cdx_affine(pair, spread, grid.maturity, grid.t(n))?;
            Ok(grid.lambdas().iter().map(|l| a * l + b).collect())
        })
        .collect::<Result<_>>()?;
    let (c1, c2) = (i.loss.mean(), i.loss.second_moment());
    let var_lin = m.sigma * m.sigma * m.mu;
    let level = m.mu * i.theta;
    let (op, jumps) = match cfg.jump_mode {
        JumpMode::Taylor2 => (
            Operator::assemble(grid, |l| Coefficients {
                drift: i.kappa * (level - l) + ratio * l * scale * c1,
                variance: (var_lin * l + ratio * l * scale * scale * c2).max(0.0),
                killing: m.r,
            }),
            None,
        ),
        JumpMode::ExactInterp => {
            let rate: Vec<f64> = grid.lambdas().iter().map(|l| ratio * l).collect();
            let op = Operator::assemble(grid, |l| Coefficients {
                drift: i.kappa * (level - l),
                variance: (var_lin * l).max(0.0),
                killing: m.r + ratio * l,
            });
            let atoms = i.loss.atoms().into_iter().map(|(z, p)| (scale * z, p)).collect();
            (op, Some(Jumps { rate, atoms }))
        }
    };
    let problem = Problem {
        grid,
        op,
        source: Some(&g),
        obstacle: None,
        lower: None,
        jumps,
    };
    Ok(surface(grid, PremiumKind::Cdx, problem.solve(cfg)?))
}

/// Premium with deterministic inputs: the best of stopping at `t`, at `T`,
/// or at a root of `G`, for the running gain `∫ e^{−∫(r+λ̃)} G du`.
/// Returns the value and the optimal stopping time.
pub fn deterministic_premium(s: &DeterministicInputs, t: f64, maturity: f64) -> (f64, f64) {
    if maturity <= t {
        return (0.0, t);
    }
    let mut knots: Vec<f64> = s.breakpoints().into_iter().filter(|&k| k > t && k < maturity).collect();
    knots.insert(0, t);
    knots.push(maturity);
    let g = |u: f64| g_deterministic(s, u);
    let killing = |u: f64| s.rate.eval(u) + s.mu_investor.eval(u) * s.lambda_hat.eval(u);
    let mut candidates = vec![t, maturity];
    for w in knots.windows(2) {
        let pieces = 32;
        let h = (w[1] - w[0]) / pieces as f64;
        for p in 0..pieces {
            let (a, b) = (w[0] + p as f64 * h, w[0] + (p + 1) as f64 * h);
            if g(a) * g(b) < 0.0 {
                if let Some(root) = bisect(g, a, b, 1e-13) {
                    candidates.push(root);
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // killing is piecewise quadratic between knots, so Simpson per knot
    // interval is exact
    let cumulative_killing = |u: f64| -> f64 {
        knots
            .windows(2)
            .map(|w| {
                let b = w[1].min(u);
                if b <= w[0] {
                    0.0
                } else {
                    (b - w[0]) / 6.0 * (killing(w[0]) + 4.0 * killing(0.5 * (w[0] + b)) + killing(b))
                }
            })
            .sum()
    };
    let integrand = |u: f64| (-cumulative_killing(u)).exp() * g(u);
    let mut best = (0.0, t);
    let mut acc = 0.0;
    let mut prev = t;
    let mut marks: Vec<f64> = knots.iter().chain(&candidates).copied().collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    for &u in marks.iter().skip(1) {
        acc += adaptive_simpson(&integrand, prev, u, 1e-13);
        prev = u;
        if candidates.contains(&u) && acc > best.0 {
            best = (acc, u);
        }
    }
    best
}
