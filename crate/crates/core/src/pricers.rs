//! Pre-default market prices: closed forms for bonds, CDS and index swaps,
//! and an implicit finite-difference pricer used as a cross-check.
//!
//! State vectors follow [`crate::models`]: `(r, λ)` for OU, the factor
//! vector for CIR and `(λ, n)` for the top-down model.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{solve_tridiagonal, Coefficients, Grid, Operator};
use crate::models::{one_factor_view, CirParams, ClaimSpec, MeasurePair, ModelParams, OuParams, TopDownParams};
use crate::numeric::{int_exp_phi, int_phi, int_phi_phi, phi};

/// Default number of Simpson panels for the CDS premium/protection integral.
pub const CDS_PANELS: usize = 400;
/// Absolute tolerance of the CDS quadrature (Richardson estimate).
pub const CDS_TOL: f64 = 1e-8;
const CDS_MAX_PANELS: usize = 12_800;

fn horizon(t: f64, maturity: f64) -> Result<f64> {
    if !(t <= maturity) {
        return Err(Error::Domain(format!("time {t} is after maturity {maturity}")));
    }
    Ok(maturity - t)
}

/// Exponent coefficients of the OU bond: price `exp(a − b·r − d·λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoefficients {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

/// OU coefficients at time to maturity `s`. `loss_weight` scales the
/// intensity loading: 1 for zero recovery, `1 − c` for recovery of market
/// value and 0 for the default-free bond.
pub fn ou_coefficients(p: &OuParams, s: f64, loss_weight: f64) -> OuCoefficients {
    let w = loss_weight;
    let (kr, kl) = (p.kappa_r, p.kappa_l);
    let sl = p.mu * p.sigma_l;
    let mut a = -kr * p.theta_r * int_phi(kr, s);
    if p.sigma_r != 0.0 {
        a += 0.5 * p.sigma_r * p.sigma_r * int_phi_phi(kr, kr, s);
    }
    if w != 0.0 {
        a += 0.5 * sl * sl * w * w * int_phi_phi(kl, kl, s) - p.mu * kl * p.theta_l * w * int_phi(kl, s);
        if p.rho * p.sigma_r != 0.0 {
            a += p.rho * p.sigma_r * sl * w * int_phi_phi(kr, kl, s);
        }
    }
    OuCoefficients {
        a,
        b: phi(kr, s),
        d: w * phi(kl, s),
    }
}

pub fn ou_bond_price(p: &OuParams, t: f64, maturity: f64, r: f64, lambda: f64) -> Result<f64> {
    let c = ou_coefficients(p, horizon(t, maturity)?, 1.0);
    Ok((c.a - c.b * r - c.d * lambda).exp())
}

/// Coefficients of one CIR factor discounted at rate `delta·X`:
/// `E[exp(−delta ∫X)] = exp(ln_a − b·x)`, with `db = ∂b/∂s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirFactor {
    pub ln_a: f64,
    pub b: f64,
    pub db: f64,
}

pub fn cir_factor(kappa: f64, theta: f64, sigma: f64, delta: f64, s: f64) -> CirFactor {
    if delta == 0.0 {
        return CirFactor {
            ln_a: 0.0,
            b: 0.0,
            db: 0.0,
        };
    }
    if sigma == 0.0 {
        return CirFactor {
            ln_a: -delta * kappa * theta * int_phi(kappa, s),
            b: delta * phi(kappa, s),
            db: delta * (-kappa * s).exp(),
        };
    }
    let xi = (kappa * kappa + 2.0 * sigma * sigma * delta).sqrt();
    let em = -(-xi * s).exp_m1();
    let q = (xi + kappa) * em + 2.0 * xi * (-xi * s).exp();
    let b = 2.0 * delta * em / q;
    let ln_a = 2.0 * kappa * theta / (sigma * sigma) * ((2.0 * xi / q).ln() + 0.5 * (kappa - xi) * s);
    let db = delta - kappa * b - 0.5 * sigma * sigma * b * b;
    CirFactor { ln_a, b, db }
}

fn cir_delta(p: &CirParams, i: usize, loss_weight: f64) -> f64 {
    p.w_r[i] + p.mu * loss_weight * p.w_l[i]
}

fn cir_log_price(p: &CirParams, s: f64, x: &[f64], loss_weight: f64) -> f64 {
    let mut v = -p.r0 * s;
    for i in 0..p.factors() {
        let f = cir_factor(p.kappa[i], p.theta[i], p.sigma[i], cir_delta(p, i, loss_weight), s);
        v += f.ln_a - f.b * x[i];
    }
    v
}

pub fn cir_bond_price(p: &CirParams, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
    check_cir_state(p, x)?;
    Ok(cir_log_price(p, horizon(t, maturity)?, x, 1.0).exp())
}

fn check_cir_state(p: &CirParams, x: &[f64]) -> Result<()> {
    if x.len() != p.factors() {
        return Err(Error::Domain(format!(
            "state has {} components, model has {} factors",
            x.len(),
            p.factors()
        )));
    }
    if x.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("CIR factors must be nonnegative".into()));
    }
    Ok(())
}

fn ou_state(x: &[f64]) -> Result<(f64, f64)> {
    match x {
        [r, l] => Ok((*r, *l)),
        _ => Err(Error::Domain("OU state must be (r, lambda)".into())),
    }
}

/// Bond price with intensity loading scaled by `loss_weight`.
fn scaled_bond(model: &ModelParams, t: f64, maturity: f64, x: &[f64], loss_weight: f64) -> Result<f64> {
    let s = horizon(t, maturity)?;
    match model {
        ModelParams::Ou(p) => {
            let (r, l) = ou_state(x)?;
            let c = ou_coefficients(p, s, loss_weight);
            Ok((c.a - c.b * r - c.d * l).exp())
        }
        ModelParams::Cir(p) => {
            check_cir_state(p, x)?;
            Ok(cir_log_price(p, s, x, loss_weight).exp())
        }
        ModelParams::TopDown(_) => Err(Error::Unsupported(
            "bond prices are not defined for the top-down model".into(),
        )),
    }
}

fn scaled_bond_gradient(model: &ModelParams, t: f64, maturity: f64, x: &[f64], loss_weight: f64) -> Result<Vec<f64>> {
    let s = horizon(t, maturity)?;
    let v = scaled_bond(model, t, maturity, x, loss_weight)?;
    match model {
        ModelParams::Ou(p) => {
            let c = ou_coefficients(p, s, loss_weight);
            Ok(vec![-c.b * v, -c.d * v])
        }
        ModelParams::Cir(p) => Ok((0..p.factors())
            .map(|i| -cir_factor(p.kappa[i], p.theta[i], p.sigma[i], cir_delta(p, i, loss_weight), s).b * v)
            .collect()),
        ModelParams::TopDown(_) => unreachable!(),
    }
}

/// Default-free zero-coupon bond `E[exp(−∫r)]`.
pub fn default_free_bond(model: &ModelParams, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
    match model {
        ModelParams::TopDown(p) => Ok((-p.r * horizon(t, maturity)?).exp()),
        _ => scaled_bond(model, t, maturity, x, 0.0),
    }
}

/// Zero-recovery bond for either single-name model.
pub fn bond_price(model: &ModelParams, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
    scaled_bond(model, t, maturity, x, 1.0)
}

fn check_recovery(c: f64, upper_inclusive: bool) -> Result<()> {
    let ok = if upper_inclusive {
        (0.0..=1.0).contains(&c)
    } else {
        (0.0..1.0).contains(&c)
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain(format!("recovery fraction {c} out of range")))
    }
}

/// Recovery of treasury: `(1 − c)C⁰ + cβ`.
pub fn rt_bond_price(model: &ModelParams, t: f64, maturity: f64, x: &[f64], c: f64) -> Result<f64> {
    check_recovery(c, true)?;
    Ok((1.0 - c) * bond_price(model, t, maturity, x)? + c * default_free_bond(model, t, maturity, x)?)
}

/// Recovery of market value: the zero-recovery formula with intensity
/// loading `(1 − c)`.
pub fn rmv_bond_price(model: &ModelParams, t: f64, maturity: f64, x: &[f64], c: f64) -> Result<f64> {
    check_recovery(c, false)?;
    scaled_bond(model, t, maturity, x, 1.0 - c)
}

/// The CDS integrand `exp(a(τ) − b(τ)·x)·(α(τ) + β(τ)·x)` sampled on a
/// Simpson lattice in time to payment `τ ∈ [0, T − t]`.
#[derive(Debug, Clone)]
pub struct CdsKernel {
    dim: usize,
    panels: usize,
    step: f64,
    a: Vec<f64>,
    alpha: Vec<f64>,
    b: Vec<f64>,
    beta: Vec<f64>,
}

impl CdsKernel {
    pub fn new(model: &ModelParams, t: f64, maturity: f64, spread: f64, panels: usize) -> Result<Self> {
        let s = horizon(t, maturity)?;
        let panels = (panels.max(2) + 1) & !1;
        let step = s / panels as f64;
        let dim = match model {
            ModelParams::Ou(_) => 2,
            ModelParams::Cir(p) => p.factors(),
            ModelParams::TopDown(_) => {
                return Err(Error::Unsupported("CDS is a single-name claim".into()))
            }
        };
        let mut k = Self {
            dim,
            panels,
            step,
            a: Vec::with_capacity(panels + 1),
            alpha: Vec::with_capacity(panels + 1),
            b: Vec::with_capacity((panels + 1) * dim),
            beta: Vec::with_capacity((panels + 1) * dim),
        };
        for n in 0..=panels {
            let tau = n as f64 * step;
            match model {
                ModelParams::Ou(p) => {
                    let c = ou_coefficients(p, tau, 1.0);
                    let (kl, kr) = (p.kappa_l, p.kappa_r);
                    let sl = p.mu * p.sigma_l;
                    let drift = p.mu * kl * p.theta_l * phi(kl, tau)
                        - p.rho * p.sigma_r * sl * int_exp_phi(kl, kr, tau)
                        - 0.5 * sl * sl * phi(kl, tau).powi(2);
                    k.a.push(c.a);
                    k.alpha.push(drift - spread);
                    k.b.extend([c.b, c.d]);
                    k.beta.extend([0.0, (-kl * tau).exp()]);
                }
                ModelParams::Cir(p) => {
                    let mut a = -p.r0 * tau;
                    let mut alpha = -spread;
                    for i in 0..p.factors() {
                        let delta = cir_delta(p, i, 1.0);
                        let f = cir_factor(p.kappa[i], p.theta[i], p.sigma[i], delta, tau);
                        a += f.ln_a;
                        let share = if delta > 0.0 { p.mu * p.w_l[i] / delta } else { 0.0 };
                        alpha += share * p.kappa[i] * p.theta[i] * f.b;
                        k.b.push(f.b);
                        k.beta.push(share * f.db);
                    }
                    k.a.push(a);
                    k.alpha.push(alpha);
                }
                ModelParams::TopDown(_) => unreachable!(),
            }
        }
        Ok(k)
    }

    fn weight(&self, n: usize, coarse: bool) -> f64 {
        let last = self.panels;
        if coarse {
            if n % 2 == 1 {
                return 0.0;
            }
            let m = n / 2;
            let h = 2.0 * self.step / 3.0;
            if m == 0 || n == last {
                h
            } else if m % 2 == 1 {
                4.0 * h
            } else {
                2.0 * h
            }
        } else {
            let h = self.step / 3.0;
            if n == 0 || n == last {
                h
            } else if n % 2 == 1 {
                4.0 * h
            } else {
                2.0 * h
            }
        }
    }

    /// Value and gradient with respect to the state, plus the Richardson
    /// error estimate of the value.
    pub fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let d = self.dim;
        let mut value = 0.0;
        let mut coarse = 0.0;
        let mut grad = vec![0.0; d];
        if self.step == 0.0 {
            return (0.0, grad, 0.0);
        }
        // The coarse rule needs an even number of half-panels.
        let can_coarse = self.panels.is_multiple_of(4);
        for n in 0..=self.panels {
            let b = &self.b[n * d..(n + 1) * d];
            let beta = &self.beta[n * d..(n + 1) * d];
            let mut expo = self.a[n];
            let mut bracket = self.alpha[n];
            for i in 0..d {
                expo -= b[i] * x[i];
                bracket += beta[i] * x[i];
            }
            let disc = expo.exp();
            let w = self.weight(n, false);
            value += w * disc * bracket;
            if can_coarse {
                coarse += self.weight(n, true) * disc * bracket;
            }
            for i in 0..d {
                grad[i] += w * disc * (beta[i] - b[i] * bracket);
            }
        }
        let err = if can_coarse { (value - coarse).abs() / 15.0 } else { 0.0 };
        (value, grad, err)
    }
}

/// Evaluate a CDS value and gradient, doubling the panel count until the
/// Richardson estimate meets [`CDS_TOL`].
pub fn cds_value_gradient(model: &ModelParams, t: f64, maturity: f64, x: &[f64], spread: f64) -> Result<(f64, Vec<f64>)> {
    let mut panels = CDS_PANELS;
    loop {
        let k = CdsKernel::new(model, t, maturity, spread, panels)?;
        let (v, g, err) = k.evaluate(x);
        if err <= CDS_TOL {
            return Ok((v, g));
        }
        if panels >= CDS_MAX_PANELS {
            return Err(Error::Quadrature {
                achieved: err,
                requested: CDS_TOL,
            });
        }
        panels *= 2;
    }
}

pub fn cds_price_ou(p: &OuParams, t: f64, maturity: f64, r: f64, lambda: f64, spread: f64) -> Result<f64> {
    Ok(cds_value_gradient(&ModelParams::Ou(*p), t, maturity, &[r, lambda], spread)?.0)
}

pub fn cds_price_cir(p: &CirParams, t: f64, maturity: f64, x: &[f64], spread: f64) -> Result<f64> {
    check_cir_state(p, x)?;
    Ok(cds_value_gradient(&ModelParams::Cir(p.clone()), t, maturity, x, spread)?.0)
}

/// Forward CDS with protection and premium on `[start, maturity]`.
pub fn forward_cds_price(model: &ModelParams, t: f64, start: f64, maturity: f64, x: &[f64], spread: f64) -> Result<f64> {
    if !(t <= start && start <= maturity) {
        return Err(Error::Domain(format!(
            "forward CDS needs t <= start <= maturity, got {t}, {start}, {maturity}"
        )));
    }
    Ok(cds_value_gradient(model, t, maturity, x, spread)?.0 - cds_value_gradient(model, t, start, x, spread)?.0)
}

/// Coefficients of the index swap value `k2·λ + k1·n + k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdxCoefficients {
    pub k2: f64,
    pub k1: f64,
    pub k0: f64,
}

impl CdxCoefficients {
    pub fn value(&self, lambda: f64, n: f64) -> f64 {
        self.k2 * lambda + self.k1 * n + self.k0
    }
}

/// `∫_0^s v e^{−r v} dv`.
fn int_exp_lin(r: f64, s: f64) -> f64 {
    let x = r * s;
    if x.abs() < 0.1 {
        // s² Σ (−x)^n / (n! (n + 2))
        let mut fact = 1.0;
        let mut pow = 1.0;
        let mut sum = 0.0;
        for n in 0..20 {
            if n > 0 {
                fact *= n as f64;
                pow *= -x;
            }
            sum += pow / (fact * (n as f64 + 2.0));
        }
        s * s * sum
    } else {
        (phi(r, s) - s * (-x).exp()) / r
    }
}

fn check_topdown(p: &TopDownParams) -> Result<()> {
    if p.rho_eff() == 0.0 {
        return Err(Error::Singular(
            "kappa - mu*eta*c = 0; perturb kappa or eta".into(),
        ));
    }
    Ok(())
}

/// Index swap coefficients at time `t` for a protection buyer paying
/// `spread` on the surviving notional.
pub fn cdx_coefficients(p: &TopDownParams, spread: f64, t: f64, maturity: f64) -> Result<CdxCoefficients> {
    check_topdown(p)?;
    if p.r == 0.0 {
        return Err(Error::Singular("r = 0; perturb the short rate".into()));
    }
    let s = horizon(t, maturity)?;
    let (r, rho, c) = (p.r, p.rho_eff(), p.mean_loss());
    let disc = (-r * s).exp();
    let level = p.kappa * p.mu * p.theta;
    let k2 = c * disc * phi(rho, s) + (c * r + spread) * int_exp_phi(r, rho, s);
    let k1 = spread * phi(r, s);
    let a_s = level * int_phi(rho, s);
    let int_a = level / rho * (int_exp_lin(r, s) - int_exp_phi(r, rho, s));
    let k0 = c * disc * a_s + (c * r + spread) * int_a - spread * p.names as f64 * phi(r, s);
    Ok(CdxCoefficients { k2, k1, k0 })
}

pub fn cdx_price(p: &TopDownParams, spread: f64, t: f64, maturity: f64, lambda: f64, n: f64) -> Result<f64> {
    Ok(cdx_coefficients(p, spread, t, maturity)?.value(lambda, n))
}

/// Conditional means `(E[N_u], E[Υ_u])` given `(λ, n, υ)` at time `t`.
pub fn cdx_moments(p: &TopDownParams, t: f64, u: f64, lambda: f64, n: f64, upsilon: f64) -> Result<(f64, f64)> {
    check_topdown(p)?;
    let s = horizon(t, u)?;
    let rho = p.rho_eff();
    let a = p.kappa * p.mu * p.theta * int_phi(rho, s);
    let b = phi(rho, s);
    let c = p.mean_loss();
    Ok((a + b * lambda + n, c * a + c * b * lambda + upsilon))
}

/// Pre-default value of `claim` at state `x`.
pub fn claim_price(claim: &ClaimSpec, model: &ModelParams, t: f64, x: &[f64]) -> Result<f64> {
    Ok(claim_price_gradient(claim, model, t, x)?.0)
}

/// Pre-default value and its state gradient.
pub fn claim_price_gradient(claim: &ClaimSpec, model: &ModelParams, t: f64, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    match (*claim, model) {
        (ClaimSpec::Cdx { maturity, spread }, ModelParams::TopDown(p)) => {
            let k = cdx_coefficients(p, spread, t, maturity)?;
            let n = x.get(1).copied().unwrap_or(0.0);
            Ok((k.value(x[0], n), vec![k.k2, k.k1]))
        }
        (ClaimSpec::Cdx { .. }, _) | (_, ModelParams::TopDown(_)) => Err(Error::Unsupported(
            "index swaps need the top-down model and vice versa".into(),
        )),
        (ClaimSpec::ZeroRecoveryBond { maturity }, _) => Ok((
            bond_price(model, t, maturity, x)?,
            scaled_bond_gradient(model, t, maturity, x, 1.0)?,
        )),
        (ClaimSpec::RtBond { maturity, recovery: c }, _) => {
            check_recovery(c, true)?;
            let v = rt_bond_price(model, t, maturity, x, c)?;
            let g0 = scaled_bond_gradient(model, t, maturity, x, 1.0)?;
            let gb = scaled_bond_gradient(model, t, maturity, x, 0.0)?;
            Ok((v, g0.iter().zip(&gb).map(|(a, b)| (1.0 - c) * a + c * b).collect()))
        }
        (ClaimSpec::RmvBond { maturity, recovery: c }, _) => {
            check_recovery(c, false)?;
            Ok((
                scaled_bond(model, t, maturity, x, 1.0 - c)?,
                scaled_bond_gradient(model, t, maturity, x, 1.0 - c)?,
            ))
        }
        (ClaimSpec::Cds { maturity, spread }, _) => cds_value_gradient(model, t, maturity, x, spread),
        (ClaimSpec::ForwardCds { start, maturity, spread }, _) => {
            if !(t <= start && start <= maturity) {
                return Err(Error::Domain("forward CDS needs t <= start <= maturity".into()));
            }
            let (v1, g1) = cds_value_gradient(model, t, maturity, x, spread)?;
            let (v0, g0) = cds_value_gradient(model, t, start, x, spread)?;
            Ok((v1 - v0, g1.iter().zip(&g0).map(|(a, b)| a - b).collect()))
        }
    }
}

/// Recovery paid at default, `R(t, x)`, in currency units.
pub fn claim_recovery(claim: &ClaimSpec, model: &ModelParams, t: f64, x: &[f64]) -> Result<f64> {
    match *claim {
        ClaimSpec::ZeroRecoveryBond { .. } => Ok(0.0),
        ClaimSpec::RtBond { maturity, recovery } => Ok(recovery * default_free_bond(model, t, maturity, x)?),
        ClaimSpec::RmvBond { maturity, recovery } => Ok(recovery * scaled_bond(model, t, maturity, x, 1.0 - recovery)?),
        ClaimSpec::Cds { .. } => Ok(1.0),
        ClaimSpec::ForwardCds { start, .. } => Ok(if t >= start { 1.0 } else { 0.0 }),
        ClaimSpec::Cdx { .. } => Ok(0.0),
    }
}

/// Map a market intensity to the model state used by the closed forms,
/// for one-factor models with constant rate.
pub fn state_from_lambda(model: &ModelParams, lambda: f64) -> Result<Vec<f64>> {
    match model {
        ModelParams::Ou(p) => {
            if !p.has_constant_rate() {
                return Err(Error::Unsupported("stochastic rate in a one-factor map".into()));
            }
            Ok(vec![p.theta_r, lambda])
        }
        ModelParams::Cir(p) => {
            if !p.is_intensity_only() {
                return Err(Error::Unsupported("multi-factor CIR in a one-factor map".into()));
            }
            Ok(vec![(lambda / (p.mu * p.w_l[0])).max(0.0)])
        }
        ModelParams::TopDown(_) => Ok(vec![lambda, 0.0]),
    }
}

/// `dx/dλ` for the one-factor state map.
fn state_scale(model: &ModelParams) -> f64 {
    match model {
        ModelParams::Cir(p) => 1.0 / (p.mu * p.w_l[0]),
        _ => 1.0,
    }
}

/// Value and `∂/∂λ` of a claim in market-intensity coordinates.
pub fn price_in_lambda(claim: &ClaimSpec, model: &ModelParams, t: f64, lambda: f64) -> Result<(f64, f64)> {
    let x = state_from_lambda(model, lambda)?;
    let (v, g) = claim_price_gradient(claim, model, t, &x)?;
    let idx = match model {
        ModelParams::Ou(_) => 1,
        _ => 0,
    };
    Ok((v, g[idx] * state_scale(model)))
}

/// Values of a claim on every node of a time × intensity lattice.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    pub grid: Grid,
    /// `values[n][j]` at time node `n`, intensity node `j`.
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Closed-form values and `∂/∂λ` on a lattice, using one CDS kernel per
/// time node.
#[allow(clippy::type_complexity)]
pub fn closed_form_surface(claim: &ClaimSpec, model: &ModelParams, grid: &Grid) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let lambdas = grid.lambdas();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..=grid.steps)
        .into_par_iter()
        .map(|n| {
            let t = grid.t(n);
            match (*claim, model) {
                (ClaimSpec::Cds { maturity, spread }, ModelParams::Ou(_) | ModelParams::Cir(_)) => {
                    cds_row(model, t, maturity, spread, &lambdas)
                }
                (ClaimSpec::ZeroRecoveryBond { maturity } | ClaimSpec::RmvBond { maturity, .. }, ModelParams::Ou(p))
                    if p.has_constant_rate() =>
                {
                    let w = match *claim {
                        ClaimSpec::RmvBond { recovery, .. } => 1.0 - recovery,
                        _ => 1.0,
                    };
                    let c = ou_coefficients(p, horizon(t, maturity)?, w);
                    let v: Vec<f64> = lambdas.iter().map(|l| (c.a - c.b * p.theta_r - c.d * l).exp()).collect();
                    let d = v.iter().map(|x| -c.d * x).collect();
                    Ok((v, d))
                }
                _ => lambdas.iter().map(|&l| price_in_lambda(claim, model, t, l)).collect::<Result<Vec<_>>>().map(|p| p.into_iter().unzip()),
            }
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

fn cds_row(model: &ModelParams, t: f64, maturity: f64, spread: f64, lambdas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx = if matches!(model, ModelParams::Ou(_)) { 1 } else { 0 };
    let scale = state_scale(model);
    let mut panels = CDS_PANELS;
    'refine: loop {
        let kernel = CdsKernel::new(model, t, maturity, spread, panels)?;
        let mut v = Vec::with_capacity(lambdas.len());
        let mut d = Vec::with_capacity(lambdas.len());
        for &l in lambdas {
            let x = state_from_lambda(model, l)?;
            let (val, g, err) = kernel.evaluate(&x);
            if err > CDS_TOL {
                if panels >= CDS_MAX_PANELS {
                    return Err(Error::Quadrature {
                        achieved: err,
                        requested: CDS_TOL,
                    });
                }
                panels *= 2;
                continue 'refine;
            }
            v.push(val);
            d.push(g[idx] * scale);
        }
        return Ok((v, d));
    }
}

/// Implicit finite-difference solution of the pricing PDE in the market
/// intensity for a one-factor model with constant rate.
///
/// The upper boundary carries the Neumann slope of the closed form; the
/// lower boundary is the degenerate square-root row for CIR and a Dirichlet
/// value from the closed form for OU.
pub fn pde_price(claim: &ClaimSpec, model: &ModelParams, grid: &Grid) -> Result<PriceSurface> {
    let view = one_factor_view(&MeasurePair::agreeing(model.clone()))?;
    let dynamics = view.market;
    let r = view.rate;
    let maturity = claim.maturity();
    if (grid.maturity - maturity).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from claim maturity {maturity}",
            grid.maturity
        )));
    }
    let (terminal, loss_weight, recovery, spread) = match *claim {
        ClaimSpec::ZeroRecoveryBond { .. } => (1.0, 1.0, 0.0, 0.0),
        ClaimSpec::RtBond { recovery, .. } => (1.0, 1.0, recovery, 0.0),
        ClaimSpec::RmvBond { recovery, .. } => (1.0, 1.0 - recovery, 0.0, 0.0),
        ClaimSpec::Cds { spread, .. } => (0.0, 1.0, 1.0, spread),
        _ => {
            return Err(Error::Unsupported(
                "the PDE pricer covers bonds and spot CDS".into(),
            ))
        }
    };
    let op = Operator::assemble(grid, |l| Coefficients {
        drift: dynamics.drift(l),
        variance: dynamics.variance(l),
        killing: r + loss_weight * l,
    });
    let mut warnings = Vec::new();
    if (1..grid.cells).any(|j| op.diag[j] < op.lo[j] + op.up[j]) {
        warnings.push("operator is not diagonally dominant; refine the time step".to_string());
    }
    let lambdas = grid.lambdas();
    let k = grid.cells;
    let (h, dt) = (grid.h(), grid.dt());
    let mut values = vec![vec![0.0; k + 1]; grid.steps + 1];
    values[grid.steps] = vec![terminal; k + 1];
    for n in (0..grid.steps).rev() {
        let t = grid.t(n);
        let rt_recovery = if recovery > 0.0 && claim.is_bond() {
            recovery * (-r * (maturity - t)).exp()
        } else {
            recovery
        };
        let mut rhs: Vec<f64> = (0..=k)
            .map(|j| values[n + 1][j] + dt * (lambdas[j] * rt_recovery - spread))
            .collect();
        let mut lo: Vec<f64> = op.lo.iter().map(|v| -v).collect();
        let mut diag = op.diag.clone();
        let mut up: Vec<f64> = op.up.iter().map(|v| -v).collect();
        // Neumann slope at the top from the closed form
        let (_, slope) = price_in_lambda(claim, model, t, grid.lambda_max)?;
        lo[k] = -1.0;
        diag[k] = 1.0;
        up[k] = 0.0;
        rhs[k] = h * slope;
        if !view.nonnegative {
            let (v0, _) = price_in_lambda(claim, model, t, grid.lambda_min)?;
            lo[0] = 0.0;
            diag[0] = 1.0;
            up[0] = 0.0;
            rhs[0] = v0;
        }
        values[n] = solve_tridiagonal(&lo, &diag, &up, &rhs);
    }
    Ok(PriceSurface {
        grid: *grid,
        values,
        warnings,
    })
}
