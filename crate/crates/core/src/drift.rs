//! The drift function `G`: the expected rate at which the discounted market
//! price gains under the investor's measure. Its sign decides between
//! waiting and acting.
//!
//! In general `G = −∇C·(b − b̃) + (R − C)(μ̃/μ − 1)λ`, where `b − b̃` is the
//! market-minus-investor drift of the state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::models::{drift_difference, one_factor_view, ClaimSpec, MeasurePair, ModelParams, Pair, TopDownParams};
use crate::numeric::PiecewiseLinear;
use crate::pricers::{
    cdx_coefficients, claim_price_gradient, claim_recovery, closed_form_surface, ou_coefficients,
    cir_factor, state_from_lambda,
};

fn market_intensity(pair: &MeasurePair, x: &[f64]) -> f64 {
    match pair {
        MeasurePair::Ou(_) => x[1],
        MeasurePair::Cir(p) => p.market.mu * p.market.w_l.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        MeasurePair::TopDown(_) => x[0],
    }
}

/// `G` from closed-form prices and gradients, for any supported claim.
pub fn g_general(claim: &ClaimSpec, pair: &MeasurePair, t: f64, x: &[f64]) -> Result<f64> {
    if let (ClaimSpec::Cdx { spread, .. }, MeasurePair::TopDown(p)) = (claim, pair) {
        return g_cdx(p, *spread, claim.maturity(), t, x[0]);
    }
    let market = pair.market();
    let (c, grad) = claim_price_gradient(claim, &market, t, x)?;
    let r = claim_recovery(claim, &market, t, x)?;
    let gap = drift_difference(pair, x);
    let lam = market_intensity(pair, x);
    let diffusion: f64 = grad.iter().zip(&gap).map(|(g, d)| g * d).sum();
    Ok(-diffusion + (r - c) * (pair.intensity_ratio() - 1.0) * lam)
}

/// `G` from a sampled price row at one time node, with centered
/// differences in the interior and one-sided stencils at the edges.
/// `recovery[j]` is `R` at node `j`.
pub fn g_from_surface(pair: &MeasurePair, grid: &Grid, prices: &[f64], recovery: &[f64]) -> Result<Vec<f64>> {
    let k = prices.len();
    if k < 3 || k != grid.cells + 1 || recovery.len() != k {
        return Err(Error::TooCoarse(format!(
            "need at least 3 matching nodes for a gradient, got {k}"
        )));
    }
    let view = one_factor_view(pair)?;
    let h = grid.h();
    let ratio = view.intensity_ratio - 1.0;
    Ok((0..k)
        .map(|j| {
            let d = if j == 0 {
                (-3.0 * prices[0] + 4.0 * prices[1] - prices[2]) / (2.0 * h)
            } else if j == k - 1 {
                (3.0 * prices[j] - 4.0 * prices[j - 1] + prices[j - 2]) / (2.0 * h)
            } else {
                (prices[j + 1] - prices[j - 1]) / (2.0 * h)
            };
            let l = grid.lambda(j);
            let gap = view.market.drift(l) - view.investor.drift(l);
            -d * gap + (recovery[j] - prices[j]) * ratio * l
        })
        .collect())
}

/// Zero-recovery OU bond, in the separable form
/// `C⁰·(B(κ̃_r − κ_r)r + B(κ_rθ_r − κ̃_rθ̃_r) + [D(κ̃_λ − κ_λ) − (μ̃/μ − 1)]λ + μD(κ_λθ_λ − κ̃_λθ̃_λ))`.
pub fn g_bond_ou(pair: &MeasurePair, t: f64, maturity: f64, r: f64, lambda: f64) -> Result<f64> {
    let MeasurePair::Ou(Pair { market: m, investor: i }) = pair else {
        return Err(Error::Unsupported("g_bond_ou needs an OU pair".into()));
    };
    let s = maturity - t;
    if s < 0.0 {
        return Err(Error::Domain(format!("time {t} is after maturity {maturity}")));
    }
    let c = ou_coefficients(m, s, 1.0);
    let price = (c.a - c.b * r - c.d * lambda).exp();
    let bracket = c.b * (i.kappa_r - m.kappa_r) * r
        + c.b * (m.kappa_r * m.theta_r - i.kappa_r * i.theta_r)
        + (c.d * (i.kappa_l - m.kappa_l) - (i.mu / m.mu - 1.0)) * lambda
        + m.mu * c.d * (m.kappa_l * m.theta_l - i.kappa_l * i.theta_l);
    Ok(price * bracket)
}

/// Zero-recovery multifactor CIR bond:
/// `C⁰·Σ_i([B_i(κ̃_i − κ_i) − (μ̃ − μ)w^λ_i]x_i + B_i(κ_iθ_i − κ̃_iθ̃_i))`.
pub fn g_bond_cir(pair: &MeasurePair, t: f64, maturity: f64, x: &[f64]) -> Result<f64> {
    let MeasurePair::Cir(Pair { market: m, investor: i }) = pair else {
        return Err(Error::Unsupported("g_bond_cir needs a CIR pair".into()));
    };
    let s = maturity - t;
    if s < 0.0 {
        return Err(Error::Domain(format!("time {t} is after maturity {maturity}")));
    }
    let mut log_price = -m.r0 * s;
    let mut bracket = 0.0;
    for k in 0..m.factors() {
        let delta = m.w_r[k] + m.mu * m.w_l[k];
        let f = cir_factor(m.kappa[k], m.theta[k], m.sigma[k], delta, s);
        log_price += f.ln_a - f.b * x[k];
        bracket += (f.b * (i.kappa[k] - m.kappa[k]) - (i.mu - m.mu) * m.w_l[k]) * x[k]
            + f.b * (m.kappa[k] * m.theta[k] - i.kappa[k] * i.theta[k]);
    }
    Ok(log_price.exp() * bracket)
}

/// Recovery-of-treasury bond:
/// `−∇C^{RT}·(b − b̃) + (c − 1)(μ̃/μ − 1)λ C⁰`.
pub fn g_rt(pair: &MeasurePair, t: f64, maturity: f64, x: &[f64], recovery: f64) -> Result<f64> {
    let claim = ClaimSpec::RtBond { maturity, recovery };
    let market = pair.market();
    let (_, grad) = claim_price_gradient(&claim, &market, t, x)?;
    let (c0, _) = claim_price_gradient(&ClaimSpec::ZeroRecoveryBond { maturity }, &market, t, x)?;
    let gap = drift_difference(pair, x);
    let diffusion: f64 = grad.iter().zip(&gap).map(|(g, d)| g * d).sum();
    let lam = market_intensity(pair, x);
    Ok(-diffusion + (recovery - 1.0) * (pair.intensity_ratio() - 1.0) * lam * c0)
}

/// CDS protection buyer: `−∇C^{CDS}·(b − b̃) + (1 − C^{CDS})(μ̃/μ − 1)λ`.
pub fn g_cds(pair: &MeasurePair, t: f64, maturity: f64, x: &[f64], spread: f64) -> Result<f64> {
    g_general(&ClaimSpec::Cds { maturity, spread }, pair, t, x)
}

/// Index swap drift, affine in `λ` and independent of the default count:
/// `((μηk2 + 1)(μ̃c̃/μ − c) + k1(μ̃/μ − 1) − k2(κ̃ − κ))λ + k2μ(κ̃θ̃ − κθ)`.
pub fn g_cdx(pair: &Pair<TopDownParams>, spread: f64, maturity: f64, t: f64, lambda: f64) -> Result<f64> {
    let (slope, intercept) = g_cdx_affine(pair, spread, maturity, t)?;
    Ok(slope * lambda + intercept)
}

/// Slope and intercept of [`g_cdx`] in `λ`.
pub fn g_cdx_affine(pair: &Pair<TopDownParams>, spread: f64, maturity: f64, t: f64) -> Result<(f64, f64)> {
    let (m, i) = (&pair.market, &pair.investor);
    let k = cdx_coefficients(m, spread, t, maturity)?;
    let ratio = i.mu / m.mu;
    let (c, ct) = (m.mean_loss(), i.mean_loss());
    let slope = (m.mu * m.eta * k.k2 + 1.0) * (ratio * ct - c) + k.k1 * (ratio - 1.0)
        - k.k2 * (i.kappa - m.kappa);
    let intercept = k.k2 * m.mu * (i.kappa * i.theta - m.kappa * m.theta);
    Ok((slope, intercept))
}

/// `G` on every node of a one-factor lattice, `g[n][j]`.
pub fn drift_grid(claim: &ClaimSpec, pair: &MeasurePair, grid: &Grid) -> Result<Vec<Vec<f64>>> {
    if (grid.maturity - claim.maturity()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "grid horizon {} differs from claim maturity {}",
            grid.maturity,
            claim.maturity()
        )));
    }
    let lambdas = grid.lambdas();
    if let (ClaimSpec::Cdx { spread, maturity }, MeasurePair::TopDown(p)) = (claim, pair) {
        return (0..=grid.steps)
            .map(|n| {
                let (a, b) = g_cdx_affine(p, *spread, *maturity, grid.t(n))?;
                Ok(lambdas.iter().map(|l| a * l + b).collect())
            })
            .collect();
    }
    let view = one_factor_view(pair)?;
    let market = pair.market();
    let (values, deltas) = closed_form_surface(claim, &market, grid)?;
    let ratio = view.intensity_ratio - 1.0;
    (0..=grid.steps)
        .into_par_iter()
        .map(|n| {
            let t = grid.t(n);
            lambdas
                .iter()
                .enumerate()
                .map(|(j, &l)| {
                    let gap = view.market.drift(l) - view.investor.drift(l);
                    let r = recovery_in_lambda(claim, &market, t, l)?;
                    Ok(-deltas[n][j] * gap + (r - values[n][j]) * ratio * l)
                })
                .collect()
        })
        .collect()
}

fn recovery_in_lambda(claim: &ClaimSpec, market: &ModelParams, t: f64, l: f64) -> Result<f64> {
    match claim {
        ClaimSpec::ZeroRecoveryBond { .. } | ClaimSpec::Cds { .. } => claim_recovery(claim, market, t, &[]),
        _ => claim_recovery(claim, market, t, &state_from_lambda(market, l)?),
    }
}

/// Deterministic inputs as piecewise-linear schedules in calendar time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicInputs {
    pub rate: PiecewiseLinear,
    /// Historical intensity `λ̂(t)`.
    pub lambda_hat: PiecewiseLinear,
    pub mu: PiecewiseLinear,
    pub mu_investor: PiecewiseLinear,
    pub recovery: PiecewiseLinear,
    /// Pre-default market price `C(t)`.
    pub price: PiecewiseLinear,
}

impl DeterministicInputs {
    /// Knot times of every schedule.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = [&self.rate, &self.lambda_hat, &self.mu, &self.mu_investor, &self.recovery, &self.price]
            .iter()
            .flat_map(|s| s.knots.iter().map(|k| k.0))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// `G(t) = (R(t) − C(t))(μ̃(t) − μ(t))λ̂(t)`.
pub fn g_deterministic(s: &DeterministicInputs, t: f64) -> f64 {
    (s.recovery.eval(t) - s.price.eval(t)) * (s.mu_investor.eval(t) - s.mu.eval(t)) * s.lambda_hat.eval(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CirParams, LossDist, OuParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ou_pair(kt: f64, mut_: f64) -> MeasurePair {
        let m = OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0);
        let mut i = m;
        i.kappa_l = kt;
        i.mu = mut_;
        MeasurePair::new(ModelParams::Ou(m), ModelParams::Ou(i)).unwrap()
    }

    fn cir_pair(k: f64, kt: f64) -> MeasurePair {
        let m = CirParams::one_factor(0.03, k, 0.015, 0.07, 1.0, 2.0);
        let mut i = m.clone();
        i.kappa = vec![kt];
        MeasurePair::new(ModelParams::Cir(m), ModelParams::Cir(i)).unwrap()
    }

    #[test]
    fn agreement_gives_zero_drift() {
        let claims = [
            ClaimSpec::ZeroRecoveryBond { maturity: 1.0 },
            ClaimSpec::RtBond { maturity: 1.0, recovery: 0.4 },
            ClaimSpec::RmvBond { maturity: 1.0, recovery: 0.4 },
            ClaimSpec::Cds { maturity: 1.0, spread: 0.02 },
        ];
        for pair in [ou_pair(0.2, 2.0), cir_pair(0.2, 0.2)] {
            for c in &claims {
                let x = state_from_lambda(&pair.market(), 0.04).unwrap();
                assert_eq!(g_general(c, &pair, 0.3, &x).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn ou_separable_form_matches_general() {
        let mut m = OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0);
        m.kappa_r = 0.3;
        m.sigma_r = 0.01;
        m.rho = 0.2;
        let mut i = m;
        i.kappa_r = 0.4;
        i.theta_r = 0.035;
        i.kappa_l = 0.35;
        i.theta_l = 0.02;
        i.mu = 2.5;
        let pair = MeasurePair::new(ModelParams::Ou(m), ModelParams::Ou(i)).unwrap();
        for &(r, l) in &[(0.03, 0.01), (0.05, 0.08), (0.0, -0.02)] {
            let a = g_bond_ou(&pair, 0.25, 1.5, r, l).unwrap();
            let b = g_general(&ClaimSpec::ZeroRecoveryBond { maturity: 1.5 }, &pair, 0.25, &[r, l]).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn cir_separable_form_matches_general() {
        let m = CirParams {
            kappa: vec![0.2, 0.5],
            theta: vec![0.015, 0.03],
            sigma: vec![0.07, 0.1],
            w_r: vec![0.0, 1.0],
            w_l: vec![1.0, 0.3],
            mu: 2.0,
            r0: 0.01,
        };
        let mut i = m.clone();
        i.kappa = vec![0.3, 0.45];
        i.theta = vec![0.02, 0.03];
        i.mu = 1.7;
        let pair = MeasurePair::new(ModelParams::Cir(m), ModelParams::Cir(i)).unwrap();
        let x = [0.02, 0.04];
        let a = g_bond_cir(&pair, 0.1, 2.0, &x).unwrap();
        let b = g_general(&ClaimSpec::ZeroRecoveryBond { maturity: 2.0 }, &pair, 0.1, &x).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn event_premium_only_gives_constant_sign() {
        let pair = ou_pair(0.2, 2.4);
        for &l in &[0.001, 0.03, 0.2] {
            let g = g_bond_ou(&pair, 0.0, 1.0, 0.03, l).unwrap();
            let c0 = crate::pricers::ou_bond_price(&OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0), 0.0, 1.0, 0.03, l)
                .unwrap();
            assert_relative_eq!(g, -c0 * 0.2 * l, max_relative = 1e-12);
        }
    }

    #[test]
    fn speed_only_root_at_long_run_level() {
        let pair = ou_pair(0.3, 2.0);
        assert!(g_bond_ou(&pair, 0.0, 1.0, 0.03, 0.03).unwrap().abs() < 1e-16);
        assert!(g_bond_ou(&pair, 0.0, 1.0, 0.03, 0.02).unwrap() < 0.0);
        assert!(g_bond_ou(&pair, 0.0, 1.0, 0.03, 0.04).unwrap() > 0.0);
    }

    #[test]
    fn cir_speed_only_root() {
        // bracket B(κ̃ − κ)x + B(κθ − κ̃θ) vanishes at x = θ
        let pair = cir_pair(0.2, 0.3);
        assert!(g_bond_cir(&pair, 0.0, 1.0, &[0.015]).unwrap().abs() < 1e-16);
    }

    #[test]
    fn rt_reductions() {
        let pair = ou_pair(0.3, 2.0);
        let x = [0.03, 0.05];
        let g0 = g_bond_ou(&pair, 0.0, 1.0, 0.03, 0.05).unwrap();
        assert_relative_eq!(g_rt(&pair, 0.0, 1.0, &x, 0.0).unwrap(), g0, max_relative = 1e-12);
        assert_eq!(g_rt(&pair, 0.0, 1.0, &x, 1.0).unwrap(), 0.0);
        let pair = ou_pair(0.2, 2.5);
        for &l in &[0.0, 0.02, 0.3] {
            assert!(g_rt(&pair, 0.0, 1.0, &[0.03, l], 0.4).unwrap() <= 0.0);
        }
    }

    #[test]
    fn cds_sign_follows_event_premium() {
        let pair = cir_pair(0.2, 0.2);
        let MeasurePair::Cir(mut p) = pair else { unreachable!() };
        p.investor.mu = 2.5;
        let pair = MeasurePair::Cir(p);
        for &x in &[0.001, 0.01, 0.1] {
            assert!(g_cds(&pair, 0.0, 1.0, &[x], 0.02).unwrap() > 0.0);
        }
    }

    #[test]
    fn surface_gradient_is_second_order() {
        let pair = cir_pair(0.2, 0.3);
        let claim = ClaimSpec::ZeroRecoveryBond { maturity: 1.0 };
        let market = pair.market();
        let err = |cells: usize| {
            let g = Grid::new(1.0, 1, cells, 0.0, 0.3).unwrap();
            let prices: Vec<f64> = g
                .lambdas()
                .iter()
                .map(|&l| crate::pricers::price_in_lambda(&claim, &market, 0.0, l).unwrap().0)
                .collect();
            let gs = g_from_surface(&pair, &g, &prices, &vec![0.0; cells + 1]).unwrap();
            let j = cells / 2;
            let exact = g_general(&claim, &pair, 0.0, &state_from_lambda(&market, g.lambda(j)).unwrap()).unwrap();
            (gs[j] - exact).abs()
        };
        let (e1, e2) = (err(40), err(80));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
        assert!(g_from_surface(&pair, &Grid::new(1.0, 1, 2, 0.0, 0.3).unwrap(), &[1.0, 1.0], &[0.0, 0.0]).is_err());
    }

    fn td(kappa: f64, mu: f64, c: f64) -> TopDownParams {
        TopDownParams {
            kappa,
            theta: 1.0,
            sigma: 0.5,
            eta: 0.25,
            mu,
            loss: LossDist::Constant { value: c },
            names: 10,
            r: 0.03,
        }
    }

    #[test]
    fn cdx_drift_limits() {
        let p = Pair { market: td(0.5, 1.1, 0.5), investor: td(0.5, 1.1, 0.5) };
        assert_eq!(g_cdx(&p, 0.02, 5.0, 1.0, 2.0).unwrap(), 0.0);
        let p = Pair { market: td(0.5, 1.1, 0.5), investor: td(1.0, 1.3, 0.6) };
        let at_t = g_cdx(&p, 0.02, 5.0, 5.0, 2.0).unwrap();
        assert_relative_eq!(at_t, (1.3 * 0.6 / 1.1 - 0.5) * 2.0, max_relative = 1e-14);
    }

    #[test]
    fn cdx_drift_matches_generator_definition() {
        // ∂_λC·((κ̃θ̃ − κθ)μ − (κ̃ − κ)λ) + ∫(z + C(λ+μηz, n+1) − C(λ, n))(μ̃/μ m̃ − m)λ dz
        let p = Pair { market: td(0.5, 1.1, 0.5), investor: td(1.0, 1.3, 0.6) };
        let (m, i) = (&p.market, &p.investor);
        let k = cdx_coefficients(m, 0.02, 1.0, 5.0).unwrap();
        let lam = 1.4;
        let jump = |z: f64| z + k.k2 * m.mu * m.eta * z + k.k1;
        let direct = k.k2 * ((i.kappa * i.theta - m.kappa * m.theta) * m.mu - (i.kappa - m.kappa) * lam)
            + (i.mu / m.mu * jump(0.6) - jump(0.5)) * lam;
        assert_relative_eq!(g_cdx(&p, 0.02, 5.0, 1.0, lam).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn deterministic_drift() {
        let s = DeterministicInputs {
            rate: PiecewiseLinear::constant(0.03),
            lambda_hat: PiecewiseLinear::constant(0.02),
            mu: PiecewiseLinear::constant(2.0),
            mu_investor: PiecewiseLinear::constant(2.0),
            recovery: PiecewiseLinear::constant(0.0),
            price: PiecewiseLinear::constant(0.9),
        };
        assert_eq!(g_deterministic(&s, 0.5), 0.0);
        let mut s2 = s.clone();
        s2.mu_investor = PiecewiseLinear::constant(2.5);
        assert!(g_deterministic(&s2, 0.5) < 0.0);
    }

    proptest! {
        #[test]
        fn bond_drift_over_price_is_affine(l1 in 0.0f64..0.3, l2 in 0.0f64..0.3, t in 0.0f64..1.0) {
            let pair = ou_pair(0.35, 2.3);
            let m = OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0);
            let f = |l: f64| g_bond_ou(&pair, t, 1.0, 0.03, l).unwrap()
                / crate::pricers::ou_bond_price(&m, t, 1.0, 0.03, l).unwrap();
            prop_assert!((f(0.5 * (l1 + l2)) - 0.5 * (f(l1) + f(l2))).abs() < 1e-12);
        }
    }
}
