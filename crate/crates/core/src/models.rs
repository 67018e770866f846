//! Model dynamics, market/investor measure pairs and claim descriptions.
//!
//! Every model is parameterised under a pricing measure. A [`MeasurePair`]
//! bundles the market's parameters with the investor's; the two may differ
//! in drift coefficients, event risk premium and loss law, but never in
//! volatilities, correlation, self-excitation or factor weights.
//!
//! The intensity coordinate used throughout the solver is the market
//! risk-neutral intensity `λ = μ·λ̂`; the investor intensity is `(μ̃/μ)·λ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-factor Gaussian model for the short rate and the historical intensity.
///
/// Under the pricing measure the pair `(r, λ)` with `λ = μ λ̂` follows
/// `dr = κ_r(θ_r − r)dt + σ_r dW¹` and
/// `dλ = κ_λ(μθ_λ − λ)dt + μσ_λ(ρ dW¹ + √(1−ρ²) dW²)`.
/// A constant short rate is expressed as `kappa_r = sigma_r = 0` with the
/// level in `theta_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa_r: f64,
    pub theta_r: f64,
    pub sigma_r: f64,
    pub kappa_l: f64,
    pub theta_l: f64,
    pub sigma_l: f64,
    pub rho: f64,
    pub mu: f64,
}

impl OuParams {
    /// Intensity-only model with a constant short rate `r`.
    pub fn constant_rate(r: f64, kappa_l: f64, theta_l: f64, sigma_l: f64, mu: f64) -> Self {
        Self {
            kappa_r: 0.0,
            theta_r: r,
            sigma_r: 0.0,
            kappa_l,
            theta_l,
            sigma_l,
            rho: 0.0,
            mu,
        }
    }

    pub fn has_constant_rate(&self) -> bool {
        self.kappa_r == 0.0 && self.sigma_r == 0.0
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        nonneg(out, "sigma_r", self.sigma_r);
        nonneg(out, "sigma_l", self.sigma_l);
        nonneg(out, "kappa_r", self.kappa_r);
        nonneg(out, "kappa_l", self.kappa_l);
        if !(self.rho.abs() <= 1.0) {
            out.push(Violation::new("rho", format!("|rho| must be at most 1, got {}", self.rho)));
        }
        positive(out, "mu", self.mu);
    }
}

/// Multifactor CIR model. Each factor follows
/// `dX_i = κ_i(θ_i − X_i)dt + σ_i√X_i dW_i` with independent drivers; the
/// short rate is `r0 + Σ w^r_i X_i` and the historical intensity is
/// `Σ w^λ_i X_i`, so the market intensity is `λ = μ Σ w^λ_i X_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub kappa: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_l: Vec<f64>,
    pub mu: f64,
    /// Deterministic shift of the short rate.
    #[serde(default)]
    pub r0: f64,
}

impl CirParams {
    /// Single factor driving the intensity only, with constant rate `r`.
    pub fn one_factor(r: f64, kappa: f64, theta: f64, sigma: f64, w_l: f64, mu: f64) -> Self {
        Self {
            kappa: vec![kappa],
            theta: vec![theta],
            sigma: vec![sigma],
            w_r: vec![0.0],
            w_l: vec![w_l],
            mu,
            r0: r,
        }
    }

    pub fn factors(&self) -> usize {
        self.kappa.len()
    }

    /// Whether the model is a single factor with no rate loading, the
    /// shape the one-dimensional solvers accept.
    pub fn is_intensity_only(&self) -> bool {
        self.factors() == 1 && self.w_r[0] == 0.0 && self.w_l[0] > 0.0
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let n = self.kappa.len();
        if n == 0 {
            out.push(Violation::new("kappa", "at least one factor is required"));
        }
        for (name, v) in [
            ("theta", &self.theta),
            ("sigma", &self.sigma),
            ("w_r", &self.w_r),
            ("w_l", &self.w_l),
        ] {
            if v.len() != n {
                out.push(Violation::new(
                    name,
                    format!("expected {n} entries, got {}", v.len()),
                ));
            }
        }
        if out.iter().any(|v| v.message.starts_with("expected")) {
            return;
        }
        for i in 0..n {
            nonneg(out, &format!("kappa[{i}]"), self.kappa[i]);
            nonneg(out, &format!("theta[{i}]"), self.theta[i]);
            nonneg(out, &format!("sigma[{i}]"), self.sigma[i]);
            nonneg(out, &format!("w_r[{i}]"), self.w_r[i]);
            nonneg(out, &format!("w_l[{i}]"), self.w_l[i]);
            let lhs = 2.0 * self.kappa[i] * self.theta[i];
            let rhs = self.sigma[i] * self.sigma[i];
            if !(lhs > rhs) {
                out.push(Violation::new(
                    format!("sigma[{i}]"),
                    format!("Feller condition fails: 2*kappa*theta = {lhs} <= sigma^2 = {rhs}"),
                ));
            }
        }
        if self.w_r.iter().chain(&self.w_l).all(|&w| w == 0.0) {
            out.push(Violation::new("w_l", "all factor weights are zero"));
        }
        positive(out, "mu", self.mu);
    }
}

/// Per-default loss law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossDist {
    Constant { value: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl LossDist {
    pub fn mean(&self) -> f64 {
        match self {
            LossDist::Constant { value } => *value,
            LossDist::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            LossDist::Constant { value } => value * value,
            LossDist::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * v * p).sum()
            }
        }
    }

    /// Support points and their probabilities.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            LossDist::Constant { value } => vec![(*value, 1.0)],
            LossDist::Discrete { values, probs } => {
                values.iter().copied().zip(probs.iter().copied()).collect()
            }
        }
    }

    /// Draw a loss from a uniform variate in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            LossDist::Constant { value } => *value,
            LossDist::Discrete { values, probs } => {
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap_or(&0.0)
            }
        }
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        match self {
            LossDist::Constant { value } => positive(out, "loss.value", *value),
            LossDist::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    out.push(Violation::new(
                        "loss.probs",
                        "values and probs must be non-empty and of equal length",
                    ));
                    return;
                }
                if values.iter().any(|&v| !(v > 0.0)) {
                    out.push(Violation::new("loss.values", "losses must be positive"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) {
                    out.push(Violation::new("loss.probs", "probabilities must be nonnegative"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    out.push(Violation::new(
                        "loss.probs",
                        format!("probabilities sum to {total}, not 1"),
                    ));
                }
            }
        }
    }
}

/// Self-exciting top-down portfolio model. Under the pricing measure
/// `dλ = κ(μθ − λ)dt + σ√(μλ) dW + μη dΥ`, where `Υ` is cumulative loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDownParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub eta: f64,
    pub mu: f64,
    pub loss: LossDist,
    /// Number of reference names.
    pub names: u32,
    /// Constant short rate.
    pub r: f64,
}

impl TopDownParams {
    /// Mean loss per default, `c`.
    pub fn mean_loss(&self) -> f64 {
        self.loss.mean()
    }

    /// Effective reversion speed `κ − μηc` of the expected intensity.
    pub fn rho_eff(&self) -> f64 {
        self.kappa - self.mu * self.eta * self.mean_loss()
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        nonneg(out, "kappa", self.kappa);
        nonneg(out, "theta", self.theta);
        nonneg(out, "sigma", self.sigma);
        nonneg(out, "eta", self.eta);
        positive(out, "mu", self.mu);
        if self.names == 0 {
            out.push(Violation::new("names", "at least one reference name is required"));
        }
        self.loss.violations(out);
        if self.rho_eff() == 0.0 {
            out.push(Violation::new(
                "kappa",
                "kappa - mu*eta*c vanishes; closed forms are singular",
            ));
        }
    }
}

/// Parameters of one measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Ou(OuParams),
    Cir(CirParams),
    TopDown(TopDownParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Ou(_) => ModelKind::Ou,
            ModelParams::Cir(_) => ModelKind::Cir,
            ModelParams::TopDown(_) => ModelKind::TopDown,
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            ModelParams::Ou(p) => p.mu,
            ModelParams::Cir(p) => p.mu,
            ModelParams::TopDown(p) => p.mu,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        match self {
            ModelParams::Ou(p) => p.violations(&mut out),
            ModelParams::Cir(p) => p.violations(&mut out),
            ModelParams::TopDown(p) => p.violations(&mut out),
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ou,
    Cir,
    TopDown,
}

/// Which measure a computation runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Market,
    Investor,
}

/// Market and investor parameter sets of the same model.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub market: T,
    pub investor: T,
}

impl<T> Pair<T> {
    pub fn get(&self, measure: Measure) -> &T {
        match measure {
            Measure::Market => &self.market,
            Measure::Investor => &self.investor,
        }
    }
}

/// A validated (market, investor) pair.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasurePair {
    Ou(Pair<OuParams>),
    Cir(Pair<CirParams>),
    TopDown(Pair<TopDownParams>),
}

impl MeasurePair {
    /// Build a pair, rejecting mismatched kinds or differing shared fields.
    pub fn new(market: ModelParams, investor: ModelParams) -> Result<Self> {
        let mut v = Vec::new();
        let pair = match (market, investor) {
            (ModelParams::Ou(m), ModelParams::Ou(i)) => {
                same(&mut v, "sigma_r", m.sigma_r, i.sigma_r);
                same(&mut v, "sigma_l", m.sigma_l, i.sigma_l);
                same(&mut v, "rho", m.rho, i.rho);
                MeasurePair::Ou(Pair { market: m, investor: i })
            }
            (ModelParams::Cir(m), ModelParams::Cir(i)) => {
                same_vec(&mut v, "sigma", &m.sigma, &i.sigma);
                same_vec(&mut v, "w_r", &m.w_r, &i.w_r);
                same_vec(&mut v, "w_l", &m.w_l, &i.w_l);
                same(&mut v, "r0", m.r0, i.r0);
                if m.kappa.len() != i.kappa.len() {
                    v.push(Violation::new("kappa", "factor counts differ between measures"));
                }
                MeasurePair::Cir(Pair { market: m, investor: i })
            }
            (ModelParams::TopDown(m), ModelParams::TopDown(i)) => {
                same(&mut v, "sigma", m.sigma, i.sigma);
                same(&mut v, "eta", m.eta, i.eta);
                same(&mut v, "r", m.r, i.r);
                if m.names != i.names {
                    v.push(Violation::new("names", "name counts differ between measures"));
                }
                MeasurePair::TopDown(Pair { market: m, investor: i })
            }
            (m, i) => {
                return Err(Error::Invalid(vec![Violation::new(
                    "kind",
                    format!("market is {:?} but investor is {:?}", m.kind(), i.kind()),
                )]))
            }
        };
        if v.is_empty() {
            Ok(pair)
        } else {
            Err(Error::Invalid(v))
        }
    }

    /// Pair with identical market and investor parameters.
    pub fn agreeing(params: ModelParams) -> Self {
        match params {
            ModelParams::Ou(p) => MeasurePair::Ou(Pair { market: p, investor: p }),
            ModelParams::Cir(p) => MeasurePair::Cir(Pair {
                market: p.clone(),
                investor: p,
            }),
            ModelParams::TopDown(p) => MeasurePair::TopDown(Pair {
                market: p.clone(),
                investor: p,
            }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            MeasurePair::Ou(_) => ModelKind::Ou,
            MeasurePair::Cir(_) => ModelKind::Cir,
            MeasurePair::TopDown(_) => ModelKind::TopDown,
        }
    }

    pub fn market(&self) -> ModelParams {
        match self {
            MeasurePair::Ou(p) => ModelParams::Ou(p.market),
            MeasurePair::Cir(p) => ModelParams::Cir(p.market.clone()),
            MeasurePair::TopDown(p) => ModelParams::TopDown(p.market.clone()),
        }
    }

    pub fn investor(&self) -> ModelParams {
        match self {
            MeasurePair::Ou(p) => ModelParams::Ou(p.investor),
            MeasurePair::Cir(p) => ModelParams::Cir(p.investor.clone()),
            MeasurePair::TopDown(p) => ModelParams::TopDown(p.investor.clone()),
        }
    }

    /// Ratio `μ̃/μ` mapping the market intensity to the investor intensity.
    pub fn intensity_ratio(&self) -> f64 {
        self.investor().mu() / self.market().mu()
    }
}

/// A violated invariant with the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_pass() {
            Ok(())
        } else {
            Err(Error::Invalid(self.violations))
        }
    }
}

/// Check both halves of a pair; field names are prefixed by the measure.
pub fn validate(pair: &MeasurePair) -> ValidationReport {
    let mut violations = Vec::new();
    for (prefix, p) in [("market", pair.market()), ("investor", pair.investor())] {
        for v in p.violations() {
            violations.push(Violation::new(format!("{prefix}.{}", v.field), v.message));
        }
    }
    ValidationReport { violations }
}

/// Check a single parameter set.
pub fn validate_params(p: &ModelParams) -> ValidationReport {
    ValidationReport {
        violations: p.violations(),
    }
}

/// Relative mark-to-market risk premium `φ^{Q̃,Q}` at state `x`.
///
/// States are `(r, λ)` for OU, the factor vector for CIR and `(λ)` for the
/// top-down model, with `λ` the market intensity.
pub fn relative_mtm_premium(pair: &MeasurePair, _t: f64, x: &[f64]) -> Result<Vec<f64>> {
    match pair {
        MeasurePair::Ou(p) => {
            let (m, i) = (&p.market, &p.investor);
            expect_len(x, 2)?;
            let (r, lam) = (x[0], x[1]);
            let lhat = lam / m.mu;
            let gap_r = m.kappa_r * (m.theta_r - r) - i.kappa_r * (i.theta_r - r);
            let gap_l = m.kappa_l * (m.theta_l - lhat) - i.kappa_l * (i.theta_l - lhat);
            let phi_r = ratio(gap_r, m.sigma_r, 0)?;
            let s = (1.0 - m.rho * m.rho).sqrt();
            let phi_l = if m.sigma_r == 0.0 || gap_r == 0.0 {
                ratio(gap_l, m.sigma_l * s, 1)?
            } else {
                ratio(gap_l / m.sigma_l - m.rho * phi_r, s, 1)?
            };
            Ok(vec![phi_r, phi_l])
        }
        MeasurePair::Cir(p) => {
            let (m, i) = (&p.market, &p.investor);
            expect_len(x, m.factors())?;
            (0..m.factors())
                .map(|k| {
                    let gap = m.kappa[k] * (m.theta[k] - x[k]) - i.kappa[k] * (i.theta[k] - x[k]);
                    ratio(gap, m.sigma[k] * x[k].max(0.0).sqrt(), k)
                })
                .collect()
        }
        MeasurePair::TopDown(p) => {
            let (m, i) = (&p.market, &p.investor);
            expect_len(x, 1)?;
            let lhat = x[0] / m.mu;
            let gap = m.kappa * (m.theta - lhat) - i.kappa * (i.theta - lhat);
            Ok(vec![ratio(gap, m.sigma * lhat.max(0.0).sqrt(), 0)?])
        }
    }
}

/// `Σ φ^{Q̃,Q} = b − b̃`: market minus investor drift of the state, in the
/// same coordinates as [`relative_mtm_premium`]. Unlike `φ` itself this is
/// finite when a diffusion coefficient vanishes.
pub fn drift_difference(pair: &MeasurePair, x: &[f64]) -> Vec<f64> {
    match pair {
        MeasurePair::Ou(p) => {
            let (m, i) = (&p.market, &p.investor);
            let (r, lam) = (x[0], x[1]);
            vec![
                m.kappa_r * (m.theta_r - r) - i.kappa_r * (i.theta_r - r),
                m.kappa_l * (m.mu * m.theta_l - lam) - i.kappa_l * (m.mu * i.theta_l - lam),
            ]
        }
        MeasurePair::Cir(p) => {
            let (m, i) = (&p.market, &p.investor);
            (0..m.factors())
                .map(|k| m.kappa[k] * (m.theta[k] - x[k]) - i.kappa[k] * (i.theta[k] - x[k]))
                .collect()
        }
        MeasurePair::TopDown(p) => {
            let (m, i) = (&p.market, &p.investor);
            let lam = x[0];
            vec![m.kappa * (m.mu * m.theta - lam) - i.kappa * (m.mu * i.theta - lam)]
        }
    }
}

/// One-dimensional diffusion of the market intensity:
/// drift `kappa·(level − λ)`, variance `var_const + var_lin·λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityDiffusion {
    pub kappa: f64,
    pub level: f64,
    pub var_const: f64,
    pub var_lin: f64,
}

impl IntensityDiffusion {
    pub fn drift(&self, lam: f64) -> f64 {
        self.kappa * (self.level - lam)
    }

    pub fn variance(&self, lam: f64) -> f64 {
        (self.var_const + self.var_lin * lam).max(0.0)
    }
}

/// Everything a one-dimensional solve needs about the model: the market
/// intensity's dynamics under each measure, the constant rate and the
/// investor-to-market intensity ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneFactorView {
    pub market: IntensityDiffusion,
    pub investor: IntensityDiffusion,
    pub rate: f64,
    pub intensity_ratio: f64,
    /// Whether the intensity lives on `[0, ∞)` (square-root diffusion).
    pub nonnegative: bool,
}

impl OneFactorView {
    pub fn dynamics(&self, measure: Measure) -> &IntensityDiffusion {
        match measure {
            Measure::Market => &self.market,
            Measure::Investor => &self.investor,
        }
    }
}

/// Reduce a pair to a single intensity factor with constant short rate.
pub fn one_factor_view(pair: &MeasurePair) -> Result<OneFactorView> {
    let ratio = pair.intensity_ratio();
    match pair {
        MeasurePair::Ou(p) => {
            let (m, i) = (&p.market, &p.investor);
            if !(m.has_constant_rate() && i.has_constant_rate()) {
                return Err(Error::Unsupported(
                    "one-dimensional solves need a constant short rate (kappa_r = sigma_r = 0)"
                        .into(),
                ));
            }
            let var = (m.mu * m.sigma_l).powi(2);
            Ok(OneFactorView {
                market: IntensityDiffusion {
                    kappa: m.kappa_l,
                    level: m.mu * m.theta_l,
                    var_const: var,
                    var_lin: 0.0,
                },
                investor: IntensityDiffusion {
                    kappa: i.kappa_l,
                    level: m.mu * i.theta_l,
                    var_const: var,
                    var_lin: 0.0,
                },
                rate: m.theta_r,
                intensity_ratio: ratio,
                nonnegative: false,
            })
        }
        MeasurePair::Cir(p) => {
            let (m, i) = (&p.market, &p.investor);
            if !m.is_intensity_only() {
                return Err(Error::Unsupported(
                    "one-dimensional solves need a single CIR factor with w_r = 0".into(),
                ));
            }
            let scale = m.mu * m.w_l[0];
            let var_lin = scale * m.sigma[0] * m.sigma[0];
            Ok(OneFactorView {
                market: IntensityDiffusion {
                    kappa: m.kappa[0],
                    level: scale * m.theta[0],
                    var_const: 0.0,
                    var_lin,
                },
                investor: IntensityDiffusion {
                    kappa: i.kappa[0],
                    level: scale * i.theta[0],
                    var_const: 0.0,
                    var_lin,
                },
                rate: m.r0,
                intensity_ratio: ratio,
                nonnegative: true,
            })
        }
        MeasurePair::TopDown(p) => {
            let (m, i) = (&p.market, &p.investor);
            let var_lin = m.sigma * m.sigma * m.mu;
            Ok(OneFactorView {
                market: IntensityDiffusion {
                    kappa: m.kappa,
                    level: m.mu * m.theta,
                    var_const: 0.0,
                    var_lin,
                },
                investor: IntensityDiffusion {
                    kappa: i.kappa,
                    level: m.mu * i.theta,
                    var_const: 0.0,
                    var_lin,
                },
                rate: m.r,
                intensity_ratio: ratio,
                nonnegative: true,
            })
        }
    }
}

/// Payoff descriptions. Maturities are absolute times in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClaimSpec {
    ZeroRecoveryBond { maturity: f64 },
    /// Recovery of a fraction of the equivalent default-free bond.
    RtBond { maturity: f64, recovery: f64 },
    /// Recovery of a fraction of the pre-default value.
    RmvBond { maturity: f64, recovery: f64 },
    /// Protection-buyer CDS paying `spread` continuously until default.
    Cds { maturity: f64, spread: f64 },
    ForwardCds { start: f64, maturity: f64, spread: f64 },
    /// Protection-buyer index swap on the top-down portfolio.
    Cdx { maturity: f64, spread: f64 },
}

impl ClaimSpec {
    pub fn maturity(&self) -> f64 {
        match *self {
            ClaimSpec::ZeroRecoveryBond { maturity }
            | ClaimSpec::RtBond { maturity, .. }
            | ClaimSpec::RmvBond { maturity, .. }
            | ClaimSpec::Cds { maturity, .. }
            | ClaimSpec::ForwardCds { maturity, .. }
            | ClaimSpec::Cdx { maturity, .. } => maturity,
        }
    }

    pub fn is_bond(&self) -> bool {
        matches!(
            self,
            ClaimSpec::ZeroRecoveryBond { .. } | ClaimSpec::RtBond { .. } | ClaimSpec::RmvBond { .. }
        )
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let m = self.maturity();
        if !(m > 0.0) {
            v.push(Violation::new("maturity", "maturity must be positive"));
        }
        match *self {
            ClaimSpec::RtBond { recovery, .. } if !(0.0..=1.0).contains(&recovery) => {
                v.push(Violation::new("recovery", "recovery must lie in [0, 1]"))
            }
            ClaimSpec::RmvBond { recovery, .. } if !(0.0..1.0).contains(&recovery) => {
                v.push(Violation::new("recovery", "recovery must lie in [0, 1)"))
            }
            ClaimSpec::Cds { spread, .. } | ClaimSpec::Cdx { spread, .. } if !(spread >= 0.0) => {
                v.push(Violation::new("spread", "spread must be nonnegative"))
            }
            ClaimSpec::ForwardCds {
                start,
                maturity,
                spread,
            } => {
                if !(start >= 0.0 && start < maturity) {
                    v.push(Violation::new("start", "forward start must precede maturity"));
                }
                if !(spread >= 0.0) {
                    v.push(Violation::new("spread", "spread must be nonnegative"));
                }
            }
            _ => {}
        }
        ValidationReport { violations: v }
    }
}

fn nonneg(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !(v >= 0.0) {
        out.push(Violation::new(field, format!("must be nonnegative, got {v}")));
    }
}

fn positive(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !(v > 0.0) {
        out.push(Violation::new(field, format!("must be positive, got {v}")));
    }
}

fn same(out: &mut Vec<Violation>, field: &str, a: f64, b: f64) {
    if a != b {
        out.push(Violation::new(
            field,
            format!("market {a} and investor {b} must agree"),
        ));
    }
}

fn same_vec(out: &mut Vec<Violation>, field: &str, a: &[f64], b: &[f64]) {
    if a != b {
        out.push(Violation::new(field, "market and investor values must agree"));
    }
}

fn expect_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() == n {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "state vector has {} components, model expects {n}",
            x.len()
        )))
    }
}

fn ratio(num: f64, den: f64, component: usize) -> Result<f64> {
    if den == 0.0 || !den.is_finite() {
        if num == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::DegenerateDiffusion { component })
        }
    } else {
        Ok(num / den)
    }
}
