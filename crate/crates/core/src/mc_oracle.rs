//! Monte Carlo engine used as an independent oracle: state paths under
//! either measure, doubly stochastic default times, survival-weighted
//! prices, and the value of following a given stopping rule.
//!
//! Every path owns a ChaCha stream selected by its index, so results do
//! not depend on how paths are split across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::Boundary;
use crate::error::{Error, Result};
use crate::models::{ClaimSpec, Measure, MeasurePair, ModelKind, ModelParams, Pair, TopDownParams};
use crate::numeric::phi;
use crate::pricers::{cdx_coefficients, claim_price, default_free_bond, CdsKernel, CdxCoefficients, CDS_PANELS};

const CHUNK: usize = 2048;
/// Intensity level beyond which a top-down path is declared explosive.
const EXPLOSION_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Distance from `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.std_error.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub steps_per_year: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 0,
            steps_per_year: 500,
        }
    }
}

impl McConfig {
    fn steps(&self, horizon: f64) -> usize {
        ((self.steps_per_year as f64 * horizon).ceil() as usize).max(1)
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 2 || self.steps_per_year == 0 {
            return Err(Error::Domain("need at least two paths and one step per year".into()));
        }
        Ok(())
    }
}

/// Simulated trajectories on a uniform time grid.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub kind: ModelKind,
    pub measure: Measure,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `states[path][step]`: the model state (`[r, λ]`, CIR factors, or
    /// `[λ, N, Υ]`).
    pub states: Vec<Vec<Vec<f64>>>,
    /// Running integral of the default intensity under `measure`.
    pub integrated_intensity: Vec<Vec<f64>>,
    /// Running integral of the short rate.
    pub integrated_rate: Vec<Vec<f64>>,
    /// Transition scheme used.
    pub scheme: &'static str,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Mean and standard error of `f` over `n` independent paths. Chunks are
/// summed in index order.
fn run_paths<F>(n: usize, seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    // sums are taken about the first sample to limit cancellation
    let shift = f(&mut path_rng(seed, 0))?;
    let chunks = n.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let (mut s, mut s2) = (0.0, 0.0);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let v = f(&mut path_rng(seed, i))? - shift;
                s += v;
                s2 += v * v;
            }
            Ok((s, s2))
        })
        .collect::<Result<_>>()?;
    let (s, s2) = partial.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let centred = s / nf;
    let mean = shift + centred;
    let var = ((s2 - nf * centred * centred) / (nf - 1.0)).max(0.0);
    Ok(McEstimate {
        mean,
        std_error: (var / nf).sqrt(),
        n_paths: n,
        seed,
    })
}

/// Exact square-root transition over a fixed step:
/// `x' = c·χ'²(d, x e^{−κΔ}/c)`.
#[derive(Debug, Clone)]
struct CirStep {
    decay: f64,
    level: f64,
    scale: f64,
    dof: f64,
    chi: Option<ChiSquared<f64>>,
}

impl CirStep {
    fn new(kappa: f64, theta: f64, sigma: f64, dt: f64) -> Self {
        let scale = 0.25 * sigma * sigma * phi(kappa, dt);
        let dof = if sigma > 0.0 { 4.0 * kappa * theta / (sigma * sigma) } else { 0.0 };
        Self {
            decay: (-kappa * dt).exp(),
            level: theta,
            scale,
            dof,
            chi: if dof > 1.0 { ChiSquared::new(dof - 1.0).ok() } else { None },
        }
    }

    fn sample<R: Rng>(&self, x: f64, rng: &mut R) -> f64 {
        if self.scale == 0.0 {
            return self.level + (x - self.level) * self.decay;
        }
        let nc = x.max(0.0) * self.decay / self.scale;
        let draw = match &self.chi {
            Some(chi) => {
                let z: f64 = StandardNormal.sample(rng);
                (z + nc.sqrt()).powi(2) + chi.sample(rng)
            }
            None => {
                let k = if nc > 0.0 { Poisson::new(0.5 * nc).map_or(0.0, |p| p.sample(rng)) } else { 0.0 };
                let shape = 0.5 * self.dof + k;
                if shape > 0.0 {
                    Gamma::new(shape, 2.0).map_or(0.0, |g| g.sample(rng))
                } else {
                    0.0
                }
            }
        };
        self.scale * draw
    }

    /// Same transition over an arbitrary step length.
    fn over(&self, kappa: f64, sigma: f64, dt: f64) -> Self {
        CirStep::new(kappa, self.level, sigma, dt)
    }
}

/// One-step transition of a single-name state under one measure.
#[derive(Debug, Clone)]
enum Stepper {
    Ou {
        decay_r: f64,
        level_r: f64,
        decay_l: f64,
        level_l: f64,
        sd_r: f64,
        sd_l: f64,
        corr: f64,
    },
    Cir {
        factors: Vec<CirStep>,
        w_l: Vec<f64>,
        w_r: Vec<f64>,
        r0: f64,
        mu: f64,
    },
}

impl Stepper {
    fn new(pair: &MeasurePair, measure: Measure, dt: f64) -> Result<Self> {
        match pair {
            MeasurePair::Ou(p) => {
                let q = p.get(measure);
                let mu = p.market.mu;
                let s = mu * q.sigma_l;
                let sd_r = q.sigma_r * phi(2.0 * q.kappa_r, dt).sqrt();
                let sd_l = s * phi(2.0 * q.kappa_l, dt).sqrt();
                let corr = if sd_r > 0.0 && sd_l > 0.0 {
                    q.rho * q.sigma_r * s * phi(q.kappa_r + q.kappa_l, dt) / (sd_r * sd_l)
                } else {
                    0.0
                };
                Ok(Stepper::Ou {
                    decay_r: (-q.kappa_r * dt).exp(),
                    level_r: q.theta_r,
                    decay_l: (-q.kappa_l * dt).exp(),
                    level_l: mu * q.theta_l,
                    sd_r,
                    sd_l,
                    corr,
                })
            }
            MeasurePair::Cir(p) => {
                let q = p.get(measure);
                Ok(Stepper::Cir {
                    factors: (0..q.factors())
                        .map(|i| CirStep::new(q.kappa[i], q.theta[i], q.sigma[i], dt))
                        .collect(),
                    w_l: p.market.w_l.clone(),
                    w_r: p.market.w_r.clone(),
                    r0: p.market.r0,
                    mu: p.market.mu,
                })
            }
            MeasurePair::TopDown(_) => Err(Error::Unsupported("use the top-down simulator".into())),
        }
    }

    fn step<R: Rng>(&self, x: &mut [f64], rng: &mut R) {
        match self {
            Stepper::Ou {
                decay_r,
                level_r,
                decay_l,
                level_l,
                sd_r,
                sd_l,
                corr,
            } => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                x[0] = level_r + (x[0] - level_r) * decay_r + sd_r * z1;
                x[1] = level_l + (x[1] - level_l) * decay_l + sd_l * (corr * z1 + (1.0 - corr * corr).max(0.0).sqrt() * z2);
            }
            Stepper::Cir { factors, .. } => {
                for (xi, f) in x.iter_mut().zip(factors) {
                    *xi = f.sample(*xi, rng);
                }
            }
        }
    }

    /// Market intensity `λ`.
    fn lambda(&self, x: &[f64]) -> f64 {
        match self {
            Stepper::Ou { .. } => x[1],
            Stepper::Cir { w_l, mu, .. } => mu * w_l.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        }
    }

    fn rate(&self, x: &[f64]) -> f64 {
        match self {
            Stepper::Ou { .. } => x[0],
            Stepper::Cir { w_r, r0, .. } => r0 + w_r.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
        }
    }
}

fn measure_ratio(pair: &MeasurePair, measure: Measure) -> f64 {
    match measure {
        Measure::Market => 1.0,
        Measure::Investor => pair.intensity_ratio(),
    }
}

/// Single-name state paths from `x0` under `measure`, with exact Gaussian
/// (OU) or noncentral chi-square (CIR) transitions.
pub fn simulate_paths(
    pair: &MeasurePair,
    measure: Measure,
    x0: &[f64],
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBatch> {
    if n_steps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("need a positive horizon and at least one step".into()));
    }
    let dt = horizon / n_steps as f64;
    let stepper = Stepper::new(pair, measure, dt)?;
    let ratio = measure_ratio(pair, measure);
    let mut states = Vec::with_capacity(n_paths);
    let mut integrated_intensity = Vec::with_capacity(n_paths);
    let mut integrated_rate = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let mut rng = path_rng(seed, path);
        let mut x = x0.to_vec();
        let mut traj = vec![x.clone()];
        let (mut li, mut ri) = (vec![0.0], vec![0.0]);
        for _ in 0..n_steps {
            let (l0, r0) = (stepper.lambda(&x), stepper.rate(&x));
            stepper.step(&mut x, &mut rng);
            li.push(li.last().unwrap() + 0.5 * dt * ratio * (l0 + stepper.lambda(&x)));
            ri.push(ri.last().unwrap() + 0.5 * dt * (r0 + stepper.rate(&x)));
            traj.push(x.clone());
        }
        states.push(traj);
        integrated_intensity.push(li);
        integrated_rate.push(ri);
    }
    Ok(PathBatch {
        kind: pair.kind(),
        measure,
        n_paths,
        n_steps,
        seed,
        times: (0..=n_steps).map(|i| i as f64 * dt).collect(),
        states,
        integrated_intensity,
        integrated_rate,
        scheme: match pair {
            MeasurePair::Ou(_) => "exact gaussian",
            _ => "exact noncentral chi-square",
        },
    })
}

/// Top-down intensity with self-exciting jumps under one measure.
struct TopDownSim {
    kappa: f64,
    sigma_eff: f64,
    step: CirStep,
    dt: f64,
    rate_factor: f64,
    jump_scale: f64,
    params: TopDownParams,
}

#[derive(Debug, Clone, Copy)]
struct TdState {
    lambda: f64,
    n: f64,
    upsilon: f64,
    integrated: f64,
}

impl TopDownSim {
    fn new(pair: &Pair<TopDownParams>, measure: Measure, dt: f64) -> Self {
        let m = &pair.market;
        let q = pair.get(measure).clone();
        let sigma_eff = m.sigma * m.mu.sqrt();
        Self {
            kappa: q.kappa,
            sigma_eff,
            step: CirStep::new(q.kappa, m.mu * q.theta, sigma_eff, dt),
            dt,
            rate_factor: q.mu / m.mu,
            jump_scale: m.mu * m.eta,
            params: q,
        }
    }

    fn rho_eff(&self) -> f64 {
        self.kappa - self.rate_factor * self.jump_scale * self.params.mean_loss()
    }

    fn explosion(&self) -> Error {
        let rho = self.rho_eff();
        let sign = if rho > 0.0 {
            "positive"
        } else if rho < 0.0 {
            "negative"
        } else {
            "zero"
        };
        Error::Explosion { rho_eff: rho, sign }
    }

    /// Advance one grid step. The intensity is taken linear between
    /// diffusion substeps, which is dominated by its larger endpoint; after
    /// every accepted event the diffusion is restarted from the jump.
    fn advance<R: Rng>(&self, st: &mut TdState, t: f64, rng: &mut R, events: &mut Vec<(f64, f64)>) -> Result<()> {
        let end = t + self.dt;
        let mut s = t;
        loop {
            let span = end - s;
            let step = if (span - self.dt).abs() < 1e-15 {
                self.step.clone()
            } else {
                self.step.over(self.kappa, self.sigma_eff, span)
            };
            let l0 = st.lambda;
            let l1 = step.sample(l0, rng);
            let bound = self.rate_factor * l0.max(l1);
            let mut u = s;
            let mut hit = None;
            if bound > 0.0 {
                loop {
                    let e: f64 = Exp1.sample(rng);
                    u += e / bound;
                    if u >= end {
                        break;
                    }
                    let lu = l0 + (l1 - l0) * (u - s) / span;
                    if rng.random::<f64>() * bound <= self.rate_factor * lu {
                        hit = Some((u, lu));
                        break;
                    }
                }
            }
            match hit {
                None => {
                    st.integrated += 0.5 * self.rate_factor * (l0 + l1) * span;
                    st.lambda = l1;
                    return Ok(());
                }
                Some((u, lu)) => {
                    st.integrated += 0.5 * self.rate_factor * (l0 + lu) * (u - s);
                    let z = self.params.loss.quantile(rng.random::<f64>());
                    events.push((u, z));
                    st.n += 1.0;
                    st.upsilon += z;
                    st.lambda = lu + self.jump_scale * z;
                    if !st.lambda.is_finite() || st.lambda > EXPLOSION_CAP {
                        return Err(self.explosion());
                    }
                    s = u;
                }
            }
        }
    }
}

/// Top-down paths of `[λ, N, Υ]` from `(λ0, 0, 0)` under `measure`.
pub fn simulate_topdown(
    pair: &Pair<TopDownParams>,
    measure: Measure,
    lambda0: f64,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBatch> {
    if n_steps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("need a positive horizon and at least one step".into()));
    }
    let dt = horizon / n_steps as f64;
    let sim = TopDownSim::new(pair, measure, dt);
    let mut states = Vec::with_capacity(n_paths);
    let mut integrated_intensity = Vec::with_capacity(n_paths);
    let mut events = Vec::new();
    for path in 0..n_paths {
        let mut rng = path_rng(seed, path);
        let mut st = TdState {
            lambda: lambda0,
            n: 0.0,
            upsilon: 0.0,
            integrated: 0.0,
        };
        let mut traj = vec![vec![st.lambda, 0.0, 0.0]];
        let mut li = vec![0.0];
        for i in 0..n_steps {
            sim.advance(&mut st, i as f64 * dt, &mut rng, &mut events)?;
            traj.push(vec![st.lambda, st.n, st.upsilon]);
            li.push(st.integrated);
        }
        states.push(traj);
        integrated_intensity.push(li);
    }
    let r = pair.market.r;
    Ok(PathBatch {
        kind: ModelKind::TopDown,
        measure,
        n_paths,
        n_steps,
        seed,
        times: (0..=n_steps).map(|i| i as f64 * dt).collect(),
        integrated_rate: vec![(0..=n_steps).map(|i| r * i as f64 * dt).collect(); n_paths],
        states,
        integrated_intensity,
        scheme: "exact square-root diffusion with thinned jumps",
    })
}

/// Default times from a batch: the first time the integrated intensity
/// exceeds an independent unit exponential, `∞` if it never does.
pub fn simulate_default(batch: &PathBatch, seed: u64) -> Vec<f64> {
    batch
        .integrated_intensity
        .iter()
        .enumerate()
        .map(|(i, li)| {
            let e: f64 = Exp1.sample(&mut path_rng(seed, i));
            match li.iter().position(|v| *v >= e) {
                None => f64::INFINITY,
                Some(0) => batch.times[0],
                Some(k) => {
                    let w = (e - li[k - 1]) / (li[k] - li[k - 1]);
                    batch.times[k - 1] + w * (batch.times[k] - batch.times[k - 1])
                }
            }
        })
        .collect()
}

/// Pre-default market price by survival weighting: the default time is
/// integrated out, so only the state is sampled.
pub fn estimate_price(claim: &ClaimSpec, market: &ModelParams, t0: f64, x0: &[f64], cfg: &McConfig) -> Result<McEstimate> {
    cfg.check()?;
    let maturity = claim.maturity();
    if !(t0 < maturity) {
        return Err(Error::Domain(format!("start {t0} is not before maturity {maturity}")));
    }
    let horizon = maturity - t0;
    let steps = cfg.steps(horizon);
    let dt = horizon / steps as f64;
    if let (ClaimSpec::Cdx { spread, .. }, ModelParams::TopDown(p)) = (claim, market) {
        let pair = Pair { market: p.clone(), investor: p.clone() };
        let sim = TopDownSim::new(&pair, Measure::Market, dt);
        let n0 = x0.get(1).copied().unwrap_or(0.0);
        return run_paths(cfg.n_paths, cfg.seed, |rng| {
            cdx_leg_value(&sim, p, *spread, t0, x0[0], n0, steps, rng, |_, _| false, None).map(|v| v.0)
        });
    }
    let pair = MeasurePair::agreeing(market.clone());
    let stepper = Stepper::new(&pair, Measure::Market, dt)?;
    run_paths(cfg.n_paths, cfg.seed, |rng| {
        pre_default_value(claim, market, &stepper, 1.0, t0, x0, dt, steps, rng, |_, _, _| Ok(None))
    })
}

/// Survival-weighted value of a single-name claim held until `stop`
/// returns a sale price or maturity: running flows and the terminal or
/// sale value are discounted at `r + ratio·(1 − RMV recovery)·λ`.
#[allow(clippy::too_many_arguments)]
fn pre_default_value<R: Rng, S: Fn(usize, f64, &[f64]) -> Result<Option<f64>>>(
    claim: &ClaimSpec,
    market: &ModelParams,
    stepper: &Stepper,
    ratio: f64,
    t0: f64,
    x0: &[f64],
    dt: f64,
    steps: usize,
    rng: &mut R,
    stop: S,
) -> Result<f64> {
    let w = ratio * loss_weight(claim);
    let mut x = x0.to_vec();
    let mut log_survival: f64 = 0.0;
    let mut value = 0.0;
    let mut flow_prev = running_flow(claim, market, t0, &x, ratio * stepper.lambda(&x))?;
    for i in 0..steps {
        let t = t0 + i as f64 * dt;
        if let Some(price) = stop(i, t, &x)? {
            return Ok(value + log_survival.exp() * price);
        }
        let (l0, r0) = (stepper.lambda(&x), stepper.rate(&x));
        stepper.step(&mut x, rng);
        let (l1, r1) = (stepper.lambda(&x), stepper.rate(&x));
        let next = log_survival - 0.5 * dt * (r0 + w * l0 + r1 + w * l1);
        let flow = running_flow(claim, market, t + dt, &x, ratio * l1)?;
        value += 0.5 * dt * (log_survival.exp() * flow_prev + next.exp() * flow);
        log_survival = next;
        flow_prev = flow;
    }
    let terminal = if claim.is_bond() { 1.0 } else { 0.0 };
    Ok(value + log_survival.exp() * terminal)
}

fn loss_weight(claim: &ClaimSpec) -> f64 {
    match *claim {
        ClaimSpec::RmvBond { recovery, .. } => 1.0 - recovery,
        _ => 1.0,
    }
}

/// Rate of payment per unit time to a surviving holder: recovery times
/// the default intensity `l` minus running premium.
fn running_flow(claim: &ClaimSpec, market: &ModelParams, t: f64, x: &[f64], l: f64) -> Result<f64> {
    Ok(match *claim {
        ClaimSpec::ZeroRecoveryBond { .. } | ClaimSpec::RmvBond { .. } => 0.0,
        ClaimSpec::RtBond { maturity, recovery } => l * recovery * default_free_bond(market, t, maturity, x)?,
        ClaimSpec::Cds { spread, .. } => l - spread,
        ClaimSpec::ForwardCds { start, spread, .. } => {
            if t >= start {
                l - spread
            } else {
                0.0
            }
        }
        ClaimSpec::Cdx { .. } => return Err(Error::Unsupported("index swap on a single-name model".into())),
    })
}

/// Discounted cash flows of the index swap from `t0` until the stopping
/// rule fires or maturity, plus the discounted ex-dividend value at the
/// stop. Returns the total and the stopping time.
#[allow(clippy::too_many_arguments)]
fn cdx_leg_value<R: Rng, S: Fn(f64, f64) -> bool>(
    sim: &TopDownSim,
    market: &TopDownParams,
    spread: f64,
    t0: f64,
    lambda0: f64,
    n0: f64,
    steps: usize,
    rng: &mut R,
    sells: S,
    coefficients: Option<&[CdxCoefficients]>,
) -> Result<(f64, f64)> {
    let r = market.r;
    let names = market.names as f64;
    let mut st = TdState {
        lambda: lambda0,
        n: n0,
        upsilon: 0.0,
        integrated: 0.0,
    };
    let mut events = Vec::new();
    let mut value = 0.0;
    for i in 0..steps {
        let t = t0 + i as f64 * sim.dt;
        if sells(t, st.lambda) {
            let k = coefficients.map_or_else(|| cdx_coefficients(market, spread, t, t0 + steps as f64 * sim.dt), |c| Ok(c[i]))?;
            return Ok((value + (-r * (t - t0)).exp() * k.value(st.lambda, st.n), t));
        }
        events.clear();
        let n_before = st.n;
        sim.advance(&mut st, t, rng, &mut events)?;
        // premium on the surviving notional, piecewise constant between events
        let mut a = t;
        let mut alive = names - n_before;
        for &(u, z) in &events {
            value -= spread * alive * disc_integral(r, a - t0, u - t0);
            value += (-r * (u - t0)).exp() * z;
            alive -= 1.0;
            a = u;
        }
        value -= spread * alive * disc_integral(r, a - t0, t + sim.dt - t0);
    }
    Ok((value, t0 + steps as f64 * sim.dt))
}

/// `∫_a^b e^{−r v} dv`.
fn disc_integral(r: f64, a: f64, b: f64) -> f64 {
    (-r * a).exp() * phi(r, b - a)
}

/// Value under the investor's measure of selling at the first entry of
/// `(t, λ)` into the boundary's sell region, at default, or at maturity,
/// discounting the market's cumulative price. For single names the
/// default time is integrated out against the investor intensity
/// `(μ̃/μ)λ`; index defaults are simulated since they move the intensity.
pub fn evaluate_strategy(
    claim: &ClaimSpec,
    pair: &MeasurePair,
    boundary: &Boundary,
    t0: f64,
    x0: &[f64],
    cfg: &McConfig,
) -> Result<McEstimate> {
    cfg.check()?;
    let maturity = claim.maturity();
    match boundary.points.last() {
        Some(p) if (p.t - maturity).abs() < 1e-9 => {}
        _ => return Err(Error::GridMismatch("boundary horizon differs from claim maturity".into())),
    }
    if !(t0 < maturity) {
        return Err(Error::Domain(format!("start {t0} is not before maturity {maturity}")));
    }
    let horizon = maturity - t0;
    let steps = cfg.steps(horizon);
    let dt = horizon / steps as f64;
    if let (ClaimSpec::Cdx { spread, .. }, MeasurePair::TopDown(p)) = (claim, pair) {
        let sim = TopDownSim::new(p, Measure::Investor, dt);
        let coeffs: Vec<CdxCoefficients> = (0..steps)
            .map(|i| cdx_coefficients(&p.market, *spread, t0 + i as f64 * dt, maturity))
            .collect::<Result<_>>()?;
        let n0 = x0.get(1).copied().unwrap_or(0.0);
        return run_paths(cfg.n_paths, cfg.seed, |rng| {
            cdx_leg_value(&sim, &p.market, *spread, t0, x0[0], n0, steps, rng, |t, l| boundary.sells(t, l), Some(&coeffs))
                .map(|v| v.0)
        });
    }
    let market = pair.market();
    let stepper = Stepper::new(pair, Measure::Investor, dt)?;
    let ratio = pair.intensity_ratio();
    let kernels: Option<Vec<CdsKernel>> = match claim {
        ClaimSpec::Cds { spread, .. } => Some(
            (0..steps)
                .map(|i| CdsKernel::new(&market, t0 + i as f64 * dt, maturity, *spread, CDS_PANELS))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let price = |i: usize, t: f64, x: &[f64]| -> Result<f64> {
        match &kernels {
            Some(k) => Ok(k[i].evaluate(x).0),
            None => claim_price(claim, &market, t, x),
        }
    };
    run_paths(cfg.n_paths, cfg.seed, |rng| {
        pre_default_value(claim, &market, &stepper, ratio, t0, x0, dt, steps, rng, |i, t, x| {
            if boundary.sells(t, stepper.lambda(x)) {
                price(i, t, x).map(Some)
            } else {
                Ok(None)
            }
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CirParams, LossDist, OuParams};
    use crate::pricers::{cdx_moments, ou_bond_price};

    fn ou_pair(mu_t: f64) -> MeasurePair {
        let m = OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0);
        let mut i = m;
        i.mu = mu_t;
        MeasurePair::new(ModelParams::Ou(m), ModelParams::Ou(i)).unwrap()
    }

    #[test]
    fn deterministic_ou_relaxes_exactly() {
        let m = OuParams::constant_rate(0.03, 0.4, 0.015, 0.0, 2.0);
        let pair = MeasurePair::agreeing(ModelParams::Ou(m));
        let b = simulate_paths(&pair, Measure::Market, &[0.03, 0.1], 2.0, 3, 40, 7).unwrap();
        for (k, &t) in b.times.iter().enumerate() {
            let exact = 0.03 + (0.1 - 0.03) * (-0.4 * t).exp();
            assert!((b.states[1][k][1] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let pair = MeasurePair::agreeing(ModelParams::Cir(CirParams::one_factor(0.03, 0.2, 0.015, 0.07, 1.0, 2.0)));
        let a = simulate_paths(&pair, Measure::Market, &[0.015], 1.0, 5, 20, 11).unwrap();
        let b = simulate_paths(&pair, Measure::Market, &[0.015], 1.0, 5, 20, 11).unwrap();
        assert_eq!(a.states, b.states);
        assert!(a.states.iter().flatten().all(|x| x[0] >= 0.0));
        assert!(a.integrated_intensity.iter().all(|p| p.windows(2).all(|w| w[1] >= w[0])));
    }

    #[test]
    fn cir_paths_settle_at_the_level() {
        let pair = MeasurePair::agreeing(ModelParams::Cir(CirParams::one_factor(0.03, 0.5, 0.015, 0.07, 1.0, 2.0)));
        let b = simulate_paths(&pair, Measure::Market, &[0.1], 100.0, 100_000, 4, 21).unwrap();
        let x: Vec<f64> = b.states.iter().map(|s| s[4][0]).collect();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 0.015).abs() < 3.0 * sd / n.sqrt(), "{mean}");
    }

    #[test]
    fn sampled_defaults_agree_with_survival_weighting() {
        let p = CirParams::one_factor(0.03, 0.2, 0.015, 0.07, 1.0, 2.0);
        let model = ModelParams::Cir(p);
        let pair = MeasurePair::agreeing(model.clone());
        let b = simulate_paths(&pair, Measure::Market, &[0.05], 1.0, 100_000, 100, 8).unwrap();
        let tau = simulate_default(&b, 13);
        let v: Vec<f64> = tau
            .iter()
            .enumerate()
            .map(|(i, t)| if *t > 1.0 { (-b.integrated_rate[i][100]).exp() } else { 0.0 })
            .collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        let cfg = McConfig { n_paths: 20_000, seed: 8, steps_per_year: 100 };
        let w = estimate_price(&ClaimSpec::ZeroRecoveryBond { maturity: 1.0 }, &model, 0.0, &[0.05], &cfg).unwrap();
        let z = (mean - w.mean) / (se * se + w.std_error * w.std_error).sqrt();
        assert!(z.abs() < 3.0, "{mean} vs {w:?}");
    }

    #[test]
    fn cir_transition_has_exact_mean() {
        // E[x_t] = θ + (x − θ)e^{−κt}
        let step = CirStep::new(0.5, 0.04, 0.2, 0.5);
        let mut rng = path_rng(3, 0);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| step.sample(0.01, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let exact = 0.04 + (0.01 - 0.04) * (-0.25f64).exp();
        assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt());
        // low degrees of freedom use the Poisson mixture
        let low = CirStep::new(0.1, 0.01, 0.3, 0.5);
        assert!(low.chi.is_none());
        let draws: Vec<f64> = (0..n).map(|_| low.sample(0.02, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let exact = 0.01 + (0.02 - 0.01) * (-0.05f64).exp();
        assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn deterministic_price_is_exact_quadrature() {
        let m = ModelParams::Ou(OuParams::constant_rate(0.03, 0.0, 0.0, 0.0, 2.0));
        let cfg = McConfig { n_paths: 4, ..Default::default() };
        let e = estimate_price(&ClaimSpec::ZeroRecoveryBond { maturity: 1.0 }, &m, 0.0, &[0.03, 0.02], &cfg).unwrap();
        assert!((e.mean - (-0.05f64).exp()).abs() < 1e-12);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn ou_bond_matches_closed_form() {
        let p = OuParams::constant_rate(0.03, 0.2, 0.015, 0.02, 2.0);
        let cfg = McConfig { n_paths: 20_000, seed: 5, steps_per_year: 100 };
        let e = estimate_price(&ClaimSpec::ZeroRecoveryBond { maturity: 1.0 }, &ModelParams::Ou(p), 0.0, &[0.03, 0.03], &cfg)
            .unwrap();
        let exact = ou_bond_price(&p, 0.0, 1.0, 0.03, 0.03).unwrap();
        assert!(e.z_score(exact).abs() < 3.0, "{e:?} vs {exact}");
    }

    #[test]
    fn constant_intensity_survival() {
        let m = OuParams::constant_rate(0.0, 0.0, 0.0, 0.0, 1.0);
        let pair = MeasurePair::agreeing(ModelParams::Ou(m));
        let b = simulate_paths(&pair, Measure::Market, &[0.0, 0.5], 2.0, 40_000, 20, 1).unwrap();
        let tau = simulate_default(&b, 99);
        let survived = tau.iter().filter(|t| **t > 1.0).count() as f64 / tau.len() as f64;
        let p = (-0.5f64).exp();
        assert!((survived - p).abs() < 3.0 * (p * (1.0 - p) / tau.len() as f64).sqrt());
        let zero = simulate_paths(&pair, Measure::Market, &[0.0, 0.0], 1.0, 10, 5, 1).unwrap();
        assert!(simulate_default(&zero, 2).iter().all(|t| t.is_infinite()));
    }

    #[test]
    fn investor_hazard_scales_with_event_premium() {
        let m = OuParams::constant_rate(0.0, 0.0, 0.0, 0.0, 1.0);
        let mut i = m;
        i.mu = 2.0;
        let pair = MeasurePair::new(ModelParams::Ou(m), ModelParams::Ou(i)).unwrap();
        let b = simulate_paths(&pair, Measure::Investor, &[0.0, 0.3], 1.0, 2, 10, 1).unwrap();
        assert!((b.integrated_intensity[0][10] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn immediate_sale_has_zero_variance() {
        let pair = ou_pair(2.0);
        let claim = ClaimSpec::ZeroRecoveryBond { maturity: 1.0 };
        let boundary = Boundary {
            side: crate::boundary::Side::SellBelow,
            eps: 0.0,
            points: (0..=2)
                .map(|n| crate::boundary::BoundaryPoint {
                    t: n as f64 * 0.5,
                    lambda_star: Some(1.0),
                    price_star: None,
                    intervals: vec![],
                })
                .collect(),
            warnings: vec![],
            interpolation: "",
            stopping_rule: "",
        };
        let cfg = McConfig { n_paths: 100, ..Default::default() };
        let e = evaluate_strategy(&claim, &pair, &boundary, 0.0, &[0.03, 0.03], &cfg).unwrap();
        let exact = claim_price(&claim, &pair.market(), 0.0, &[0.03, 0.03]).unwrap();
        assert!((e.mean - exact).abs() < 1e-15 && e.std_error == 0.0);
        let mut never = boundary.clone();
        never.points.iter_mut().for_each(|p| p.lambda_star = None);
        never.points[2].t = 2.0;
        assert!(evaluate_strategy(&claim, &pair, &never, 0.0, &[0.03, 0.03], &cfg).is_err());
    }

    #[test]
    fn hold_to_maturity_gives_investor_price() {
        let pair = ou_pair(2.5);
        let claim = ClaimSpec::ZeroRecoveryBond { maturity: 1.0 };
        let boundary = Boundary {
            side: crate::boundary::Side::SellBelow,
            eps: 0.0,
            points: vec![
                crate::boundary::BoundaryPoint { t: 0.0, lambda_star: None, price_star: None, intervals: vec![] },
                crate::boundary::BoundaryPoint { t: 1.0, lambda_star: None, price_star: None, intervals: vec![] },
            ],
            warnings: vec![],
            interpolation: "",
            stopping_rule: "",
        };
        let cfg = McConfig { n_paths: 40_000, seed: 9, steps_per_year: 100 };
        let e = evaluate_strategy(&claim, &pair, &boundary, 0.0, &[0.03, 0.03], &cfg).unwrap();
        // investor price: intensity 1.25·λ with λ an OU around 0.03
        let mut scaled = OuParams::constant_rate(0.03, 0.2, 0.015 * 1.25, 0.02 * 1.25, 2.0);
        scaled.mu = 2.0;
        let exact = ou_bond_price(&scaled, 0.0, 1.0, 0.03, 0.03 * 1.25).unwrap();
        assert!(e.z_score(exact).abs() < 3.0, "{e:?} vs {exact}");
    }

    fn td(kappa: f64, eta: f64) -> TopDownParams {
        TopDownParams {
            kappa,
            theta: 1.0,
            sigma: 0.5,
            eta,
            mu: 1.1,
            loss: LossDist::Constant { value: 0.5 },
            names: 10,
            r: 0.03,
        }
    }

    #[test]
    fn cox_counts_match_moments() {
        let p = td(0.5, 0.0);
        let pair = Pair { market: p.clone(), investor: p.clone() };
        let b = simulate_topdown(&pair, Measure::Market, 0.8, 1.0, 20_000, 50, 4).unwrap();
        let n: Vec<f64> = b.states.iter().map(|s| s[50][1]).collect();
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let sd = (n.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64).sqrt();
        let (en, _) = cdx_moments(&p, 0.0, 1.0, 0.8, 0.0, 0.0).unwrap();
        assert!((mean - en).abs() < 3.0 * sd / (n.len() as f64).sqrt(), "{mean} vs {en}");
    }

    #[test]
    fn zero_intensity_never_defaults() {
        let mut p = td(0.5, 0.25);
        p.theta = 0.0;
        let pair = Pair { market: p.clone(), investor: p };
        let b = simulate_topdown(&pair, Measure::Market, 0.0, 1.0, 50, 10, 4).unwrap();
        assert!(b.states.iter().flatten().all(|s| s[1] == 0.0));
    }

    #[test]
    fn explosive_clustering_is_reported() {
        let mut p = td(0.1, 0.25);
        p.eta = 50.0;
        let pair = Pair { market: p.clone(), investor: p };
        match simulate_topdown(&pair, Measure::Market, 5.0, 5.0, 10, 50, 1) {
            Err(Error::Explosion { sign, rho_eff }) => {
                assert_eq!(sign, "negative");
                assert!(rho_eff < 0.0);
            }
            other => panic!("expected explosion, got {:?}", other.map(|b| b.n_paths)),
        }
    }
}
