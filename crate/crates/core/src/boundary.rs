//! Sell/delay regions and free boundaries read off a premium surface, and
//! the maps between intensity and market price used to report them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ClaimSpec, ModelParams, TopDownParams};
use crate::numeric::bisect;
use crate::pricers::{cdx_coefficients, cir_factor, ou_coefficients, price_in_lambda};
use crate::vi_solver::PremiumSurface;

/// Which side of the boundary, in intensity, the sell region lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    SellAbove,
    SellBelow,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::SellAbove => "sell_above",
            Side::SellBelow => "sell_below",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Sell,
    Delay,
}

/// Sell if `G < 0` at the top of the lattice at the first time node.
pub fn detect_side(g: &[Vec<f64>]) -> Side {
    match g.first().and_then(|row| row.last()) {
        Some(v) if *v < 0.0 => Side::SellAbove,
        _ => Side::SellBelow,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub t: f64,
    /// `None` when the sell region is empty at this time.
    pub lambda_star: Option<f64>,
    pub price_star: Option<f64>,
    /// Every maximal run of sell nodes, as `(λ_lo, λ_hi)`.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub side: Side,
    pub eps: f64,
    pub points: Vec<BoundaryPoint>,
    pub warnings: Vec<String>,
    /// How sub-cell locations were obtained.
    pub interpolation: &'static str,
    /// The stopping rule this boundary encodes.
    pub stopping_rule: &'static str,
}

impl Boundary {
    /// Fill `price_star` with `map(t, λ*)`.
    pub fn with_prices<F: Fn(f64, f64) -> Result<f64>>(mut self, map: F) -> Result<Self> {
        for p in &mut self.points {
            p.price_star = p.lambda_star.map(|l| map(p.t, l)).transpose()?;
        }
        Ok(self)
    }

    pub fn at(&self, n: usize) -> Option<f64> {
        self.points[n].lambda_star
    }

    /// Boundary at an arbitrary time: linear between time nodes where both
    /// neighbours exist, otherwise the nearer node's value.
    pub fn lambda_at(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.t <= t);
        if i == 0 {
            return pts.first()?.lambda_star;
        }
        if i == pts.len() {
            return pts[i - 1].lambda_star;
        }
        let (a, b) = (&pts[i - 1], &pts[i]);
        let w = (t - a.t) / (b.t - a.t);
        match (a.lambda_star, b.lambda_star) {
            (Some(x), Some(y)) => Some(x + w * (y - x)),
            _ if w < 0.5 => a.lambda_star,
            _ => b.lambda_star,
        }
    }

    /// Whether `(t, λ)` lies in the sell region.
    pub fn sells(&self, t: f64, lambda: f64) -> bool {
        match (self.lambda_at(t), self.side) {
            (None, _) => false,
            (Some(b), Side::SellBelow) => lambda <= b,
            (Some(b), Side::SellAbove) => lambda >= b,
        }
    }

    /// The same rule with every boundary level moved by `dl` in intensity.
    pub fn shifted(&self, dl: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p.lambda_star = p.lambda_star.map(|l| l + dl);
            p.price_star = None;
        }
        out
    }
}

/// Nodes with premium at most `eps` are sell nodes.
pub fn classify(surface: &PremiumSurface, eps: f64) -> Vec<Vec<Region>> {
    surface
        .values
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| if *v <= eps { Region::Sell } else { Region::Delay })
                .collect()
        })
        .collect()
}

/// Boundary at each time node. For `SellBelow` it is the upper end of the
/// lowest run of sell nodes, for `SellAbove` the lower end of the highest
/// run. The crossing inside the cell is placed where the straight line
/// through `√L` at the two nearest delay nodes reaches zero, since the
/// premium vanishes quadratically at a smooth-fit boundary.
pub fn extract_boundary(surface: &PremiumSurface, side: Side, eps: f64) -> Boundary {
    let grid = &surface.grid;
    let k = grid.cells;
    let h = grid.h();
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(grid.steps + 1);
    for (n, row) in surface.values.iter().enumerate() {
        let t = grid.t(n);
        let runs = zero_runs(row, eps);
        let intervals: Vec<(f64, f64)> = runs.iter().map(|&(a, b)| (grid.lambda(a), grid.lambda(b))).collect();
        if runs.len() > 1 {
            warnings.push(format!("t = {t}: sell region has {} disjoint intervals", runs.len()));
        }
        let lambda_star = match side {
            Side::SellBelow => runs.first().map(|&(_, b)| {
                if b == k {
                    grid.lambda_max
                } else {
                    let s1 = row[b + 1].max(0.0).sqrt();
                    let s2 = row.get(b + 2).map_or(s1, |v| v.max(0.0).sqrt());
                    let x = if s2 > s1 { grid.lambda(b + 1) - h * s1 / (s2 - s1) } else { grid.lambda(b) };
                    x.clamp(grid.lambda(b), grid.lambda(b + 1))
                }
            }),
            Side::SellAbove => runs.last().map(|&(a, _)| {
                if a == 0 {
                    grid.lambda_min
                } else {
                    let s1 = row[a - 1].max(0.0).sqrt();
                    let s2 = if a >= 2 { row[a - 2].max(0.0).sqrt() } else { s1 };
                    let x = if s2 > s1 { grid.lambda(a - 1) + h * s1 / (s2 - s1) } else { grid.lambda(a) };
                    x.clamp(grid.lambda(a - 1), grid.lambda(a))
                }
            }),
        };
        points.push(BoundaryPoint {
            t,
            lambda_star,
            price_star: None,
            intervals,
        });
    }
    Boundary {
        side,
        eps,
        points,
        warnings,
        interpolation: "linear extrapolation of the square-root premium",
        stopping_rule: "first entry into the sell region, or default if earlier",
    }
}

fn zero_runs(row: &[f64], eps: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (j, v) in row.iter().enumerate() {
        match (*v <= eps, start) {
            (true, None) => start = Some(j),
            (false, Some(a)) => {
                runs.push((a, j - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        runs.push((a, row.len() - 1));
    }
    runs
}

/// Pre-default zero-recovery bond price at intensity `λ`.
pub fn bond_price_map(model: &ModelParams, t: f64, maturity: f64, lambda: f64) -> Result<f64> {
    Ok(price_in_lambda(&ClaimSpec::ZeroRecoveryBond { maturity }, model, t, lambda)?.0)
}

/// Intensity implied by a zero-recovery bond price under a constant short
/// rate. Exact for the Gaussian model; Newton to `1e−12` for square-root.
pub fn bond_price_inverse(model: &ModelParams, t: f64, maturity: f64, price: f64) -> Result<f64> {
    let s = maturity - t;
    if !(s > 0.0) {
        return Err(Error::Domain(format!("no inverse at or after maturity (t = {t})")));
    }
    match model {
        ModelParams::Ou(p) => {
            if !p.has_constant_rate() {
                return Err(Error::Unsupported("bond inverse needs a constant short rate".into()));
            }
            if !(price > 0.0) {
                return Err(Error::PriceOutOfRange { price, lo: 0.0, hi: f64::INFINITY });
            }
            let c = ou_coefficients(p, s, 1.0);
            Ok((-price.ln() + c.a - c.b * p.theta_r) / c.d)
        }
        ModelParams::Cir(p) => {
            if !p.is_intensity_only() {
                return Err(Error::Unsupported("bond inverse needs a single intensity factor".into()));
            }
            let scale = p.mu * p.w_l[0];
            let f = cir_factor(p.kappa[0], p.theta[0], p.sigma[0], scale, s);
            let hi = (f.ln_a - p.r0 * s).exp();
            if !(price > 0.0 && price <= hi) {
                return Err(Error::PriceOutOfRange { price, lo: 0.0, hi });
            }
            // log C is linear in the factor, so one Newton step is exact up
            // to rounding; iterate to polish
            let target = price.ln();
            let mut x = 0.0;
            for _ in 0..50 {
                let step = (f.ln_a - p.r0 * s - f.b * x - target) / f.b;
                x += step;
                if step.abs() < 1e-12 * x.abs().max(1.0) {
                    break;
                }
            }
            Ok(scale * x)
        }
        ModelParams::TopDown(_) => Err(Error::Unsupported("no single-name bond in the top-down model".into())),
    }
}

/// Spot CDS value to the protection buyer at intensity `λ`.
pub fn cds_price_map(model: &ModelParams, t: f64, maturity: f64, spread: f64, lambda: f64) -> Result<f64> {
    Ok(price_in_lambda(&ClaimSpec::Cds { maturity, spread }, model, t, lambda)?.0)
}

/// Intensity in `[lo, hi]` at which the CDS is worth `price`, by bisection
/// to `1e−10` after checking the map is monotone on a 64-point sample.
pub fn cds_price_inverse(
    model: &ModelParams,
    t: f64,
    maturity: f64,
    spread: f64,
    price: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let samples: Vec<f64> = (0..=64)
        .map(|i| cds_price_map(model, t, maturity, spread, lo + (hi - lo) * i as f64 / 64.0))
        .collect::<Result<_>>()?;
    let increasing = samples.windows(2).all(|w| w[1] >= w[0]);
    let decreasing = samples.windows(2).all(|w| w[1] <= w[0]);
    if !(increasing || decreasing) {
        return Err(Error::NonMonotone { lo, hi });
    }
    let (a, b) = (samples[0].min(samples[64]), samples[0].max(samples[64]));
    if price < a || price > b {
        return Err(Error::PriceOutOfRange { price, lo: a, hi: b });
    }
    let f = |l: f64| cds_price_map(model, t, maturity, spread, l).map_or(f64::NAN, |v| v - price);
    bisect(f, lo, hi, 1e-10).ok_or(Error::NonMonotone { lo, hi })
}

/// Index swap ex-dividend value `k2λ + k1n + k0`.
pub fn cdx_price_map(p: &TopDownParams, spread: f64, t: f64, maturity: f64, n: f64, lambda: f64) -> Result<f64> {
    Ok(cdx_coefficients(p, spread, t, maturity)?.value(lambda, n))
}

/// Exact inverse `λ = (C − k1n − k0)/k2`.
pub fn cdx_price_inverse(p: &TopDownParams, spread: f64, t: f64, maturity: f64, n: f64, price: f64) -> Result<f64> {
    if t >= maturity {
        return Err(Error::Domain("the index value does not depend on λ at maturity".into()));
    }
    let k = cdx_coefficients(p, spread, t, maturity)?;
    Ok((price - k.k1 * n - k.k0) / k.k2)
}
