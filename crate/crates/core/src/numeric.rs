//! Small numerical kernels shared by the pricers, the solver and the oracle.
//!
//! Most affine-model coefficients reduce to integrals of
//! `phi(a, s) = (1 - e^{-a s}) / a`. The helpers here evaluate those in
//! closed form and switch to composite Gauss–Legendre when a rate is small
//! enough that the closed form would cancel catastrophically.

use serde::{Deserialize, Serialize};

/// `(1 - e^{-a s}) / a`, continuous at `a = 0` where it equals `s`.
pub fn phi(a: f64, s: f64) -> f64 {
    let x = a * s;
    if x.abs() < 1e-8 {
        s * (1.0 - 0.5 * x + x * x / 6.0)
    } else {
        -(-x).exp_m1() / a
    }
}

/// `(1 - e^{-x}) / x`, equal to 1 at the origin.
pub fn psi(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `∫_0^s phi(a, z) dz`.
pub fn int_phi(a: f64, s: f64) -> f64 {
    let x = a * s;
    if x.abs() < 0.1 {
        // s^2 Σ (-x)^n / (n + 2)!
        let mut term = 0.5;
        let mut sum = 0.0;
        for n in 0..16 {
            sum += term;
            term *= -x / (n as f64 + 3.0);
        }
        s * s * sum
    } else {
        (s - phi(a, s)) / a
    }
}

/// `∫_0^s phi(a, z) phi(b, z) dz`.
pub fn int_phi_phi(a: f64, b: f64, s: f64) -> f64 {
    if a.abs().min(b.abs()) * s >= 0.1 {
        (s - phi(a, s) - phi(b, s) + phi(a + b, s)) / (a * b)
    } else {
        let panels = panels_for(a.abs().max(b.abs()) * s);
        gauss_legendre(|z| phi(a, z) * phi(b, z), 0.0, s, panels)
    }
}

/// `∫_0^s e^{-c v} phi(d, v) dv`.
pub fn int_exp_phi(c: f64, d: f64, s: f64) -> f64 {
    if (d * s).abs() >= 0.1 {
        (phi(c, s) - phi(c + d, s)) / d
    } else {
        let panels = panels_for(c.abs().max(d.abs()) * s);
        gauss_legendre(|v| (-c * v).exp() * phi(d, v), 0.0, s, panels)
    }
}

fn panels_for(scale: f64) -> usize {
    ((scale / 2.0).ceil() as usize).clamp(4, 256)
}

const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// Composite 16-point Gauss–Legendre on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL16_X.iter().zip(GL16_W.iter()) {
            s += w * (f(mid - half * x) + f(mid + half * x));
        }
        total += s * half;
    }
    total
}

/// Composite Simpson with `n` panels (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Simpson over sampled values on a uniform grid (odd number of samples).
pub fn simpson_samples(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    debug_assert!(n.is_multiple_of(2));
    let mut s = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// Adaptive Simpson, used by tests as an independent quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Expectation of `g(Y)` for `Y ~ N(mean, sd^2)`, by Simpson over ±8 sd.
pub fn gaussian_expectation<F: Fn(f64) -> f64>(g: F, mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return g(mean);
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    simpson(
        |z| g(mean + sd * z) * norm * (-0.5 * z * z).exp(),
        -8.0,
        8.0,
        160,
    )
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || (hi - lo) < tol {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Piecewise-linear schedule with flat extrapolation outside the knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(mut knots: Vec<(f64, f64)>) -> Self {
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { knots }
    }

    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        match k.len() {
            0 => 0.0,
            1 => k[0].1,
            _ => {
                if t <= k[0].0 {
                    return k[0].1;
                }
                if t >= k[k.len() - 1].0 {
                    return k[k.len() - 1].1;
                }
                let i = k.partition_point(|p| p.0 <= t) - 1;
                let (t0, v0) = k[i];
                let (t1, v1) = k[i + 1];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Knot abscissae strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        self.knots.iter().map(|k| k.0).filter(move |&t| t > a && t < b)
    }
}

/// Monotone cubic (Fritsch–Carlson) interpolant on a uniform grid with
/// constant extrapolation outside it.
pub struct MonotoneCubic<'a> {
    x0: f64,
    h: f64,
    y: &'a [f64],
    slopes: Vec<f64>,
}

impl<'a> MonotoneCubic<'a> {
    pub fn new(x0: f64, h: f64, y: &'a [f64]) -> Self {
        let n = y.len();
        let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
        let mut slopes = vec![0.0; n];
        if n >= 2 {
            slopes[0] = delta[0];
            slopes[n - 1] = delta[n - 2];
            for i in 1..n - 1 {
                let (a, b) = (delta[i - 1], delta[i]);
                slopes[i] = if a * b <= 0.0 {
                    0.0
                } else {
                    // harmonic mean keeps the interpolant monotone on uniform grids
                    2.0 * a * b / (a + b)
                };
            }
        }
        Self { x0, h, y, slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let xmax = self.x0 + self.h * (n - 1) as f64;
        if x <= self.x0 {
            return self.y[0];
        }
        if x >= xmax {
            return self.y[n - 1];
        }
        let u = (x - self.x0) / self.h;
        let i = (u.floor() as usize).min(n - 2);
        let s = u - i as f64;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.slopes[i] * self.h, self.slopes[i + 1] * self.h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * m1
    }
}
