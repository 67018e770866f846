use std::fmt::Write as _;

use liqtimer::boundary::{cdx_price_map, classify, detect_side, extract_boundary, Boundary, Region, Side};
use liqtimer::drift::drift_grid;
use liqtimer::grid::Grid;
use liqtimer::mc_oracle::{estimate_price, evaluate_strategy, simulate_paths, simulate_topdown, McEstimate, PathBatch};
use liqtimer::models::{ClaimSpec, MeasurePair, ModelParams};
use liqtimer::pricers::{claim_price, closed_form_surface, default_free_bond, price_in_lambda};
use liqtimer::vi_solver::{
    solve_cdx_vi, solve_liquidation_vi, solve_purchase_vi, solve_sequential_vi, solve_unconstrained_vi, PremiumSurface,
};

use crate::config::{Problem, Run};
use crate::error::{CliError, CliResult};
use crate::output::{num, opt, Emitter};

/// Paths held in memory at once by `simulate`.
const PATH_CHUNK: usize = 10_000;

pub struct Report {
    pub text: String,
    pub files: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self {
            text: String::new(),
            files: Vec::new(),
        }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }
}

fn emitter(run: &Run) -> CliResult<Emitter> {
    Emitter::new(&run.cfg.output.dir, &run.hash, run.seed())
}

fn market_price(run: &Run, t: f64, lambda: f64) -> liqtimer::Result<f64> {
    let claim = run.claim();
    match (&run.pair, claim) {
        (MeasurePair::TopDown(p), ClaimSpec::Cdx { maturity, spread }) => cdx_price_map(&p.market, spread, t, maturity, 0.0, lambda),
        _ => Ok(price_in_lambda(&claim, &run.pair.market(), t, lambda)?.0),
    }
}

pub fn price(run: &Run) -> CliResult<Report> {
    let claim = run.claim();
    let (t0, l0) = (run.cfg.state.t0, run.lambda0());
    let x0 = run.x0()?;
    let mut rep = Report::new();
    let mut rows = Vec::new();
    rep.line(format!("claim {claim:?}"));
    rep.line(format!("t0 = {t0}, market intensity λ0 = {l0}"));
    for (name, model) in [("market", run.pair.market()), ("investor", run.pair.investor())] {
        let c = claim_price(&claim, &model, t0, &x0)?;
        let beta = match &model {
            ModelParams::TopDown(p) => (-p.r * (claim.maturity() - t0)).exp(),
            m => default_free_bond(m, t0, claim.maturity(), &x0)?,
        };
        rep.line(format!("{name:>8}: C = {c:.10}, β = {beta:.10}"));
        rows.push(vec![name.to_string(), num(t0), num(l0), num(c), num(beta)]);
    }
    let out = emitter(run)?.write("price.csv", &["measure", "t0", "lambda0", "price", "beta"], &rows)?;
    rep.files.push(out.display().to_string());
    Ok(rep)
}

pub fn drift(run: &Run) -> CliResult<Report> {
    let grid = run.grid()?;
    let g = drift_grid(&run.claim(), &run.pair, &grid)?;
    let (prices, _) = closed_form_surface(&run.claim(), &run.pair.market(), &grid)?;
    let mut rows = Vec::with_capacity((grid.steps + 1) * (grid.cells + 1));
    for n in 0..=grid.steps {
        for j in 0..=grid.cells {
            rows.push(vec![num(grid.t(n)), num(grid.lambda(j)), num(prices[n][j]), num(g[n][j])]);
        }
    }
    let (lo, hi) = g.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let mut rep = Report::new();
    rep.line(format!("G on {} × {} nodes: min {lo:.6e}, max {hi:.6e}", grid.steps + 1, grid.cells + 1));
    rep.line(format!("sell side of the boundary: {}", detect_side(&g).as_str()));
    let out = emitter(run)?.write("drift.csv", &["t", "lambda", "price", "g"], &rows)?;
    rep.files.push(out.display().to_string());
    Ok(rep)
}

/// Solved premium surfaces with their stopping boundaries.
pub struct Solved {
    pub grid: Grid,
    pub g: Vec<Vec<f64>>,
    pub surface: PremiumSurface,
    pub boundary: Boundary,
    pub buy_sell: Option<BuySell>,
}

pub struct BuySell {
    pub purchase: PremiumSurface,
    pub sequential: PremiumSurface,
    pub unconstrained: PremiumSurface,
    pub buy_constrained: Boundary,
    pub buy_unconstrained: Boundary,
}

fn opposite(side: Side) -> Side {
    match side {
        Side::SellAbove => Side::SellBelow,
        Side::SellBelow => Side::SellAbove,
    }
}

pub fn solve_problem(run: &Run, problem: Problem) -> CliResult<Solved> {
    let claim = run.claim();
    let grid = run.grid()?;
    let cfg = run.solver();
    let eps = run.cfg.solver.stop_eps;
    let g = drift_grid(&claim, &run.pair, &grid)?;
    let sell_side = detect_side(&g);
    let surface = match (&run.pair, claim, problem) {
        (MeasurePair::TopDown(p), ClaimSpec::Cdx { spread, .. }, _) => solve_cdx_vi(p, spread, &grid, &cfg)?,
        (_, _, Problem::Purchase) => solve_purchase_vi(&claim, &run.pair, &grid, &cfg)?,
        _ => solve_liquidation_vi(&claim, &run.pair, &grid, &cfg)?,
    };
    let side = if problem == Problem::Purchase { opposite(sell_side) } else { sell_side };
    let priced = |b: Boundary| b.with_prices(|t, l| market_price(run, t, l));
    let boundary = priced(extract_boundary(&surface, side, eps))?;
    let buy_sell = if problem == Problem::BuySell {
        let purchase = solve_purchase_vi(&claim, &run.pair, &grid, &cfg)?;
        let sequential = solve_sequential_vi(&run.pair, &grid, &surface, &cfg)?;
        let unconstrained = solve_unconstrained_vi(&run.pair, &grid, &surface, &purchase, &cfg)?;
        let gap = PremiumSurface {
            values: difference(&sequential.values, &surface.values),
            ..sequential.clone()
        };
        Some(BuySell {
            buy_constrained: priced(extract_boundary(&gap, opposite(sell_side), eps))?,
            buy_unconstrained: priced(extract_boundary(&purchase, opposite(sell_side), eps))?,
            purchase,
            sequential,
            unconstrained,
        })
    } else {
        None
    };
    Ok(Solved {
        grid,
        g,
        surface,
        boundary,
        buy_sell,
    })
}

fn difference(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect()).collect()
}

fn boundary_rows(name: &str, b: &Boundary, rows: &mut Vec<Vec<String>>) {
    for p in &b.points {
        rows.push(vec![name.to_string(), b.side.as_str().to_string(), num(p.t), opt(p.lambda_star), opt(p.price_star)]);
    }
}

const BOUNDARY_HEADER: [&str; 5] = ["boundary", "side", "t", "lambda_star", "price_star"];

fn all_boundaries(s: &Solved, problem: Problem) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let main = if problem == Problem::Purchase { "purchase" } else { "liquidation" };
    boundary_rows(main, &s.boundary, &mut rows);
    if let Some(bs) = &s.buy_sell {
        boundary_rows("purchase_constrained", &bs.buy_constrained, &mut rows);
        boundary_rows("purchase_unconstrained", &bs.buy_unconstrained, &mut rows);
    }
    rows
}

fn summarize(rep: &mut Report, name: &str, s: &PremiumSurface, b: &Boundary) {
    let p0 = &b.points[0];
    rep.line(format!(
        "{name}: max residual {:.2e}, {} PSOR sweeps; boundary at t=0 λ* = {}, price* = {}",
        s.max_residual(),
        s.iterations.iter().sum::<usize>(),
        p0.lambda_star.map_or("none".into(), |v| format!("{v:.6}")),
        p0.price_star.map_or("none".into(), |v| format!("{v:.6}")),
    ));
    for w in s.warnings.iter().chain(&b.warnings).take(5) {
        rep.line(format!("  warning: {w}"));
    }
}

pub fn solve(run: &Run) -> CliResult<Report> {
    let problem = run.cfg.solver.problem;
    let s = solve_problem(run, problem)?;
    let grid = &s.grid;
    let (prices, _) = closed_form_surface(&run.claim(), &run.pair.market(), grid)?;
    let regions = classify(&s.surface, run.cfg.solver.stop_eps);
    let em = emitter(run)?;
    let mut rep = Report::new();
    summarize(&mut rep, "premium", &s.surface, &s.boundary);

    let mut rows = Vec::with_capacity((grid.steps + 1) * (grid.cells + 1));
    for n in 0..=grid.steps {
        for j in 0..=grid.cells {
            let mut row = vec![
                num(grid.t(n)),
                num(grid.lambda(j)),
                num(prices[n][j]),
                num(s.g[n][j]),
                num(s.surface.values[n][j]),
                region_name(regions[n][j]).to_string(),
            ];
            if let Some(bs) = &s.buy_sell {
                row.extend([bs.purchase.values[n][j], bs.sequential.values[n][j], bs.unconstrained.values[n][j]].map(num));
            }
            rows.push(row);
        }
    }
    let mut header = vec!["t", "lambda", "price", "g", "premium", "region"];
    if s.buy_sell.is_some() {
        header.extend(["purchase", "sequential", "unconstrained"]);
    }
    rep.files.push(em.write("surface.csv", &header, &rows)?.display().to_string());
    rep.files.push(em.write("boundary.csv", &BOUNDARY_HEADER, &all_boundaries(&s, problem))?.display().to_string());

    let locus: Vec<Vec<String>> = (0..=grid.steps)
        .flat_map(|n| zero_crossings(grid, &s.g[n]).into_iter().map(move |l| vec![num(grid.t(n)), num(l)]))
        .collect();
    rep.files.push(em.write("g_locus.csv", &["t", "lambda"], &locus)?.display().to_string());

    let delay: Vec<Vec<String>> = (0..=grid.steps)
        .flat_map(|n| {
            delay_runs(&regions[n])
                .into_iter()
                .map(move |(a, b)| vec![num(grid.t(n)), num(grid.lambda(a)), num(grid.lambda(b))])
        })
        .collect();
    rep.line(format!("delay region: {} intervals", delay.len()));
    rep.files.push(em.write("delay_region.csv", &["t", "lambda_lo", "lambda_hi"], &delay)?.display().to_string());
    if let Some(bs) = &s.buy_sell {
        summarize(&mut rep, "constrained purchase", &bs.sequential, &bs.buy_constrained);
        summarize(&mut rep, "unconstrained purchase", &bs.unconstrained, &bs.buy_unconstrained);
    }
    Ok(rep)
}

fn region_name(r: Region) -> &'static str {
    match r {
        Region::Sell => "stop",
        Region::Delay => "delay",
    }
}

/// Linear-interpolated roots of one row of `G`.
fn zero_crossings(grid: &Grid, row: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for j in 0..grid.cells {
        let (a, b) = (row[j], row[j + 1]);
        if a == 0.0 {
            out.push(grid.lambda(j));
        } else if a * b < 0.0 {
            out.push(grid.lambda(j) + grid.h() * a / (a - b));
        }
    }
    if row[grid.cells] == 0.0 {
        out.push(grid.lambda(grid.cells));
    }
    out
}

fn delay_runs(row: &[Region]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (j, r) in row.iter().enumerate() {
        match (*r == Region::Delay, start) {
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

pub fn boundary(run: &Run) -> CliResult<Report> {
    let problem = run.cfg.solver.problem;
    let s = solve_problem(run, problem)?;
    let mut rep = Report::new();
    summarize(&mut rep, "premium", &s.surface, &s.boundary);
    let out = emitter(run)?.write("boundary.csv", &BOUNDARY_HEADER, &all_boundaries(&s, problem))?;
    rep.files.push(out.display().to_string());
    Ok(rep)
}

pub fn simulate(run: &Run) -> CliResult<Report> {
    let mc = run.mc();
    let claim = run.claim();
    let (t0, l0) = (run.cfg.state.t0, run.lambda0());
    let horizon = claim.maturity() - t0;
    if !(horizon > 0.0) {
        return Err(CliError::Config("simulate needs state.t0 before maturity".into()));
    }
    let steps = ((mc.steps_per_year as f64 * horizon).ceil() as usize).max(1);
    let measure = run.cfg.mc.measure;
    let x0 = run.x0()?;
    let mut acc = PathMoments::new(steps);
    let mut scheme = "";
    for (k, start) in (0..mc.n_paths).step_by(PATH_CHUNK).enumerate() {
        let n = PATH_CHUNK.min(mc.n_paths - start);
        let seed = chunk_seed(mc.seed, k);
        let batch = match &run.pair {
            MeasurePair::TopDown(p) => simulate_topdown(p, measure, l0, horizon, n, steps, seed)?,
            pair => simulate_paths(pair, measure, &x0, horizon, n, steps, seed)?,
        };
        acc.add(run, &batch);
        scheme = batch.scheme;
    }
    let rows = acc.rows(run, t0, horizon);
    let header: &[&str] = match run.pair {
        MeasurePair::TopDown(_) => &["t", "lambda_mean", "lambda_sd", "defaults_mean", "loss_mean"],
        _ => &["t", "lambda_mean", "lambda_sd", "survival_mean"],
    };
    let mut rep = Report::new();
    rep.line(format!("{} paths, {steps} steps under the {measure:?} measure ({scheme})", mc.n_paths));
    let em = emitter(run)?;
    rep.files.push(em.write("paths.csv", header, &rows)?.display().to_string());

    let market = run.pair.market();
    let est = estimate_price(&claim, &market, t0, &x0, &mc)?;
    let exact = claim_price(&claim, &market, t0, &x0)?;
    rep.line(format!(
        "market price MC {:.8} ± {:.2e} vs closed form {exact:.8} (z = {:+.2})",
        est.mean,
        est.std_error,
        est.z_score(exact)
    ));
    rep.files.push(
        em.write(
            "price_mc.csv",
            &["estimate", "std_error", "closed_form", "z", "paths"],
            &[vec![num(est.mean), num(est.std_error), num(exact), num(est.z_score(exact)), est.n_paths.to_string()]],
        )?
        .display()
        .to_string(),
    );
    Ok(rep)
}

/// Seed of the `k`-th block of simulated paths.
fn chunk_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Running cross-sectional sums per time step: market intensity, its
/// square, and either the survival factor or the portfolio counters.
struct PathMoments {
    n: usize,
    sums: Vec<[f64; 4]>,
}

impl PathMoments {
    fn new(steps: usize) -> Self {
        Self {
            n: 0,
            sums: vec![[0.0; 4]; steps + 1],
        }
    }

    fn add(&mut self, run: &Run, batch: &PathBatch) {
        let intensity = |x: &[f64]| -> f64 {
            match &run.pair {
                MeasurePair::Ou(_) => x[1],
                MeasurePair::Cir(p) => p.market.mu * p.market.w_l.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
                MeasurePair::TopDown(_) => x[0],
            }
        };
        for (p, path) in batch.states.iter().enumerate() {
            for (k, x) in path.iter().enumerate() {
                let l = intensity(x);
                let s = &mut self.sums[k];
                s[0] += l;
                s[1] += l * l;
                match run.pair {
                    MeasurePair::TopDown(_) => {
                        s[2] += x[1];
                        s[3] += x[2];
                    }
                    _ => s[2] += (-batch.integrated_intensity[p][k]).exp(),
                }
            }
        }
        self.n += batch.n_paths;
    }

    fn rows(&self, run: &Run, t0: f64, horizon: f64) -> Vec<Vec<String>> {
        let m = self.n as f64;
        let steps = self.sums.len() - 1;
        self.sums
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let mean = s[0] / m;
                let sd = ((s[1] / m - mean * mean).max(0.0) * m / (m - 1.0)).sqrt();
                let mut row = vec![num(t0 + horizon * k as f64 / steps as f64), num(mean), num(sd), num(s[2] / m)];
                if matches!(run.pair, MeasurePair::TopDown(_)) {
                    row.push(num(s[3] / m));
                }
                row
            })
            .collect()
    }
}

struct Check {
    name: &'static str,
    estimate: McEstimate,
    target: f64,
    /// Standard errors from the target: the check's own for the oracle
    /// checks, the unperturbed run's for the perturbation probes.
    z: f64,
    pass: bool,
}

pub fn verify(run: &Run) -> CliResult<Report> {
    let v = &run.cfg.verify;
    let mc = run.mc();
    let claim = run.claim();
    let t0 = run.cfg.state.t0;
    let x0 = run.x0()?;
    let l0 = run.lambda0();
    let market = run.pair.market();
    let exact = claim_price(&claim, &market, t0, &x0)?;

    let s = solve_problem(run, Problem::Liquidation)?;
    let n0 = (t0 / s.grid.dt()).round() as usize;
    if (s.grid.t(n0) - t0).abs() > 1e-9 * s.grid.maturity {
        return Err(CliError::Config(format!("state.t0 = {t0} is not a node of the time grid")));
    }
    let h = s.grid.h();
    let target = exact + s.surface.interpolate(n0, l0);
    let rule = s.boundary.shifted(v.shift_cells as f64 * h);
    let strategy = |b: &Boundary| evaluate_strategy(&claim, &run.pair, b, t0, &x0, &mc);

    let price = estimate_price(&claim, &market, t0, &x0, &mc)?;
    let base = strategy(&rule)?;
    let dl = v.perturb_cells as f64 * h;
    let up = strategy(&rule.shifted(dl))?;
    let down = strategy(&rule.shifted(-dl))?;
    let gain = |e: &McEstimate| (e.mean - base.mean) / base.std_error.max(f64::MIN_POSITIVE);
    let checks = [
        Check {
            name: "price",
            estimate: price,
            target: exact,
            z: price.z_score(exact),
            pass: price.z_score(exact).abs() <= v.z_max,
        },
        Check {
            name: "strategy_value",
            estimate: base,
            target,
            z: base.z_score(target),
            pass: base.z_score(target).abs() <= v.z_max,
        },
        Check {
            name: "perturb_up",
            estimate: up,
            target: base.mean,
            z: gain(&up),
            pass: gain(&up) <= v.perturb_se,
        },
        Check {
            name: "perturb_down",
            estimate: down,
            target: base.mean,
            z: gain(&down),
            pass: gain(&down) <= v.perturb_se,
        },
    ];

    let mut rep = Report::new();
    rep.line(format!(
        "{} paths, seed {}, boundary shift {} cells, perturbation ±{} cells",
        mc.n_paths, mc.seed, v.shift_cells, v.perturb_cells
    ));
    let mut rows = Vec::new();
    for c in &checks {
        let z = c.z;
        rep.line(format!(
            "{} {:<15} MC {:.8} ± {:.2e} vs {:.8} (z = {z:+.2})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.estimate.mean,
            c.estimate.std_error,
            c.target
        ));
        rows.push(vec![
            c.name.to_string(),
            num(c.estimate.mean),
            num(c.estimate.std_error),
            num(c.target),
            num(z),
            c.pass.to_string(),
        ]);
    }
    let out = emitter(run)?.write("verify.csv", &["check", "estimate", "std_error", "target", "z", "pass"], &rows)?;
    rep.files.push(out.display().to_string());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(rep)
    } else {
        let mut msg = rep.text.clone();
        let _ = write!(msg, "failed checks: {}", failed.join(", "));
        Err(CliError::Verification(msg))
    }
}
