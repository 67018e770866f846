//! Run configuration. One TOML file describes a model pair, a claim, the
//! lattice, solver and Monte Carlo settings and the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use liqtimer::grid::Grid;
use liqtimer::mc_oracle::McConfig;
use liqtimer::models::{
    one_factor_view, validate, ClaimSpec, CirParams, Measure, MeasurePair, ModelKind, ModelParams, OuParams, TopDownParams,
};
use liqtimer::pricers::state_from_lambda;
use liqtimer::vi_solver::{cdx_grid, JumpMode, SolverConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub claim: ClaimSpec,
    #[serde(default)]
    pub state: StateBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub verify: VerifyBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Market parameters in full; the investor table lists only the keys that
/// differ from the market.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub kind: ModelKind,
    pub market: Table,
    #[serde(default)]
    pub investor: Table,
}

/// Valuation time and market intensity. The intensity defaults to the
/// market's long-run level.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateBlock {
    pub t0: f64,
    pub lambda0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridBlock {
    pub steps: usize,
    pub cells: usize,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self {
            steps: 200,
            cells: 400,
            lambda_min: None,
            lambda_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    #[default]
    Liquidation,
    Purchase,
    /// Liquidation, purchase, sequential buy-then-sell and the buy-sell
    /// problem with short sales allowed.
    BuySell,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    pub problem: Problem,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub jump_mode: JumpMode,
    /// Nodes with premium at most this are stopping nodes.
    pub stop_eps: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            problem: Problem::default(),
            omega: s.omega,
            tol: s.tol,
            max_iter: s.max_iter,
            jump_mode: s.jump_mode,
            stop_eps: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McBlock {
    pub paths: usize,
    pub seed: u64,
    pub steps_per_year: usize,
    /// Measure used by `simulate`.
    pub measure: Measure,
}

impl Default for McBlock {
    fn default() -> Self {
        let m = McConfig::default();
        Self {
            paths: m.n_paths,
            seed: m.seed,
            steps_per_year: m.steps_per_year,
            measure: Measure::Market,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyBlock {
    pub z_max: f64,
    /// Size in cells of the boundary perturbation probe.
    pub perturb_cells: usize,
    /// Allowed gain of a perturbed boundary, in standard errors.
    pub perturb_se: f64,
    /// Shift, in cells, applied to the solved boundary before checking.
    pub shift_cells: i64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            z_max: 3.0,
            perturb_cells: 2,
            perturb_se: 1.0,
            shift_cells: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

/// A validated configuration with its model pair built.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub pair: MeasurePair,
    pub hash: String,
}

pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Run> {
    let src = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&src, overrides)
}

pub fn parse(src: &str, overrides: &Overrides) -> CliResult<Run> {
    let mut cfg: RunConfig = toml::from_str(src).map_err(|e| CliError::Config(e.to_string()))?;
    let raw: Value = toml::from_str(src).map_err(|e| CliError::Config(e.to_string()))?;
    reject_unknown(&raw, &Value::try_from(&cfg).map_err(|e| CliError::Config(e.to_string()))?, src, "")?;

    if let Some(dir) = &overrides.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.mc.seed = seed;
    }
    if let Some(paths) = overrides.paths {
        cfg.mc.paths = paths;
    }

    let market = model_params(cfg.model.kind, cfg.model.market.clone(), src, "model.market")?;
    let mut merged = cfg.model.market.clone();
    merged.extend(cfg.model.investor.clone());
    let investor = model_params(cfg.model.kind, merged, src, "model.investor")?;
    let pair = MeasurePair::new(market, investor)?;
    validate(&pair).into_result()?;
    check(&cfg, &pair)?;

    let hash = config_hash(&cfg)?;
    Ok(Run { cfg, pair, hash })
}

fn model_params(kind: ModelKind, table: Table, src: &str, at: &str) -> CliResult<ModelParams> {
    let v = Value::Table(table);
    Ok(match kind {
        ModelKind::Ou => ModelParams::Ou(strict::<OuParams>(v, src, at)?),
        ModelKind::Cir => ModelParams::Cir(strict::<CirParams>(v, src, at)?),
        ModelKind::TopDown => ModelParams::TopDown(strict::<TopDownParams>(v, src, at)?),
    })
}

/// Deserialize and reject any key the target type does not read back.
fn strict<T: DeserializeOwned + Serialize>(v: Value, src: &str, at: &str) -> CliResult<T> {
    let parsed: T = v.clone().try_into().map_err(|e| CliError::Config(format!("{at}: {e}")))?;
    let back = Value::try_from(&parsed).map_err(|e| CliError::Config(format!("{at}: {e}")))?;
    reject_unknown(&v, &back, src, at)?;
    Ok(parsed)
}

fn reject_unknown(input: &Value, parsed: &Value, src: &str, at: &str) -> CliResult<()> {
    let mut unknown = Vec::new();
    collect_unknown(input, parsed, at, &mut unknown);
    match unknown.first() {
        None => Ok(()),
        Some(key) => {
            let leaf = key.rsplit('.').next().unwrap_or(key);
            let line = src
                .lines()
                .position(|l| l.trim_start().strip_prefix(leaf).is_some_and(|rest| rest.trim_start().starts_with('=')));
            Err(CliError::Config(match line {
                Some(n) => format!("unknown key `{key}` at line {}", n + 1),
                None => format!("unknown key `{key}`"),
            }))
        }
    }
}

fn collect_unknown(input: &Value, parsed: &Value, at: &str, out: &mut Vec<String>) {
    let join = |k: &str| if at.is_empty() { k.to_string() } else { format!("{at}.{k}") };
    match (input, parsed) {
        (Value::Table(a), Value::Table(b)) => {
            for (k, v) in a {
                match b.get(k) {
                    Some(w) => collect_unknown(v, w, &join(k), out),
                    None => out.push(join(k)),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                collect_unknown(v, w, &join(&i.to_string()), out);
            }
        }
        _ => {}
    }
}

fn check(cfg: &RunConfig, pair: &MeasurePair) -> CliResult<()> {
    let bad = |m: String| Err(CliError::Config(m));
    cfg.claim.validate().into_result()?;
    let is_index = matches!(cfg.claim, ClaimSpec::Cdx { .. });
    if is_index != (pair.kind() == ModelKind::TopDown) {
        return bad("index swaps need the top_down model and the top_down model only prices index swaps".into());
    }
    if is_index && cfg.solver.problem != Problem::Liquidation {
        return bad("index swaps support only the liquidation problem".into());
    }
    let maturity = cfg.claim.maturity();
    if !(0.0..=maturity).contains(&cfg.state.t0) {
        return bad(format!("state.t0 = {} must lie in [0, {maturity}]", cfg.state.t0));
    }
    if cfg.mc.paths < 2 {
        return bad(format!("mc.paths = {} but at least 2 paths are required", cfg.mc.paths));
    }
    if cfg.mc.steps_per_year == 0 {
        return bad("mc.steps_per_year must be positive".into());
    }
    if cfg.grid.steps == 0 || cfg.grid.cells < 2 {
        return bad("grid needs at least one step and two cells".into());
    }
    if !(cfg.verify.z_max > 0.0 && cfg.verify.perturb_se >= 0.0) {
        return bad("verify.z_max must be positive and verify.perturb_se nonnegative".into());
    }
    if !(cfg.solver.stop_eps >= 0.0) {
        return bad("solver.stop_eps must be nonnegative".into());
    }
    solver_config(cfg).validate()?;
    Ok(())
}

fn solver_config(cfg: &RunConfig) -> SolverConfig {
    SolverConfig {
        omega: cfg.solver.omega,
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        jump_mode: cfg.solver.jump_mode,
    }
}

/// SHA-256 of the resolved configuration, excluding the output directory.
fn config_hash(cfg: &RunConfig) -> CliResult<String> {
    let mut c = cfg.clone();
    c.output.dir = PathBuf::new();
    let text = toml::to_string(&c).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

impl Run {
    pub fn claim(&self) -> ClaimSpec {
        self.cfg.claim
    }

    pub fn maturity(&self) -> f64 {
        self.cfg.claim.maturity()
    }

    pub fn seed(&self) -> u64 {
        self.cfg.mc.seed
    }

    pub fn solver(&self) -> SolverConfig {
        solver_config(&self.cfg)
    }

    pub fn mc(&self) -> McConfig {
        McConfig {
            n_paths: self.cfg.mc.paths,
            seed: self.cfg.mc.seed,
            steps_per_year: self.cfg.mc.steps_per_year,
        }
    }

    /// Market intensity at the valuation time.
    pub fn lambda0(&self) -> f64 {
        self.cfg.state.lambda0.unwrap_or(match &self.pair {
            MeasurePair::Ou(p) => p.market.mu * p.market.theta_l,
            MeasurePair::Cir(p) => {
                p.market.mu * p.market.w_l.iter().zip(&p.market.theta).map(|(w, t)| w * t).sum::<f64>()
            }
            MeasurePair::TopDown(p) => p.market.mu * p.market.theta,
        })
    }

    pub fn x0(&self) -> CliResult<Vec<f64>> {
        Ok(state_from_lambda(&self.pair.market(), self.lambda0())?)
    }

    pub fn grid(&self) -> CliResult<Grid> {
        let g = &self.cfg.grid;
        let maturity = self.maturity();
        let default = match &self.pair {
            MeasurePair::TopDown(p) => cdx_grid(p, maturity, g.steps, g.cells)?,
            pair => Grid::for_view(&one_factor_view(pair)?, maturity, g.steps, g.cells)?,
        };
        Ok(Grid::new(
            maturity,
            g.steps,
            g.cells,
            g.lambda_min.unwrap_or(default.lambda_min),
            g.lambda_max.unwrap_or(default.lambda_max),
        )?)
    }
}
