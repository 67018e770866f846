use thiserror::Error;

use crate::models::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("degenerate diffusion coefficient in component {component}")]
    DegenerateDiffusion { component: usize },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("singular coefficient: {0}")]
    Singular(String),

    #[error("PSOR failed to converge at time step {step} after {iterations} iterations (worst residual {residual:e})")]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("surface too coarse: {0}")]
    TooCoarse(String),

    #[error("price {price} outside the invertible range ({lo}, {hi})")]
    PriceOutOfRange { price: f64, lo: f64, hi: f64 },

    #[error("price map is not monotone in the intensity on [{lo}, {hi}]")]
    NonMonotone { lo: f64, hi: f64 },

    #[error("intensity explosion during thinning (rho_eff = {rho_eff}, {sign})")]
    Explosion { rho_eff: f64, sign: &'static str },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("{}: {}", x.field, x.message))
        .collect::<Vec<_>>()
        .join("; ")
}
