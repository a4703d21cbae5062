//! Discrete Lax-Oleinik operator, critical value and weak KAM solutions.

mod grid;
mod operator;
mod solve;

use thiserror::Error;

pub use grid::Grid;
pub use operator::{lax_oleinik_step, StepOperator, StepOutput};
pub use solve::{
    calibrated_curve, check_dominated, discrete_action, dominated_with, solve_weak_kam, solve_weak_kam_with, DiscreteCurve,
    DominationReport, SolveOptions, ValueFunction, WeakKamResult, WeakKamSummary,
};

use crate::lagrangian::LagrangianError;

#[derive(Debug, Error)]
pub enum LaxOleinikError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("empty transition window: v_max * dt covers {radius_cells:.3} cells, need at least 1")]
    EmptyWindow { radius_cells: f64 },
    #[error("end cell unreachable: distance {distance} exceeds reach {reach}")]
    Unreachable { distance: f64, reach: f64 },
    #[error("no convergence after {iters} sweeps (residual {residual:e})")]
    NoConvergence {
        iters: usize,
        residual: f64,
        partial: Box<WeakKamResult>,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}
