//! Peierls barrier, Aubry set and static classes, calibrated invariant sets.

mod aubry;
mod calibrated;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aubry::{aubry_decomposition, AubryDecomposition, ClassSweepEntry};
pub use calibrated::{calibrated_sets, mane_set, CalibratedSets, PhaseSample, TailReport, TightGraph};
pub use table::{all_nodes, compute_barrier, weak_kam_from_barrier, BarrierOptions, BarrierTable};

use crate::lax_oleinik::LaxOleinikError;

/// A space-time grid node, optionally lifted to phase space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: usize,
    pub cell: usize,
    pub v: Option<Vec<f64>>,
}

impl SamplePoint {
    pub fn base(t: usize, cell: usize) -> Self {
        Self { t, cell, v: None }
    }

    /// Drops the velocity.
    pub fn project(&self) -> Self {
        Self::base(self.t, self.cell)
    }

    pub fn same_base(&self, other: &SamplePoint) -> bool {
        self.t == other.t && self.cell == other.cell
    }
}

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("invalid horizon window [{t_min}, {t_max}]: need t_max > t_min >= 1")]
    InvalidWindow { t_min: usize, t_max: usize },
    #[error("window too short: barrier from source {source_idx} to target {target} still drops by {drift:e} in the last quarter")]
    WindowTooShort {
        source_idx: usize,
        target: usize,
        drift: f64,
        partial: Box<BarrierTable>,
    },
    #[error("targets do not cover the grid: {missing} nodes missing")]
    CoverageGap { missing: usize },
    #[error("no diagonal entry below tol_aubry = {tol_aubry:e} (smallest {min_diagonal:e})")]
    EmptyAubry { tol_aubry: f64, min_diagonal: f64 },
    #[error("table is not square")]
    NotSquare,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    LaxOleinik(#[from] LaxOleinikError),
}
