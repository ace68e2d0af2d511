//! Position ensembles and coarse-grained densities.

mod density;
mod grid;
mod hfunc;

pub use density::{rejection_sample, DensitySpec, BOUND_GRID, BOUND_INFLATION};
pub use grid::{
    backtrack_field, coarse_born_density, coarse_density_backtracked, coarse_density_histogram,
    density_quadrature, BacktrackField, DensityGrid, GridSpec, Provenance,
};
pub use hfunc::{h_function, h_uncertainty, tv_distance, ExpFit, HSample, HSeries, HValue};

use crate::state::StateError;
use crate::trajectory::TrajectoryError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("grid mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("density {density:e} exceeds the sampling bound {bound:e}; re-estimate the bound")]
    BoundExceeded { density: f64, bound: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed density grid: {0}")]
    Parse(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}
