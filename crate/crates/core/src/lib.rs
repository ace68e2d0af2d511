//! Numerical laboratory for de Broglie pilot-wave dynamics.
//!
//! * [`state`]: box wavefunctions with exact time evolution and the guidance
//!   velocity `Im(∇ψ/ψ)`.
//! * [`trajectory`]: adaptive Dormand–Prince integration of particle paths,
//!   forward and backward in time.
//! * [`ensemble`]: seeded sampling, coarse-grained densities, the H-function
//!   and total-variation distances.
//! * [`experiment`]: relaxation, entangled-pair signalling and freezing runs.

pub mod ensemble;
pub mod experiment;
pub mod rng;
pub mod state;
pub mod trajectory;

pub use ensemble::{
    coarse_born_density, coarse_density_backtracked, coarse_density_histogram, h_function,
    rejection_sample, tv_distance, DensityGrid, DensitySpec, GridSpec, HSeries,
};
pub use experiment::{
    run_freezing, run_relaxation, run_signalling, ExperimentError, FreezingParams,
    InitialDensity, RelaxationParams, SignallingParams,
};
pub use state::{
    born_density, mode_energy, velocity, wall_expansion_coefficients, BoxGeometry,
    EntangledState, ExpandingBoxState, ModeIndex, ModeSuperposition, Point, WaveEvaluation,
    WaveState,
};
pub use trajectory::{backtrack, integrate, IntegratorConfig, PathStatus, TrajectoryPath};
