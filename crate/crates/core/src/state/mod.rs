//! Wavefunction states with exact time evolution.
//!
//! Every state here is a finite superposition of closed-form solutions of the
//! free Schrödinger equation in a box (ħ = 1, mass = 1), so `ψ` and `∇ψ` can
//! be evaluated anywhere without discretising the wave equation. Trajectory
//! integration only ever sees the [`WaveState`] trait.

mod entangled;
mod expanding;
mod superposition;

pub use entangled::{truncation_order, wall_expansion_coefficients, EntangledState, WallMove};
pub use expanding::ExpandingBoxState;
pub use superposition::ModeSuperposition;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Position in (at most two-dimensional) configuration space.
///
/// One-dimensional states only read and write the first component; the
/// second is kept at zero.
pub type Point = [f64; 2];

/// Default box side. With `L = π` the 2D eigenenergies are `(m² + n²)/2`.
pub const DEFAULT_SIDE: f64 = PI;

/// Resolution per dimension of the grid used to estimate `max |ψ(·, 0)|²`.
pub const PEAK_GRID: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("mode dimensionality {mode} does not match geometry dimensionality {geometry}")]
    DimensionMismatch { mode: usize, geometry: usize },
    #[error("invalid mode index: quantum numbers must be >= 1")]
    InvalidMode,
    #[error("duplicate mode {0:?} in superposition")]
    DuplicateMode(ModeIndex),
    #[error("state is not normalized: sum |c|^2 = {0}")]
    NotNormalized(f64),
    #[error("position {x:?} outside the open box (0, {extent:?}) at t = {t}")]
    OutsideDomain { x: Point, extent: Point, t: f64 },
    #[error("node: |psi|^2 = {density:e} below floor {floor:e}")]
    Node { density: f64, floor: f64 },
    #[error("wall-move truncation K = {order} loses {loss:e} of the norm of source mode {mode} (tolerance {tolerance:e})")]
    Truncation {
        mode: u32,
        order: usize,
        loss: f64,
        tolerance: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Quantum numbers of a box eigenmode. `n` is absent for 1D modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    m: u32,
    n: Option<u32>,
}

impl ModeIndex {
    pub fn one(m: u32) -> Result<Self, StateError> {
        if m == 0 {
            return Err(StateError::InvalidMode);
        }
        Ok(Self { m, n: None })
    }

    pub fn two(m: u32, n: u32) -> Result<Self, StateError> {
        if m == 0 || n == 0 {
            return Err(StateError::InvalidMode);
        }
        Ok(Self { m, n: Some(n) })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> Option<u32> {
        self.n
    }

    pub fn dim(&self) -> usize {
        if self.n.is_some() {
            2
        } else {
            1
        }
    }
}

/// A line segment `(0, L)` or a square `(0, L)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    dim: usize,
    side: f64,
}

impl BoxGeometry {
    pub fn new(dim: usize, side: f64) -> Result<Self, StateError> {
        if dim != 1 && dim != 2 {
            return Err(StateError::InvalidParameter(format!(
                "box dimensionality must be 1 or 2, got {dim}"
            )));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(StateError::InvalidParameter(format!(
                "box side must be positive, got {side}"
            )));
        }
        Ok(Self { dim, side })
    }

    pub fn line(side: f64) -> Result<Self, StateError> {
        Self::new(1, side)
    }

    pub fn square(side: f64) -> Result<Self, StateError> {
        Self::new(2, side)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn extent(&self) -> Point {
        if self.dim == 1 {
            [self.side, 0.0]
        } else {
            [self.side, self.side]
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        is_interior(x, &self.extent(), self.dim)
    }
}

/// Box eigenenergy `(π/L)² (m² + n²)/2` in 2D or `(π/L)² m²/2` in 1D.
pub fn mode_energy(mode: ModeIndex, geometry: BoxGeometry) -> Result<f64, StateError> {
    if mode.dim() != geometry.dim() {
        return Err(StateError::DimensionMismatch {
            mode: mode.dim(),
            geometry: geometry.dim(),
        });
    }
    let k = PI / geometry.side();
    let m = f64::from(mode.m());
    let n = f64::from(mode.n().unwrap_or(0));
    Ok(0.5 * k * k * (m * m + n * n))
}

/// `ψ` and `∇ψ` at one configuration-space point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveEvaluation {
    pub psi: Complex64,
    pub grad: [Complex64; 2],
    pub dim: usize,
}

impl WaveEvaluation {
    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.grad[..self.dim].iter().all(|g| g.is_finite())
    }
}

/// de Broglie velocity `Im(∇ψ/ψ)` (mass 1).
///
/// Fails with [`StateError::Node`] when `|ψ|²` is below `node_floor` or zero.
pub fn velocity(eval: &WaveEvaluation, node_floor: f64) -> Result<Point, StateError> {
    let density = eval.psi.norm_sqr();
    if !(density > node_floor) || density == 0.0 {
        return Err(StateError::Node {
            density,
            floor: node_floor,
        });
    }
    let mut v = [0.0; 2];
    for (vi, g) in v.iter_mut().zip(&eval.grad[..eval.dim]) {
        *vi = (g * eval.psi.conj()).im / density;
    }
    Ok(v)
}

pub fn born_density(eval: &WaveEvaluation) -> f64 {
    eval.psi.norm_sqr()
}

/// Which side of a state's event (if any) an evaluation refers to.
///
/// States with a sudden event at `t_event` are discontinuous in time there;
/// the integrator always evaluates a step entirely on one branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Before,
    After,
}

/// A wavefunction that can be evaluated at any interior point and time.
pub trait WaveState: Send + Sync {
    fn dim(&self) -> usize;

    /// Box widths on the given branch at time `t`; the domain is `(0, w)`.
    fn extent_on(&self, t: f64, branch: Branch) -> Point;

    fn eval_on(&self, x: &Point, t: f64, branch: Branch) -> Result<WaveEvaluation, StateError>;

    /// Time of a sudden change of Hamiltonian, if the state has one.
    fn event_time(&self) -> Option<f64> {
        None
    }

    /// `ħ/m` in units of the default particle. Energies and velocities both
    /// scale with it, so it acts as an exact rescaling of time.
    fn velocity_scale(&self) -> f64 {
        1.0
    }

    /// True when the velocity field vanishes identically on `branch`, so
    /// trajectories need no integration there.
    fn static_flow(&self, _branch: Branch) -> bool {
        false
    }

    /// Estimated `max |ψ(·, 0)|²` on a [`PEAK_GRID`]-per-dimension grid.
    fn peak_density(&self) -> f64;

    fn branch_at(&self, t: f64) -> Branch {
        match self.event_time() {
            Some(te) if t >= te => Branch::After,
            _ => Branch::Before,
        }
    }

    fn extent(&self, t: f64) -> Point {
        self.extent_on(t, self.branch_at(t))
    }

    fn eval(&self, x: &Point, t: f64) -> Result<WaveEvaluation, StateError> {
        self.eval_on(x, t, self.branch_at(t))
    }

    /// `|ψ(x, t)|²`, or zero outside the box.
    fn density(&self, x: &Point, t: f64) -> f64 {
        self.eval(x, t).map_or(0.0, |e| e.psi.norm_sqr())
    }

    fn contains(&self, x: &Point, t: f64) -> bool {
        is_interior(x, &self.extent(t), self.dim())
    }

    /// Guidance velocity including the `velocity_scale` factor.
    fn guidance(
        &self,
        x: &Point,
        t: f64,
        branch: Branch,
        node_floor: f64,
    ) -> Result<Point, StateError> {
        let eval = self.eval_on(x, t, branch)?;
        let mut v = velocity(&eval, node_floor)?;
        if self.static_flow(branch) {
            return Ok([0.0; 2]);
        }
        let s = self.velocity_scale();
        if s != 1.0 {
            v.iter_mut().for_each(|c| *c *= s);
        }
        Ok(v)
    }
}

pub(crate) fn is_interior(x: &Point, extent: &Point, dim: usize) -> bool {
    (0..dim).all(|i| x[i] > 0.0 && x[i] < extent[i])
}

pub(crate) fn check_interior(x: &Point, extent: Point, dim: usize, t: f64) -> Result<(), StateError> {
    if is_interior(x, &extent, dim) {
        Ok(())
    } else {
        Err(StateError::OutsideDomain { x: *x, extent, t })
    }
}

/// Fills `sin(jθ)`, `cos(jθ)` for `j = 0..out.len()` by repeated rotation.
pub(crate) fn harmonics(theta: f64, sin: &mut [f64], cos: &mut [f64]) {
    debug_assert_eq!(sin.len(), cos.len());
    if sin.is_empty() {
        return;
    }
    let (s1, c1) = theta.sin_cos();
    sin[0] = 0.0;
    cos[0] = 1.0;
    for j in 1..sin.len() {
        // Re-anchor periodically so rotation error stays at a few ulps.
        if j % 32 == 0 {
            let (s, c) = (j as f64 * theta).sin_cos();
            sin[j] = s;
            cos[j] = c;
        } else {
            sin[j] = sin[j - 1] * c1 + cos[j - 1] * s1;
            cos[j] = cos[j - 1] * c1 - sin[j - 1] * s1;
        }
    }
}

/// Fills `exp(-i β j²)` for `j = 0..out.len()`.
pub(crate) fn quadratic_phases(beta: f64, out: &mut [Complex64]) {
    if out.is_empty() {
        return;
    }
    out[0] = Complex64::new(1.0, 0.0);
    let mut w = Complex64::from_polar(1.0, -beta);
    let step2 = w * w;
    for j in 1..out.len() {
        if j % 32 == 0 {
            let jf = j as f64;
            out[j] = Complex64::from_polar(1.0, -beta * jf * jf);
            w = Complex64::from_polar(1.0, -beta * (2.0 * jf + 1.0));
        } else {
            out[j] = out[j - 1] * w;
            w *= step2;
        }
    }
}

/// `max |ψ(·, 0)|²` over cell midpoints of a `PEAK_GRID`-per-dimension grid.
pub(crate) fn grid_peak<F>(dim: usize, extent: Point, mut density: F) -> f64
where
    F: FnMut(&Point) -> f64,
{
    let n = PEAK_GRID;
    let mut peak: f64 = 0.0;
    let coord = |i: usize, w: f64| (i as f64 + 0.5) / n as f64 * w;
    if dim == 1 {
        for i in 0..n {
            peak = peak.max(density(&[coord(i, extent[0]), 0.0]));
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                peak = peak.max(density(&[coord(i, extent[0]), coord(j, extent[1])]));
            }
        }
    }
    peak
}
