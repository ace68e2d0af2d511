use super::{DensityGrid, EnsembleError};
use crate::rng;
use crate::state::{is_interior, BoxGeometry, ModeIndex, ModeSuperposition, Point, WaveState};
use rayon::prelude::*;
use std::fmt;
use std::sync::Arc;

/// Points per dimension used to estimate the sampling bound.
pub const BOUND_GRID: usize = 512;
/// Safety factor applied to the grid maximum.
pub const BOUND_INFLATION: f64 = 1.1;

const MAX_ATTEMPTS: u64 = 100_000_000;

/// An initial position density, normalized over its box.
#[derive(Clone)]
pub enum DensitySpec {
    /// `|ψ(x, 0)|²` of a state (quantum equilibrium).
    BornOf(Arc<dyn WaveState>),
    /// `|φ_mode|²` of a single box eigenmode.
    SingleModeBorn(ModeSuperposition),
    UniformOnBox(BoxGeometry),
    /// Piecewise-constant values on a uniform grid.
    GridTabulated(DensityGrid),
}

impl fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BornOf(s) => write!(f, "BornOf(dim={}, extent={:?})", s.dim(), s.extent(0.0)),
            Self::SingleModeBorn(s) => write!(f, "SingleModeBorn({:?})", s.terms()[0].0),
            Self::UniformOnBox(g) => write!(f, "UniformOnBox({g:?})"),
            Self::GridTabulated(g) => write!(f, "GridTabulated({:?})", g.spec()),
        }
    }
}

impl DensitySpec {
    pub fn single_mode(geometry: BoxGeometry, mode: ModeIndex) -> Result<Self, EnsembleError> {
        Ok(Self::SingleModeBorn(ModeSuperposition::single(geometry, mode)?))
    }

    pub fn born_of<S: WaveState + 'static>(state: S) -> Self {
        Self::BornOf(Arc::new(state))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::BornOf(s) => s.dim(),
            Self::SingleModeBorn(s) => s.dim(),
            Self::UniformOnBox(g) => g.dim(),
            Self::GridTabulated(g) => g.spec().dim,
        }
    }

    pub fn extent(&self) -> Point {
        match self {
            Self::BornOf(s) => s.extent(0.0),
            Self::SingleModeBorn(s) => s.extent(0.0),
            Self::UniformOnBox(g) => g.extent(),
            Self::GridTabulated(g) => g.spec().extent,
        }
    }

    /// Density at `x`; zero outside the open box.
    pub fn density(&self, x: &Point) -> f64 {
        if !is_interior(x, &self.extent(), self.dim()) {
            return 0.0;
        }
        match self {
            Self::BornOf(s) => s.density(x, 0.0),
            Self::SingleModeBorn(s) => s.density(x, 0.0),
            Self::UniformOnBox(g) => 1.0 / g.extent()[..g.dim()].iter().product::<f64>(),
            Self::GridTabulated(g) => g.values()[g.spec().cell_of(x)],
        }
    }

    /// `BOUND_INFLATION × max` over a `BOUND_GRID`-per-dimension grid of
    /// cell midpoints.
    pub fn bound(&self) -> f64 {
        if let Self::GridTabulated(g) = self {
            return g.values().iter().cloned().fold(0.0, f64::max);
        }
        let ext = self.extent();
        let n = BOUND_GRID;
        let c = |i: usize, w: f64| (i as f64 + 0.5) / n as f64 * w;
        let peak = if self.dim() == 1 {
            (0..n).map(|i| self.density(&[c(i, ext[0]), 0.0])).fold(0.0, f64::max)
        } else {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| self.density(&[c(i, ext[0]), c(j, ext[1])]))
                        .fold(0.0, f64::max)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold(0.0, f64::max)
        };
        BOUND_INFLATION * peak
    }
}

/// `n` i.i.d. positions from `spec`.
///
/// Sample `i` uses its own counter-based stream, so the result does not
/// depend on thread count or scheduling.
pub fn rejection_sample(spec: &DensitySpec, n: usize, seed: u64) -> Result<Vec<Point>, EnsembleError> {
    if n == 0 {
        return Err(EnsembleError::InvalidParameter("sample count must be >= 1".into()));
    }
    let bound = spec.bound();
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(EnsembleError::InvalidParameter(format!("density bound {bound} is not positive")));
    }
    let dim = spec.dim();
    let ext = spec.extent();
    let key = rng::derive_seed(seed, rng::TAG_SAMPLES);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(key, i as u64);
            for _ in 0..MAX_ATTEMPTS {
                let mut x = [0.0; 2];
                for d in 0..dim {
                    x[d] = rng::open_unit(&mut r) * ext[d];
                }
                let rho = spec.density(&x);
                if rho > bound {
                    return Err(EnsembleError::BoundExceeded { density: rho, bound });
                }
                if rng::open_unit(&mut r) * bound < rho {
                    return Ok(x);
                }
            }
            Err(EnsembleError::InvalidParameter(format!(
                "no sample accepted after {MAX_ATTEMPTS} proposals"
            )))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::GridSpec;
    use std::f64::consts::PI;

    #[test]
    fn uniform_density_value() {
        let spec = DensitySpec::UniformOnBox(BoxGeometry::square(2.0).unwrap());
        assert_eq!(spec.density(&[1.0, 1.0]), 0.25);
        assert_eq!(spec.density(&[2.5, 1.0]), 0.0);
        assert!((spec.bound() - 0.275).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let spec = DensitySpec::single_mode(BoxGeometry::square(PI).unwrap(), ModeIndex::two(1, 1).unwrap()).unwrap();
        let a = rejection_sample(&spec, 500, 3).unwrap();
        let b = rejection_sample(&spec, 500, 3).unwrap();
        let c = rejection_sample(&spec, 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a prefix of a larger ensemble is the smaller ensemble
        let big = rejection_sample(&spec, 800, 3).unwrap();
        assert_eq!(&big[..500], &a[..]);
    }

    #[test]
    fn tabulated_bound_is_exact_maximum() {
        let grid = DensityGrid::from_values(
            GridSpec::new(1, [1.0, 0.0], 4).unwrap(),
            vec![0.5, 0.5, 1.5, 1.5],
        )
        .unwrap();
        let spec = DensitySpec::GridTabulated(grid);
        assert_eq!(spec.bound(), 1.5);
        let xs = rejection_sample(&spec, 4000, 1).unwrap();
        let right = xs.iter().filter(|x| x[0] > 0.5).count();
        assert!((right as f64 / 4000.0 - 0.75).abs() < 0.03);
    }

    #[test]
    fn underestimated_bound_is_detected() {
        // sin²(1024πx) vanishes on every midpoint of the 512-point bound grid
        let mode = ModeIndex::one(2 * BOUND_GRID as u32).unwrap();
        let narrow = ModeSuperposition::single(BoxGeometry::line(1.0).unwrap(), mode).unwrap();
        let spec = DensitySpec::SingleModeBorn(narrow);
        assert!(spec.bound() < 1e-6);
        assert!(matches!(
            rejection_sample(&spec, 100, 1),
            Err(EnsembleError::BoundExceeded { .. })
        ));
    }

    #[test]
    fn zero_samples_rejected() {
        let spec = DensitySpec::UniformOnBox(BoxGeometry::line(1.0).unwrap());
        assert!(rejection_sample(&spec, 0, 0).is_err());
    }
}
