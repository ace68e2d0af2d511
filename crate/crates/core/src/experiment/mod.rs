//! The three numerical experiments: relaxation toward `|ψ|²`, signalling
//! between entangled boxes, and freezing of relaxation.

mod freezing;
mod relaxation;
mod signalling;

pub use freezing::{run_freezing, FreezingParams, FreezingResult, FreezingRow, Sweep};
pub use relaxation::{
    relax_state, run_relaxation, snapshot_times, ModeCutoff, RelaxationParams, RelaxationRun, Snapshot,
};
pub use signalling::{
    run_signalling, EnsembleKind, EnsembleSignal, Marginal, PairTerm, SignalStat,
    SignallingParams, SignallingRun, Verdict,
};

use crate::ensemble::{DensitySpec, EnsembleError};
use crate::state::{BoxGeometry, ModeIndex, StateError, WaveState};
use crate::trajectory::TrajectoryError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParams { key: String, reason: String },
    #[error("exclusion rate {rate:.4} at t = {t} exceeds the limit {limit}")]
    ExclusionDeficit { t: f64, rate: f64, limit: f64 },
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl ExperimentError {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Self::InvalidParams {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    /// Failures of the numerics (too many excluded trajectories, truncation
    /// loss) as opposed to bad input.
    pub fn is_numerical_abort(&self) -> bool {
        matches!(
            self,
            Self::ExclusionDeficit { .. }
                | Self::State(StateError::Truncation { .. })
                | Self::Ensemble(EnsembleError::State(StateError::Truncation { .. }))
        )
    }
}

/// Initial position density of an experiment, resolved against the
/// experiment's state and box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialDensity {
    /// `|ψ(x, 0)|²`: quantum equilibrium.
    Born,
    /// `|φ_mode|²`; `n` is ignored for 1D boxes.
    Mode { m: u32, n: u32 },
    Uniform,
}

impl InitialDensity {
    pub fn resolve<S: WaveState + Clone + 'static>(
        &self,
        state: &S,
        geometry: BoxGeometry,
    ) -> Result<DensitySpec, ExperimentError> {
        Ok(match *self {
            Self::Born => DensitySpec::BornOf(Arc::new(state.clone())),
            Self::Mode { m, n } => {
                let mode = if geometry.dim() == 1 {
                    ModeIndex::one(m)?
                } else {
                    ModeIndex::two(m, n)?
                };
                DensitySpec::single_mode(geometry, mode)?
            }
            Self::Uniform => DensitySpec::UniformOnBox(geometry),
        })
    }
}

impl fmt::Display for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Born => write!(f, "born"),
            Self::Uniform => write!(f, "uniform"),
            Self::Mode { m, n } => write!(f, "mode:{m},{n}"),
        }
    }
}

impl FromStr for InitialDensity {
    type Err = String;

    /// `born`, `uniform`, or `mode:M,N` (`mode:M` for 1D).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "born" => Ok(Self::Born),
            "uniform" => Ok(Self::Uniform),
            _ => {
                let spec = s
                    .strip_prefix("mode:")
                    .ok_or_else(|| format!("expected born, uniform or mode:M,N; got {s:?}"))?;
                let mut parts = spec.split(',').map(|p| p.trim().parse::<u32>());
                let m = parts.next().and_then(Result::ok).ok_or_else(|| format!("bad mode {spec:?}"))?;
                let n = match parts.next() {
                    Some(Ok(n)) => n,
                    Some(Err(_)) => return Err(format!("bad mode {spec:?}")),
                    None => 1,
                };
                if m == 0 || n == 0 {
                    return Err("mode numbers must be >= 1".into());
                }
                Ok(Self::Mode { m, n })
            }
        }
    }
}

pub(crate) fn check_times(key: &str, times: &[f64]) -> Result<(), ExperimentError> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(ExperimentError::invalid(key, "times must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::invalid(key, "times must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn check_positive(key: &str, value: f64) -> Result<(), ExperimentError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(ExperimentError::invalid(key, format!("must be positive, got {value}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_density_parsing() {
        assert_eq!("born".parse::<InitialDensity>(), Ok(InitialDensity::Born));
        assert_eq!("mode:2,3".parse::<InitialDensity>(), Ok(InitialDensity::Mode { m: 2, n: 3 }));
        assert_eq!("mode:2".parse::<InitialDensity>(), Ok(InitialDensity::Mode { m: 2, n: 1 }));
        assert!("mode:0,1".parse::<InitialDensity>().is_err());
        assert!("gauss".parse::<InitialDensity>().is_err());
        for d in [InitialDensity::Born, InitialDensity::Uniform, InitialDensity::Mode { m: 1, n: 4 }] {
            assert_eq!(d.to_string().parse::<InitialDensity>(), Ok(d));
        }
    }

    #[test]
    fn time_checks() {
        assert!(check_times("t", &[0.0, 1.0, 2.0]).is_ok());
        assert!(check_times("t", &[0.0, 0.0]).is_err());
        assert!(check_times("t", &[-1.0]).is_err());
    }
}
