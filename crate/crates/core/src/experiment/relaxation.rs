use super::{check_positive, check_times, ExperimentError, InitialDensity};
use crate::ensemble::{
    backtrack_field, h_function, h_uncertainty, DensityGrid, DensitySpec, ExpFit, GridSpec,
    HSample, HSeries,
};
use crate::state::{BoxGeometry, ModeIndex, ModeSuperposition, WaveState, DEFAULT_SIDE};
use crate::trajectory::IntegratorConfig;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Highest quantum numbers `M×N` of the mode set (`N` unused in 1D).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModeCutoff {
    pub m: u32,
    pub n: u32,
}

impl ModeCutoff {
    pub fn modes(&self, dim: usize) -> Result<Vec<ModeIndex>, ExperimentError> {
        let mut out = Vec::new();
        for m in 1..=self.m {
            if dim == 1 {
                out.push(ModeIndex::one(m)?);
            } else {
                for n in 1..=self.n {
                    out.push(ModeIndex::two(m, n)?);
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for ModeCutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.m, self.n)
    }
}

impl FromStr for ModeCutoff {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (m, n) = s.split_once(['x', 'X']).unwrap_or((s, "1"));
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| format!("expected MxN with positive integers, got {s:?}"))
        };
        Ok(Self { m: parse(m)?, n: parse(n)? })
    }
}

impl TryFrom<String> for ModeCutoff {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModeCutoff> for String {
    fn from(c: ModeCutoff) -> Self {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxationParams {
    pub dim: usize,
    pub side: f64,
    pub modes: ModeCutoff,
    pub initial: InitialDensity,
    /// Snapshot times, strictly increasing.
    pub times: Vec<f64>,
    /// Coarse-graining cells per axis.
    pub cells: usize,
    /// Backtracked quadrature points per cell per axis.
    pub subsamples: usize,
    pub velocity_scale: f64,
    pub integrator: IntegratorConfig,
    /// Largest tolerated fraction of excluded backtracks per snapshot.
    pub max_exclusion: f64,
}

impl Default for RelaxationParams {
    fn default() -> Self {
        Self {
            dim: 2,
            side: DEFAULT_SIDE,
            modes: ModeCutoff { m: 4, n: 4 },
            initial: InitialDensity::Mode { m: 1, n: 1 },
            times: snapshot_times(4.0 * PI, 16),
            cells: 32,
            subsamples: 5,
            velocity_scale: 1.0,
            integrator: IntegratorConfig::default(),
            max_exclusion: 0.01,
        }
    }
}

/// `count + 1` equally spaced times from 0 to `end`.
pub fn snapshot_times(end: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| end * i as f64 / count as f64).collect()
}

impl RelaxationParams {
    /// A 1D box with modes 1..=6.
    pub fn one_dimensional() -> Self {
        Self {
            dim: 1,
            modes: ModeCutoff { m: 6, n: 1 },
            initial: InitialDensity::Mode { m: 1, n: 1 },
            cells: 64,
            subsamples: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.validate_common()?;
        let count = self.modes.modes(self.dim)?.len();
        if count < 2 {
            return Err(ExperimentError::invalid(
                "modes",
                "at least two modes are needed; a single eigenmode never relaxes",
            ));
        }
        Ok(())
    }

    /// Everything except the mode-count requirement.
    pub(crate) fn validate_common(&self) -> Result<(), ExperimentError> {
        if self.dim != 1 && self.dim != 2 {
            return Err(ExperimentError::invalid("dim", format!("must be 1 or 2, got {}", self.dim)));
        }
        check_positive("side", self.side)?;
        check_positive("velocity_scale", self.velocity_scale)?;
        check_times("times", &self.times)?;
        if self.cells == 0 {
            return Err(ExperimentError::invalid("cells", "must be >= 1"));
        }
        if self.subsamples == 0 {
            return Err(ExperimentError::invalid("subsamples", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.max_exclusion) {
            return Err(ExperimentError::invalid("max_exclusion", "must lie in [0, 1]"));
        }
        self.integrator
            .validate()
            .map_err(|e| ExperimentError::invalid("integrator", e.to_string()))?;
        Ok(())
    }

    pub fn geometry(&self) -> Result<BoxGeometry, ExperimentError> {
        Ok(BoxGeometry::new(self.dim, self.side)?)
    }

    /// `(1/√M) Σ exp(iθ_j) φ_j` over the mode set, phases drawn from `seed`.
    pub fn initial_state(&self, seed: u64) -> Result<ModeSuperposition, ExperimentError> {
        let modes = self.modes.modes(self.dim)?;
        let state = ModeSuperposition::random_phases(self.geometry()?, &modes, seed)?;
        Ok(state.with_velocity_scale(self.velocity_scale)?)
    }
}

/// Coarse-grained densities at one snapshot time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub rho: DensityGrid,
    pub born: DensityGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationRun {
    pub series: HSeries,
    pub snapshots: Vec<Snapshot>,
    /// Fit of `ln H̄` against `t`; absent with fewer than two positive samples.
    pub fit: Option<ExpFit>,
}

pub fn run_relaxation(params: &RelaxationParams, seed: u64) -> Result<RelaxationRun, ExperimentError> {
    params.validate()?;
    let state = params.initial_state(seed)?;
    let f0 = params.initial.resolve(&state, params.geometry()?)?;
    let mut runs = relax_state(&state, &[f0], params)?;
    Ok(runs.remove(0))
}

/// `H̄(t)` of each initial density under `state`, using the snapshot times,
/// grid and integrator settings of `params`. All densities share one set of
/// backtracked trajectories per snapshot.
pub fn relax_state<S: WaveState + ?Sized>(
    state: &S,
    densities: &[DensitySpec],
    params: &RelaxationParams,
) -> Result<Vec<RelaxationRun>, ExperimentError> {
    params.validate_common()?;
    let mut series: Vec<Vec<HSample>> = vec![Vec::new(); densities.len()];
    let mut snapshots: Vec<Vec<Snapshot>> = vec![Vec::new(); densities.len()];
    for &t in &params.times {
        let spec = GridSpec::for_state(state, t, params.cells)?;
        let field = backtrack_field(state, t, spec, params.subsamples, &params.integrator)?;
        let rate = field.exclusion_rate();
        if rate > params.max_exclusion {
            return Err(ExperimentError::ExclusionDeficit {
                t,
                rate,
                limit: params.max_exclusion,
            });
        }
        let born = field.born()?;
        for (i, f0) in densities.iter().enumerate() {
            let rho = field.density(f0)?;
            series[i].push(HSample {
                t,
                h: h_function(&rho, &born)?.value,
                error: h_uncertainty(&rho, &born),
                exclusion_rate: rate,
            });
            snapshots[i].push(Snapshot {
                t,
                rho,
                born: born.clone(),
            });
        }
    }
    let cell_width = GridSpec::for_state(state, 0.0, params.cells)?.cell_width(0);
    Ok(series
        .into_iter()
        .zip(snapshots)
        .map(|(samples, snapshots)| {
            let series = HSeries {
                cells: params.cells,
                subsamples: params.subsamples,
                cell_width,
                samples,
            };
            let fit = series.exponential_fit();
            RelaxationRun {
                series,
                snapshots,
                fit,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_cutoff_parsing() {
        assert_eq!("4x4".parse::<ModeCutoff>(), Ok(ModeCutoff { m: 4, n: 4 }));
        assert_eq!("6".parse::<ModeCutoff>(), Ok(ModeCutoff { m: 6, n: 1 }));
        assert!("0x3".parse::<ModeCutoff>().is_err());
        assert!("4by4".parse::<ModeCutoff>().is_err());
        let json = serde_json::to_string(&ModeCutoff { m: 3, n: 2 }).unwrap();
        assert_eq!(json, "\"3x2\"");
    }

    #[test]
    fn default_setup() {
        let p = RelaxationParams::default();
        assert_eq!(p.modes.modes(2).unwrap().len(), 16);
        assert_eq!(p.times.len(), 17);
        assert!((p.times[16] - 4.0 * PI).abs() < 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn single_mode_rejected() {
        let p = RelaxationParams {
            modes: ModeCutoff { m: 1, n: 1 },
            ..RelaxationParams::default()
        };
        assert!(matches!(p.validate(), Err(ExperimentError::InvalidParams { key, .. }) if key == "modes"));
    }

    #[test]
    fn single_mode_state_keeps_h_constant() {
        let p = RelaxationParams {
            modes: ModeCutoff { m: 1, n: 1 },
            cells: 8,
            subsamples: 2,
            times: snapshot_times(2.0, 4),
            ..RelaxationParams::default()
        };
        let state = p.initial_state(5).unwrap();
        let f0 = DensitySpec::UniformOnBox(p.geometry().unwrap());
        let run = relax_state(&state, &[f0], &p).unwrap().remove(0);
        let h0 = run.series.samples[0].h;
        assert!(h0 > 0.1);
        for s in &run.series.samples {
            assert_eq!(s.h, h0);
        }
    }

    #[test]
    fn exclusion_limit_enforced() {
        let p = RelaxationParams {
            dim: 1,
            modes: ModeCutoff { m: 3, n: 1 },
            cells: 16,
            subsamples: 2,
            times: vec![0.0, 1.0],
            integrator: IntegratorConfig {
                max_steps: 2,
                ..IntegratorConfig::default()
            },
            ..RelaxationParams::default()
        };
        let err = run_relaxation(&p, 1).unwrap_err();
        assert!(err.is_numerical_abort(), "{err}");
    }
}
