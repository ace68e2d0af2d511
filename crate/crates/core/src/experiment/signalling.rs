use super::{check_positive, check_times, ExperimentError, InitialDensity};
use crate::ensemble::{coarse_density_histogram, rejection_sample, tv_distance, DensityGrid, DensitySpec, GridSpec};
use crate::rng;
use crate::state::{BoxGeometry, EntangledState, Point, WallMove, DEFAULT_SIDE};
use crate::trajectory::{advance, IntegratorConfig, PathStatus};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

/// Smallest ensemble for which the null calibration is meaningful.
pub const MIN_SAMPLES: usize = 10_000;

const TAG_NULL: u64 = 0x6e75_6c6c_0000_0000;

/// Coefficient of `φ_a(x_A) χ_b(x_B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTerm {
    pub a: u32,
    pub b: u32,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    /// `|ψ(x_A, x_B, 0)|²`.
    Equilibrium,
    /// Product of single-mode densities `|φ_m(x_A)|² |φ_n(x_B)|²`.
    NonEquilibrium,
}

impl std::str::FromStr for EnsembleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "equilibrium" => Ok(Self::Equilibrium),
            "nonequilibrium" => Ok(Self::NonEquilibrium),
            _ => Err(format!("expected equilibrium or nonequilibrium, got {s:?}")),
        }
    }
}

impl EnsembleKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Equilibrium => "equilibrium",
            Self::NonEquilibrium => "nonequilibrium",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignallingParams {
    /// Width `L` of both boxes before the move.
    pub side: f64,
    pub coefficients: Vec<PairTerm>,
    /// Time of the sudden move of B's wall from `L` to `2L`.
    pub t_op: f64,
    /// Truncation order of the post-move expansion; chosen from
    /// `truncation_tolerance` when absent.
    pub truncation: Option<usize>,
    pub truncation_tolerance: f64,
    pub samples: usize,
    pub ensembles: Vec<EnsembleKind>,
    /// Modes `(m, n)` of the non-equilibrium product density.
    pub nonequilibrium_modes: [u32; 2],
    /// Measurement times, strictly increasing.
    pub times: Vec<f64>,
    /// Cells of the `x_A` marginal histogram.
    pub cells: usize,
    /// Independent equilibrium pairs for the null threshold.
    pub null_repeats: usize,
    pub integrator: IntegratorConfig,
    pub max_exclusion: f64,
}

impl Default for SignallingParams {
    fn default() -> Self {
        Self {
            side: DEFAULT_SIDE,
            coefficients: vec![
                PairTerm { a: 1, b: 2, re: FRAC_1_SQRT_2, im: 0.0 },
                PairTerm { a: 2, b: 1, re: FRAC_1_SQRT_2, im: 0.0 },
            ],
            t_op: 0.5,
            truncation: None,
            truncation_tolerance: 1e-6,
            samples: 100_000,
            ensembles: vec![EnsembleKind::Equilibrium, EnsembleKind::NonEquilibrium],
            nonequilibrium_modes: [1, 1],
            times: vec![0.25, 0.5, 0.75, 1.0],
            cells: 32,
            null_repeats: 20,
            integrator: IntegratorConfig::default(),
            max_exclusion: 0.01,
        }
    }
}

impl SignallingParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        check_positive("side", self.side)?;
        if self.coefficients.is_empty() {
            return Err(ExperimentError::invalid("coefficients", "need at least one term"));
        }
        if !(self.t_op >= 0.0 && self.t_op.is_finite()) {
            return Err(ExperimentError::invalid("t_op", "must be finite and >= 0"));
        }
        check_times("times", &self.times)?;
        if !self.times.iter().any(|&t| t > self.t_op) {
            return Err(ExperimentError::invalid("t_op", "no measurement time follows the operation"));
        }
        if self.truncation == Some(0) {
            return Err(ExperimentError::invalid("truncation", "must be >= 1"));
        }
        check_positive("truncation_tolerance", self.truncation_tolerance)?;
        if self.samples < MIN_SAMPLES {
            return Err(ExperimentError::invalid(
                "samples",
                format!("need at least {MIN_SAMPLES}, got {}", self.samples),
            ));
        }
        if self.ensembles.is_empty() {
            return Err(ExperimentError::invalid("ensembles", "need at least one ensemble"));
        }
        if self.nonequilibrium_modes.contains(&0) {
            return Err(ExperimentError::invalid("nonequilibrium_modes", "mode numbers must be >= 1"));
        }
        if self.cells == 0 {
            return Err(ExperimentError::invalid("cells", "must be >= 1"));
        }
        if self.null_repeats < 2 {
            return Err(ExperimentError::invalid("null_repeats", "need at least 2 for a spread"));
        }
        if !(0.0..=1.0).contains(&self.max_exclusion) {
            return Err(ExperimentError::invalid("max_exclusion", "must lie in [0, 1]"));
        }
        self.integrator
            .validate()
            .map_err(|e| ExperimentError::invalid("integrator", e.to_string()))?;
        Ok(())
    }

    /// The entangled state with the wall move at `t_op`.
    pub fn state(&self) -> Result<EntangledState, ExperimentError> {
        let coefficients = self
            .coefficients
            .iter()
            .map(|p| (p.a, p.b, Complex64::new(p.re, p.im)))
            .collect();
        let wall_move = WallMove {
            time: self.t_op,
            order: self.truncation,
            tolerance: self.truncation_tolerance,
        };
        Ok(EntangledState::new(self.side, coefficients, Some(wall_move))?)
    }

    fn initial_density(&self, kind: EnsembleKind, state: &EntangledState) -> Result<DensitySpec, ExperimentError> {
        let geometry = BoxGeometry::square(self.side)?;
        match kind {
            EnsembleKind::Equilibrium => Ok(DensitySpec::BornOf(Arc::new(state.without_move()))),
            EnsembleKind::NonEquilibrium => {
                let [m, n] = self.nonequilibrium_modes;
                InitialDensity::Mode { m, n }.resolve(state, geometry)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Signal,
    NoSignal,
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Signal => "SIGNAL",
            Self::NoSignal => "NO-SIGNAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStat {
    pub t: f64,
    pub tv: f64,
    /// Null threshold `mean + 5 sd`.
    pub threshold: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    pub after_op: bool,
    /// Excluded trajectories (op and no-op runs pooled) over `2N`.
    pub exclusion_rate: f64,
}

impl SignalStat {
    pub fn exceeds(&self) -> bool {
        self.after_op && self.tv > self.threshold
    }
}

/// `x_A` marginals with and without the operation at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub t: f64,
    pub no_op: DensityGrid,
    pub op: DensityGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSignal {
    pub kind: EnsembleKind,
    pub stats: Vec<SignalStat>,
    pub marginals: Vec<Marginal>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignallingRun {
    pub truncation: usize,
    pub norm_loss: f64,
    pub ensembles: Vec<EnsembleSignal>,
}

pub fn run_signalling(params: &SignallingParams, seed: u64) -> Result<SignallingRun, ExperimentError> {
    params.validate()?;
    let op = params.state()?;
    let no_op = op.without_move();
    let spec = GridSpec::new(1, [params.side, 0.0], params.cells)?;

    // null distribution: independent equilibrium pairs under the no-op dynamics
    let born = DensitySpec::BornOf(Arc::new(no_op.clone()));
    let mut null_tv = vec![Vec::with_capacity(params.null_repeats); params.times.len()];
    for r in 0..params.null_repeats as u64 {
        let first = marginals(&no_op, &born, params, rng::derive_seed(seed, TAG_NULL + 2 * r), spec)?;
        let second = marginals(&no_op, &born, params, rng::derive_seed(seed, TAG_NULL + 2 * r + 1), spec)?;
        for (i, (a, b)) in first.iter().zip(&second).enumerate() {
            null_tv[i].push(tv_distance(&a.0, &b.0)?);
        }
    }
    let null: Vec<(f64, f64)> = null_tv.iter().map(|v| mean_sd(v)).collect();

    let mut ensembles = Vec::with_capacity(params.ensembles.len());
    for &kind in &params.ensembles {
        let f0 = params.initial_density(kind, &op)?;
        let without = marginals(&no_op, &f0, params, seed, spec)?;
        let with = marginals(&op, &f0, params, seed, spec)?;
        let mut stats = Vec::with_capacity(params.times.len());
        let mut grids = Vec::with_capacity(params.times.len());
        for (i, &t) in params.times.iter().enumerate() {
            let (no_op_grid, no_op_excluded) = &without[i];
            let (op_grid, op_excluded) = &with[i];
            let (null_mean, null_sd) = null[i];
            stats.push(SignalStat {
                t,
                tv: tv_distance(op_grid, no_op_grid)?,
                threshold: null_mean + 5.0 * null_sd,
                null_mean,
                null_sd,
                after_op: t > params.t_op,
                exclusion_rate: (no_op_excluded + op_excluded) as f64 / (2 * params.samples) as f64,
            });
            grids.push(Marginal {
                t,
                no_op: no_op_grid.clone(),
                op: op_grid.clone(),
            });
        }
        let verdict = if stats.iter().any(SignalStat::exceeds) {
            Verdict::Signal
        } else {
            Verdict::NoSignal
        };
        ensembles.push(EnsembleSignal {
            kind,
            stats,
            marginals: grids,
            verdict,
        });
    }
    Ok(SignallingRun {
        truncation: op.truncation().unwrap_or(0),
        norm_loss: op.norm_loss(),
        ensembles,
    })
}

/// `x_A` histogram and excluded-trajectory count at each measurement time.
fn marginals(
    state: &EntangledState,
    f0: &DensitySpec,
    params: &SignallingParams,
    seed: u64,
    spec: GridSpec,
) -> Result<Vec<(DensityGrid, usize)>, ExperimentError> {
    let starts = rejection_sample(f0, params.samples, seed)?;
    let tracks: Vec<Vec<Option<Point>>> = starts
        .par_iter()
        .map(|x0| track(state, *x0, &params.times, &params.integrator))
        .collect();
    let mut out = Vec::with_capacity(params.times.len());
    for (i, &t) in params.times.iter().enumerate() {
        let xa: Vec<Point> = tracks.iter().filter_map(|p| p[i]).map(|x| [x[0], 0.0]).collect();
        let excluded = params.samples - xa.len();
        let rate = excluded as f64 / params.samples as f64;
        if rate > params.max_exclusion {
            return Err(ExperimentError::ExclusionDeficit {
                t,
                rate,
                limit: params.max_exclusion,
            });
        }
        out.push((coarse_density_histogram(&xa, spec)?, excluded));
    }
    Ok(out)
}

/// Position at each of `times`, `None` from the first abort onward.
fn track(state: &EntangledState, x0: Point, times: &[f64], cfg: &IntegratorConfig) -> Vec<Option<Point>> {
    let mut out = Vec::with_capacity(times.len());
    let mut x = Some(x0);
    let mut t = 0.0;
    for &tn in times {
        x = x.and_then(|xc| match advance(state, xc, t, tn, cfg) {
            Ok(end) if end.status == PathStatus::Completed => Some(end.x),
            _ => None,
        });
        t = tn;
        out.push(x);
    }
    out
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
