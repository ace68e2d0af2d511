use super::{DensitySpec, EnsembleError};
use crate::state::{Point, WaveState};
use crate::trajectory::{advance, IntegratorConfig, PathStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Uniform coarse-graining grid over `(0, extent)` with `cells` cells per side.
///
/// Cells are indexed row-major: `index = iy * cells + ix` in 2D, `ix` in 1D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: Point,
    pub cells: usize,
}

impl GridSpec {
    pub fn new(dim: usize, extent: Point, cells: usize) -> Result<Self, EnsembleError> {
        if dim != 1 && dim != 2 {
            return Err(EnsembleError::InvalidParameter(format!("grid dimension {dim}")));
        }
        if cells == 0 {
            return Err(EnsembleError::InvalidParameter("grid needs at least one cell".into()));
        }
        if !extent[..dim].iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(EnsembleError::InvalidParameter(format!("grid extent {extent:?}")));
        }
        let mut extent = extent;
        if dim == 1 {
            extent[1] = 0.0;
        }
        Ok(Self { dim, extent, cells })
    }

    /// Grid covering a state's box at time `t`.
    pub fn for_state<S: WaveState + ?Sized>(state: &S, t: f64, cells: usize) -> Result<Self, EnsembleError> {
        Self::new(state.dim(), state.extent(t), cells)
    }

    pub fn cell_count(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        self.extent[axis] / self.cells as f64
    }

    pub fn cell_area(&self) -> f64 {
        (0..self.dim).map(|a| self.cell_width(a)).product()
    }

    /// Cell containing `x`; points on or beyond the far edge map to the last
    /// cell.
    pub fn cell_of(&self, x: &Point) -> usize {
        let idx = |a: usize| {
            let i = (x[a] / self.cell_width(a)).floor();
            if i <= 0.0 {
                0
            } else {
                (i as usize).min(self.cells - 1)
            }
        };
        if self.dim == 1 {
            idx(0)
        } else {
            idx(1) * self.cells + idx(0)
        }
    }

    /// `s` (1D) or `s × s` (2D) midpoints of sub-cells of `cell`.
    pub fn quadrature_points(&self, cell: usize, s: usize) -> Vec<Point> {
        let (ix, iy) = (cell % self.cells, cell / self.cells);
        let wx = self.cell_width(0);
        let sub = |i: usize, a: usize, w: f64| (i as f64 + (a as f64 + 0.5) / s as f64) * w;
        if self.dim == 1 {
            (0..s).map(|a| [sub(ix, a, wx), 0.0]).collect()
        } else {
            let wy = self.cell_width(1);
            let mut pts = Vec::with_capacity(s * s);
            for b in 0..s {
                for a in 0..s {
                    pts.push([sub(ix, a, wx), sub(iy, b, wy)]);
                }
            }
            pts
        }
    }

    fn all_quadrature_points(&self, s: usize) -> Vec<Point> {
        (0..self.cell_count()).flat_map(|c| self.quadrature_points(c, s)).collect()
    }

    fn points_per_cell(&self, s: usize) -> usize {
        s.pow(self.dim as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Histogram { samples: usize },
    Backtracked { subsamples: usize },
    Quadrature { subsamples: usize },
    Tabulated,
}

/// Coarse-grained density: one value per cell, normalized so that
/// `Σ value · cell_area = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    spec: GridSpec,
    values: Vec<f64>,
    provenance: Provenance,
    raw_mass: f64,
    exclusion_rate: f64,
    cell_error: Option<Vec<f64>>,
}

impl DensityGrid {
    /// Wraps raw cell values, renormalizing them to unit mass.
    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, EnsembleError> {
        if values.len() != spec.cell_count() {
            return Err(EnsembleError::ResolutionMismatch(format!(
                "{} values for {} cells",
                values.len(),
                spec.cell_count()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EnsembleError::InvalidParameter("density values must be finite and >= 0".into()));
        }
        Self::normalized(spec, values, Provenance::Tabulated, 0.0, None)
    }

    fn normalized(
        spec: GridSpec,
        mut values: Vec<f64>,
        provenance: Provenance,
        exclusion_rate: f64,
        mut cell_error: Option<Vec<f64>>,
    ) -> Result<Self, EnsembleError> {
        let raw_mass = values.iter().sum::<f64>() * spec.cell_area();
        if !(raw_mass > 0.0 && raw_mass.is_finite()) {
            return Err(EnsembleError::InvalidParameter(format!("density grid has mass {raw_mass}")));
        }
        if raw_mass != 1.0 {
            values.iter_mut().for_each(|v| *v /= raw_mass);
            if let Some(err) = cell_error.as_mut() {
                err.iter_mut().for_each(|e| *e /= raw_mass);
            }
        }
        Ok(Self {
            spec,
            values,
            provenance,
            raw_mass,
            exclusion_rate,
            cell_error,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// `Σ value · cell_area` before renormalization.
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    /// Fraction of quadrature points (or samples) dropped as excluded.
    pub fn exclusion_rate(&self) -> f64 {
        self.exclusion_rate
    }

    /// Standard error of each cell average, where the cell value is a mean
    /// over quadrature points.
    pub fn cell_error(&self) -> Option<&[f64]> {
        self.cell_error.as_deref()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<(), EnsembleError> {
        let (a, b) = (&self.spec, &other.spec);
        let same_extent = (0..a.dim).all(|i| (a.extent[i] - b.extent[i]).abs() <= 1e-12 * a.extent[i]);
        if a.dim != b.dim || a.cells != b.cells || !same_extent {
            return Err(EnsembleError::ResolutionMismatch(format!("{a:?} vs {b:?}")));
        }
        Ok(())
    }

    /// CSV: `#`-prefixed header lines, then one line per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let s = &self.spec;
        let _ = writeln!(out, "# dim={}", s.dim);
        let _ = writeln!(
            out,
            "# extent={}",
            s.extent[..s.dim].iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(out, "# cells={}", s.cells);
        let _ = writeln!(out, "# provenance={}", provenance_label(&self.provenance));
        let _ = writeln!(out, "# raw_mass={}", self.raw_mass);
        let _ = writeln!(out, "# exclusion_rate={}", self.exclusion_rate);
        let rows = if s.dim == 1 { 1 } else { s.cells };
        for r in 0..rows {
            let row = &self.values[r * s.cells..(r + 1) * s.cells];
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, EnsembleError> {
        let mut dim = None;
        let mut extent = None;
        let mut cells = None;
        let mut provenance = Provenance::Tabulated;
        let mut raw_mass = None;
        let mut exclusion_rate = 0.0;
        let mut values = Vec::new();
        let bad = |what: &str| EnsembleError::Parse(what.to_string());
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number {s:?}")));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(h) = line.strip_prefix('#') {
                let Some((key, value)) = h.trim().split_once('=') else { continue };
                match key {
                    "dim" => dim = Some(value.parse::<usize>().map_err(|_| bad("dim"))?),
                    "extent" => {
                        let mut e = [0.0; 2];
                        for (i, v) in value.split(',').enumerate().take(2) {
                            e[i] = num(v)?;
                        }
                        extent = Some(e);
                    }
                    "cells" => cells = Some(value.parse::<usize>().map_err(|_| bad("cells"))?),
                    "provenance" => provenance = parse_provenance(value).ok_or_else(|| bad("provenance"))?,
                    "raw_mass" => raw_mass = Some(num(value)?),
                    "exclusion_rate" => exclusion_rate = num(value)?,
                    _ => {}
                }
                continue;
            }
            for v in line.split(',') {
                values.push(num(v)?);
            }
        }
        let spec = GridSpec::new(
            dim.ok_or_else(|| bad("missing dim"))?,
            extent.ok_or_else(|| bad("missing extent"))?,
            cells.ok_or_else(|| bad("missing cells"))?,
        )?;
        if values.len() != spec.cell_count() {
            return Err(bad(&format!("{} values for {} cells", values.len(), spec.cell_count())));
        }
        Ok(Self {
            spec,
            values,
            provenance,
            raw_mass: raw_mass.unwrap_or(1.0),
            exclusion_rate,
            cell_error: None,
        })
    }

    /// 16-bit binary PGM (P5). Values are scaled by the grid maximum, which is
    /// recorded in a `# max=` comment line; image row `r` is grid row `r`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let s = &self.spec;
        let (w, h) = if s.dim == 1 { (s.cells, 1) } else { (s.cells, s.cells) };
        let max = self.max_value();
        let mut out = format!("P5\n# max={max}\n{w} {h}\n65535\n").into_bytes();
        out.reserve(2 * w * h);
        for v in &self.values {
            let level = if max > 0.0 { (v / max * 65535.0).round() as u16 } else { 0 };
            out.extend_from_slice(&level.to_be_bytes());
        }
        out
    }
}

fn provenance_label(p: &Provenance) -> String {
    match p {
        Provenance::Histogram { samples } => format!("histogram:{samples}"),
        Provenance::Backtracked { subsamples } => format!("backtracked:{subsamples}"),
        Provenance::Quadrature { subsamples } => format!("quadrature:{subsamples}"),
        Provenance::Tabulated => "tabulated".into(),
    }
}

fn parse_provenance(s: &str) -> Option<Provenance> {
    let (kind, n) = s.split_once(':').unwrap_or((s, "0"));
    let n: usize = n.parse().ok()?;
    Some(match kind {
        "histogram" => Provenance::Histogram { samples: n },
        "backtracked" => Provenance::Backtracked { subsamples: n },
        "quadrature" => Provenance::Quadrature { subsamples: n },
        "tabulated" => Provenance::Tabulated,
        _ => return None,
    })
}

/// Count-normalized histogram of `positions`.
pub fn coarse_density_histogram(positions: &[Point], spec: GridSpec) -> Result<DensityGrid, EnsembleError> {
    if positions.is_empty() {
        return Err(EnsembleError::InvalidParameter("histogram needs at least one position".into()));
    }
    let mut counts = vec![0u64; spec.cell_count()];
    for x in positions {
        counts[spec.cell_of(x)] += 1;
    }
    let scale = 1.0 / (positions.len() as f64 * spec.cell_area());
    let values = counts.iter().map(|&c| c as f64 * scale).collect();
    DensityGrid::normalized(
        spec,
        values,
        Provenance::Histogram {
            samples: positions.len(),
        },
        0.0,
        None,
    )
}

/// Cell averages of `density` over `s`-per-axis midpoint quadrature.
fn quadrature_grid<F>(spec: GridSpec, s: usize, density: F) -> Result<DensityGrid, EnsembleError>
where
    F: Fn(&Point) -> f64 + Sync,
{
    check_subsamples(s)?;
    let per = spec.points_per_cell(s);
    let values: Vec<f64> = (0..spec.cell_count())
        .into_par_iter()
        .map(|c| spec.quadrature_points(c, s).iter().map(&density).sum::<f64>() / per as f64)
        .collect();
    DensityGrid::normalized(spec, values, Provenance::Quadrature { subsamples: s }, 0.0, None)
}

/// Direct quadrature of an initial density (no transport).
pub fn density_quadrature(f0: &DensitySpec, spec: GridSpec, s: usize) -> Result<DensityGrid, EnsembleError> {
    quadrature_grid(spec, s, |x| f0.density(x))
}

/// Coarse-grained `|ψ(·, t)|²`.
pub fn coarse_born_density<S: WaveState + ?Sized>(
    state: &S,
    t: f64,
    spec: GridSpec,
    s: usize,
) -> Result<DensityGrid, EnsembleError> {
    quadrature_grid(spec, s, |x| state.density(x, t))
}

fn check_subsamples(s: usize) -> Result<(), EnsembleError> {
    if s == 0 {
        return Err(EnsembleError::InvalidParameter("subsamples per cell must be >= 1".into()));
    }
    Ok(())
}

/// Backtracked origins of every quadrature point of a grid at time `t`.
///
/// One field serves any number of initial densities: the transported density
/// at a point is `|ψ(x, t)|² · ρ₀(x₀)/|ψ(x₀, 0)|²`.
#[derive(Debug, Clone)]
pub struct BacktrackField {
    spec: GridSpec,
    subsamples: usize,
    t: f64,
    /// `(|ψ(x, t)|², origin)`; origin is `None` for excluded points.
    points: Vec<(f64, Option<(Point, f64)>)>,
    aborts: [usize; 3],
}

pub fn backtrack_field<S: WaveState + ?Sized>(
    state: &S,
    t: f64,
    spec: GridSpec,
    s: usize,
    cfg: &IntegratorConfig,
) -> Result<BacktrackField, EnsembleError> {
    check_subsamples(s)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(EnsembleError::InvalidParameter(format!("snapshot time {t} must be >= 0")));
    }
    cfg.validate()?;
    let pts = spec.all_quadrature_points(s);
    let results: Vec<(f64, Result<(Point, f64), PathStatus>)> = pts
        .par_iter()
        .map(|x| {
            let born_t = state.density(x, t);
            let origin = match advance(state, *x, t, 0.0, cfg) {
                Ok(end) if end.status == PathStatus::Completed => match state.density(&end.x, 0.0) {
                    d if d > 0.0 => Ok((end.x, d)),
                    _ => Err(PathStatus::NodeAbort),
                },
                Ok(end) => Err(end.status),
                Err(_) => Err(PathStatus::WallAbort),
            };
            (born_t, origin)
        })
        .collect();
    let mut aborts = [0usize; 3];
    let points = results
        .into_iter()
        .map(|(b, r)| match r {
            Ok(o) => (b, Some(o)),
            Err(status) => {
                let slot = match status {
                    PathStatus::NodeAbort => 0,
                    PathStatus::WallAbort => 1,
                    _ => 2,
                };
                aborts[slot] += 1;
                (b, None)
            }
        })
        .collect();
    Ok(BacktrackField {
        spec,
        subsamples: s,
        t,
        points,
        aborts,
    })
}

impl BacktrackField {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn exclusion_rate(&self) -> f64 {
        self.aborts.iter().sum::<usize>() as f64 / self.points.len() as f64
    }

    /// Excluded points by cause: `(node, wall, step_limit)`.
    pub fn aborts(&self) -> (usize, usize, usize) {
        (self.aborts[0], self.aborts[1], self.aborts[2])
    }

    pub fn origins(&self) -> impl Iterator<Item = Option<Point>> + '_ {
        self.points.iter().map(|(_, o)| o.map(|(x, _)| x))
    }

    /// Transported density of `f0`, averaged over the non-excluded points of
    /// each cell and renormalized.
    pub fn density(&self, f0: &DensitySpec) -> Result<DensityGrid, EnsembleError> {
        let per = self.spec.points_per_cell(self.subsamples);
        let mut values = Vec::with_capacity(self.spec.cell_count());
        let mut errors = Vec::with_capacity(self.spec.cell_count());
        for cell in self.points.chunks(per) {
            let samples: Vec<f64> = cell
                .iter()
                .filter_map(|(born_t, origin)| origin.map(|(x0, born0)| born_t * f0.density(&x0) / born0))
                .collect();
            let (mean, stderr) = mean_and_stderr(&samples);
            values.push(mean);
            errors.push(stderr);
        }
        DensityGrid::normalized(
            self.spec,
            values,
            Provenance::Backtracked {
                subsamples: self.subsamples,
            },
            self.exclusion_rate(),
            Some(errors),
        )
    }

    /// `|ψ(·, t)|²` over the same quadrature points (all of them).
    pub fn born(&self) -> Result<DensityGrid, EnsembleError> {
        let per = self.spec.points_per_cell(self.subsamples);
        let values = self
            .points
            .chunks(per)
            .map(|c| c.iter().map(|(b, _)| b).sum::<f64>() / per as f64)
            .collect();
        DensityGrid::normalized(
            self.spec,
            values,
            Provenance::Quadrature {
                subsamples: self.subsamples,
            },
            0.0,
            None,
        )
    }
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    match samples.len() {
        0 => (0.0, 0.0),
        1 => (samples[0], 0.0),
        n => {
            let nf = n as f64;
            let mean = samples.iter().sum::<f64>() / nf;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            (mean, (var / nf).sqrt())
        }
    }
}

/// `ρ(x, t) = |ψ(x, t)|² f₀(x₀(x, t))` coarse-grained by `s`-per-axis
/// quadrature, with `x₀` found by backtracking to `t = 0`.
pub fn coarse_density_backtracked<S: WaveState + ?Sized>(
    f0: &DensitySpec,
    state: &S,
    t: f64,
    spec: GridSpec,
    s: usize,
    cfg: &IntegratorConfig,
) -> Result<DensityGrid, EnsembleError> {
    backtrack_field(state, t, spec, s, cfg)?.density(f0)
}
