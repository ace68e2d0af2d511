use super::{DensityGrid, EnsembleError};
use serde::{Deserialize, Serialize};

/// Floor substituted for `q̄` on cells where `ρ̄ > 0` but `q̄ = 0`.
pub const Q_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    /// Cells where `q̄` had to be clamped to [`Q_FLOOR`].
    pub clamped_cells: usize,
}

/// Coarse-grained H-function `Σ ρ̄ ln(ρ̄/q̄) · cell_area`, with `0 ln 0 = 0`.
pub fn h_function(rho: &DensityGrid, q: &DensityGrid) -> Result<HValue, EnsembleError> {
    rho.check_compatible(q)?;
    let area = rho.spec().cell_area();
    let mut clamped_cells = 0;
    let mut acc = 0.0;
    for (&r, &qq) in rho.values().iter().zip(q.values()) {
        if r <= 0.0 {
            continue;
        }
        let qq = if qq > 0.0 {
            qq
        } else {
            clamped_cells += 1;
            Q_FLOOR
        };
        if r != qq {
            acc += r * (r / qq).ln();
        }
    }
    Ok(HValue {
        value: acc * area,
        clamped_cells,
    })
}

/// First-order propagation of the per-cell quadrature error of `rho` into
/// `H̄`: `sqrt(Σ ((ln(ρ̄/q̄) + 1) σ_cell area)²)`. Zero when `rho` carries no
/// cell errors.
pub fn h_uncertainty(rho: &DensityGrid, q: &DensityGrid) -> f64 {
    let Some(err) = rho.cell_error() else { return 0.0 };
    let area = rho.spec().cell_area();
    rho.values()
        .iter()
        .zip(q.values())
        .zip(err)
        .filter(|((r, qq), _)| **r > 0.0 && **qq > 0.0)
        .map(|((r, qq), e)| (((r / qq).ln() + 1.0) * e * area).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `½ Σ |a − b| · cell_area`.
pub fn tv_distance(a: &DensityGrid, b: &DensityGrid) -> Result<f64, EnsembleError> {
    a.check_compatible(b)?;
    let area = a.spec().cell_area();
    let sum: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    Ok(0.5 * sum * area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HSample {
    pub t: f64,
    pub h: f64,
    /// Estimated numerical error of `h` (see [`h_uncertainty`]).
    pub error: f64,
    pub exclusion_rate: f64,
}

/// `H̄(t)` at successive snapshot times, with the coarse-graining it was
/// computed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSeries {
    pub cells: usize,
    pub subsamples: usize,
    pub cell_width: f64,
    pub samples: Vec<HSample>,
}

/// Least-squares fit `ln H̄ = ln A − λ t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub amplitude: f64,
    pub rate: f64,
    /// `ln H̄_i − (ln A − λ t_i)` per sample (NaN where `H̄ ≤ 0`).
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
}

impl HSeries {
    /// `H̄(last) / H̄(first)`.
    pub fn decay_ratio(&self) -> Option<f64> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        (first.h > 0.0).then(|| last.h / first.h)
    }

    /// Largest increase between consecutive samples, in units of the
    /// combined error estimate of the two samples. Negative when `H̄` never
    /// rises; infinite when it rises with zero estimated error.
    pub fn max_rise_over_error(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| {
                let rise = w[1].h - w[0].h;
                let err = w[0].error.hypot(w[1].error);
                if rise <= 0.0 {
                    if err > 0.0 {
                        rise / err
                    } else {
                        -1.0
                    }
                } else if err > 0.0 {
                    rise / err
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_exclusion_rate(&self) -> f64 {
        self.samples.iter().map(|s| s.exclusion_rate).fold(0.0, f64::max)
    }

    pub fn exponential_fit(&self) -> Option<ExpFit> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.h > 0.0)
            .map(|s| (s.t, s.h.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mt;
        let residuals: Vec<f64> = self
            .samples
            .iter()
            .map(|s| if s.h > 0.0 { s.h.ln() - (intercept + slope * s.t) } else { f64::NAN })
            .collect();
        let finite: Vec<f64> = residuals.iter().cloned().filter(|r| r.is_finite()).collect();
        let rms_residual = (finite.iter().map(|r| r * r).sum::<f64>() / finite.len() as f64).sqrt();
        Some(ExpFit {
            amplitude: intercept.exp(),
            rate: -slope,
            residuals,
            rms_residual,
        })
    }
}
