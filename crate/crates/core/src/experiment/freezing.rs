use super::relaxation::relax_state;
use super::{check_positive, ExperimentError, RelaxationParams};
use crate::state::ExpandingBoxState;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Multiply `ħ/m` (and so every energy and velocity) by each value.
    Velocity,
    /// Let the far walls of the box (1D or square) move outward at each rate.
    Expanding,
}

impl std::str::FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "velocity" => Ok(Self::Velocity),
            "expanding" => Ok(Self::Expanding),
            _ => Err(format!("expected velocity or expanding, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreezingParams {
    pub sweep: Sweep,
    pub values: Vec<f64>,
    /// Time `T` of the residual `H̄(T)/H̄(0)`.
    pub final_time: f64,
    /// Mode set, initial density, grid and integrator. Its `times` and
    /// `velocity_scale` are replaced by the sweep.
    pub base: RelaxationParams,
}

impl Default for FreezingParams {
    fn default() -> Self {
        Self::for_sweep(Sweep::Velocity)
    }
}

impl FreezingParams {
    pub fn for_sweep(sweep: Sweep) -> Self {
        match sweep {
            Sweep::Velocity => Self {
                sweep,
                values: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
                final_time: 4.0 * PI,
                base: RelaxationParams::default(),
            },
            Sweep::Expanding => Self {
                sweep,
                values: vec![0.0, 0.5, 1.0, 2.0, 4.0],
                final_time: 4.0 * PI,
                base: RelaxationParams::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.base.validate()?;
        check_positive("final_time", self.final_time)?;
        if self.values.is_empty() {
            return Err(ExperimentError::invalid("values", "sweep needs at least one value"));
        }
        for &v in &self.values {
            match self.sweep {
                Sweep::Velocity => check_positive("values", v)?,
                Sweep::Expanding => {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(ExperimentError::invalid(
                            "values",
                            format!("expansion rates must be finite and >= 0, got {v}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreezingRow {
    pub value: f64,
    pub h_initial: f64,
    pub h_final: f64,
    pub residual_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreezingResult {
    pub sweep: Sweep,
    /// In the order of the sweep values.
    pub rows: Vec<FreezingRow>,
    /// Residual ratio non-decreasing towards slower dynamics (smaller `s`,
    /// faster expansion).
    pub monotone: bool,
}

pub fn run_freezing(params: &FreezingParams, seed: u64) -> Result<FreezingResult, ExperimentError> {
    params.validate()?;
    let relax = RelaxationParams {
        times: vec![0.0, params.final_time],
        velocity_scale: 1.0,
        ..params.base.clone()
    };
    let base = relax.initial_state(seed)?;
    let geometry = relax.geometry()?;
    let mut rows = Vec::with_capacity(params.values.len());
    for &value in &params.values {
        let series = match params.sweep {
            Sweep::Velocity => {
                let state = base.clone().with_velocity_scale(value)?;
                let f0 = relax.initial.resolve(&state, geometry)?;
                relax_state(&state, &[f0], &relax)?.remove(0).series
            }
            Sweep::Expanding => {
                let state = ExpandingBoxState::new(relax.side, value, base.terms().to_vec())?;
                let f0 = relax.initial.resolve(&state, geometry)?;
                relax_state(&state, &[f0], &relax)?.remove(0).series
            }
        };
        let h_initial = series.samples[0].h;
        let h_final = series.samples[1].h;
        rows.push(FreezingRow {
            value,
            h_initial,
            h_final,
            residual_ratio: h_final / h_initial,
        });
    }
    let monotone = is_monotone(params.sweep, &rows);
    Ok(FreezingResult {
        sweep: params.sweep,
        rows,
        monotone,
    })
}

fn is_monotone(sweep: Sweep, rows: &[FreezingRow]) -> bool {
    let mut ordered: Vec<&FreezingRow> = rows.iter().collect();
    // from fastest relaxation to slowest
    match sweep {
        Sweep::Velocity => ordered.sort_by(|a, b| b.value.total_cmp(&a.value)),
        Sweep::Expanding => ordered.sort_by(|a, b| a.value.total_cmp(&b.value)),
    }
    ordered.windows(2).all(|w| w[1].residual_ratio >= w[0].residual_ratio)
}
