//! Guidance-equation integration `dx/dt = v(x, t)`.
//!
//! Dormand–Prince 5(4) with FSAL stages and PI step-size control. Steps are
//! forced to end at a state's event time so no step straddles the
//! discontinuity. A stage that evaluates outside the open box or on a node is
//! treated as a rejected step and the step is halved; the path aborts once the
//! step falls below `h_min`.

use crate::state::{Branch, Point, StateError, WaveState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// Node threshold relative to the peak of `|ψ(·, 0)|²`.
    pub node_density_floor: f64,
    pub max_steps: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 1e-1,
            node_density_floor: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("h_init", self.h_init),
            ("h_min", self.h_min),
            ("h_max", self.h_max),
            ("node_density_floor", self.node_density_floor),
        ];
        for (key, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(TrajectoryError::InvalidConfig(format!("{key} must be positive, got {value}")));
            }
        }
        if self.max_steps == 0 {
            return Err(TrajectoryError::InvalidConfig("max_steps must be positive".into()));
        }
        if !(self.h_min < self.h_init && self.h_init <= self.h_max) {
            return Err(TrajectoryError::InvalidConfig(format!(
                "need h_min < h_init <= h_max, got {} / {} / {}",
                self.h_min, self.h_init, self.h_max
            )));
        }
        Ok(())
    }

    /// Same config with both tolerances multiplied by `factor`.
    pub fn scaled_tolerances(mut self, factor: f64) -> Self {
        self.rel_tol *= factor;
        self.abs_tol *= factor;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Completed,
    NodeAbort,
    WallAbort,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("start point {x:?} is not inside the box at t = {t}")]
    NotInterior { x: Point, t: f64 },
    #[error("non-finite integration time")]
    InvalidTime,
    #[error("trajectory aborted ({status:?}) at t = {t}, x = {x:?}")]
    Aborted { status: PathStatus, t: f64, x: Point },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub x: Point,
    /// Velocity arriving at this point (left derivative in the direction of
    /// integration).
    pub v_in: Point,
    /// Velocity leaving this point. Differs from `v_in` only at an event.
    pub v_out: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPath {
    pub status: PathStatus,
    pub points: Vec<PathPoint>,
    pub step_count: u64,
    pub rejected_steps: u64,
}

impl TrajectoryPath {
    pub fn last(&self) -> &PathPoint {
        self.points.last().expect("paths always hold the start point")
    }

    /// Cubic Hermite dense output between accepted steps (local error
    /// `O(h⁴)`). `None` outside the covered time span.
    pub fn position_at(&self, t: f64) -> Option<Point> {
        let first = self.points.first()?;
        let last = self.last();
        let (lo, hi) = if first.t <= last.t { (first.t, last.t) } else { (last.t, first.t) };
        if !(t >= lo && t <= hi) {
            return None;
        }
        let forward = last.t >= first.t;
        let idx = self
            .points
            .partition_point(|p| if forward { p.t <= t } else { p.t >= t });
        if idx == 0 {
            return Some(first.x);
        }
        if idx >= self.points.len() {
            return Some(last.x);
        }
        let a = &self.points[idx - 1];
        let b = &self.points[idx];
        let h = b.t - a.t;
        let s = (t - a.t) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut x = [0.0; 2];
        for i in 0..2 {
            x[i] = h00 * a.x[i] + h10 * h * a.v_out[i] + h01 * b.x[i] + h11 * h * b.v_in[i];
        }
        Some(x)
    }
}

/// Final state of an integration without the intermediate path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Advance {
    pub status: PathStatus,
    pub t: f64,
    pub x: Point,
    pub step_count: u64,
    pub rejected_steps: u64,
}

/// Integrates from `(x0, t0)` to `t1` (backward when `t1 < t0`), recording
/// every accepted step.
pub fn integrate<S: WaveState + ?Sized>(
    state: &S,
    x0: Point,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<TrajectoryPath, TrajectoryError> {
    let mut points: Vec<PathPoint> = Vec::new();
    let end = drive(state, x0, t0, t1, cfg, |t, x, v| match points.last_mut() {
        Some(p) if p.t == t => p.v_out = *v,
        _ => points.push(PathPoint {
            t,
            x: *x,
            v_in: *v,
            v_out: *v,
        }),
    })?;
    if points.is_empty() {
        points.push(PathPoint {
            t: t0,
            x: x0,
            v_in: [0.0; 2],
            v_out: [0.0; 2],
        });
    }
    Ok(TrajectoryPath {
        status: end.status,
        points,
        step_count: end.step_count,
        rejected_steps: end.rejected_steps,
    })
}

/// Like [`integrate`] but only keeps the end point.
pub fn advance<S: WaveState + ?Sized>(
    state: &S,
    x0: Point,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Advance, TrajectoryError> {
    drive(state, x0, t0, t1, cfg, |_, _, _| {})
}

/// Origin at `t = 0` of the trajectory passing through `x` at time `t`.
pub fn backtrack<S: WaveState + ?Sized>(
    state: &S,
    x: Point,
    t: f64,
    cfg: &IntegratorConfig,
) -> Result<Point, TrajectoryError> {
    let end = advance(state, x, t, 0.0, cfg)?;
    match end.status {
        PathStatus::Completed => Ok(end.x),
        status => Err(TrajectoryError::Aborted {
            status,
            t: end.t,
            x: end.x,
        }),
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const MAX_GROWTH: f64 = 10.0;
const MAX_SHRINK: f64 = 0.2;

#[derive(Clone, Copy)]
enum Failure {
    Node,
    Wall,
}

fn classify(e: &StateError) -> Failure {
    match e {
        StateError::OutsideDomain { .. } => Failure::Wall,
        _ => Failure::Node,
    }
}

fn abort_status(f: Failure) -> PathStatus {
    match f {
        Failure::Node => PathStatus::NodeAbort,
        Failure::Wall => PathStatus::WallAbort,
    }
}

fn drive<S, F>(
    state: &S,
    x0: Point,
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut observe: F,
) -> Result<Advance, TrajectoryError>
where
    S: WaveState + ?Sized,
    F: FnMut(f64, &Point, &Point),
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(TrajectoryError::InvalidTime);
    }
    let dim = state.dim();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let event = state.event_time().filter(|te| te.is_finite());
    let branch_for = |a: f64, b: f64| match event {
        Some(te) if a.min(b) >= te => Branch::After,
        _ => Branch::Before,
    };

    let mut cuts = vec![t0];
    if let Some(te) = event {
        if (te - t0) * dir > 0.0 && (t1 - te) * dir > 0.0 {
            cuts.push(te);
        }
    }
    cuts.push(t1);
    if !crate::state::is_interior(&x0, &state.extent_on(t0, branch_for(cuts[0], cuts[1])), dim) {
        return Err(TrajectoryError::NotInterior { x: x0, t: t0 });
    }

    let floor = cfg.node_density_floor * state.peak_density();
    let mut x = x0;
    let mut t = t0;
    let mut h = cfg.h_init;
    let mut accepted = 0u64;
    let mut rejected = 0u64;

    if t0 == t1 {
        return Ok(Advance {
            status: PathStatus::Completed,
            t,
            x,
            step_count: 0,
            rejected_steps: 0,
        });
    }

    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let branch = branch_for(a, b);
        let f = |tt: f64, xx: &Point| state.guidance(xx, tt, branch, floor);

        let mut k1 = match f(t, &x) {
            Ok(v) => v,
            Err(e) => {
                return Ok(Advance {
                    status: abort_status(classify(&e)),
                    t,
                    x,
                    step_count: accepted,
                    rejected_steps: rejected,
                })
            }
        };
        observe(t, &x, &k1);
        if state.static_flow(branch) {
            t = b;
            observe(t, &x, &k1);
            continue;
        }
        let mut fac_old = 1e-4f64;
        let mut last_rejected = false;

        while (b - t) * dir > 0.0 {
            if accepted + rejected >= cfg.max_steps {
                return Ok(Advance {
                    status: PathStatus::StepLimit,
                    t,
                    x,
                    step_count: accepted,
                    rejected_steps: rejected,
                });
            }
            h = h.abs().min(cfg.h_max);
            let remaining = (b - t).abs();
            let (step, t_new) = if h >= remaining { (b - t, b) } else { (dir * h, t + dir * h) };

            let mut k = [[0.0f64; 2]; 7];
            k[0] = k1;
            let mut failure = None;
            let mut x_new = x;
            for s in 1..7 {
                let mut xs = x;
                for i in 0..dim {
                    let mut acc = 0.0;
                    for j in 0..s {
                        acc += A[s][j] * k[j][i];
                    }
                    xs[i] = x[i] + step * acc;
                }
                let ts = if s == 6 { t_new } else { t + C[s] * step };
                if s == 6 {
                    x_new = xs;
                }
                match f(ts, &xs) {
                    Ok(v) => k[s] = v,
                    Err(e) => {
                        failure = Some(classify(&e));
                        break;
                    }
                }
            }

            if let Some(fail) = failure {
                rejected += 1;
                last_rejected = true;
                h = 0.5 * step.abs();
                if h < cfg.h_min {
                    return Ok(Advance {
                        status: abort_status(fail),
                        t,
                        x,
                        step_count: accepted,
                        rejected_steps: rejected,
                    });
                }
                continue;
            }

            let mut err: f64 = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for j in 0..7 {
                    e += E[j] * k[j][i];
                }
                let scale = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(x_new[i].abs());
                err = err.max((step * e).abs() / scale);
            }

            let fac11 = err.powf(EXPO);
            if err <= 1.0 {
                let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_GROWTH, 1.0 / MAX_SHRINK);
                let mut h_next = step.abs() / fac;
                if last_rejected {
                    h_next = h_next.min(step.abs());
                }
                fac_old = err.max(1e-4);
                last_rejected = false;
                accepted += 1;
                t = t_new;
                x = x_new;
                k1 = k[6];
                observe(t, &x, &k1);
                // a clamped final step says nothing about the next step size
                h = if t == b { h.max(h_next) } else { h_next };
            } else {
                rejected += 1;
                last_rejected = true;
                h = step.abs() / (fac11 / SAFETY).min(1.0 / MAX_SHRINK);
                if h < cfg.h_min {
                    return Ok(Advance {
                        status: PathStatus::NodeAbort,
                        t,
                        x,
                        step_count: accepted,
                        rejected_steps: rejected,
                    });
                }
            }
        }
    }

    Ok(Advance {
        status: PathStatus::Completed,
        t,
        x,
        step_count: accepted,
        rejected_steps: rejected,
    })
}
