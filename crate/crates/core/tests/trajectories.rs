use pilotwave::ensemble::backtrack_field;
use pilotwave::{
    backtrack, integrate, BoxGeometry, GridSpec, IntegratorConfig, ModeIndex, ModeSuperposition,
    PathStatus, Point, WaveState,
};
use std::f64::consts::PI;

fn line_pair() -> ModeSuperposition {
    let modes = [ModeIndex::one(1).unwrap(), ModeIndex::one(2).unwrap()];
    ModeSuperposition::equal_amplitude(BoxGeometry::line(PI).unwrap(), &modes, &[0.0, 0.0]).unwrap()
}

fn square_four() -> ModeSuperposition {
    let modes: Vec<_> = [(1, 1), (1, 2), (2, 1), (2, 2)]
        .iter()
        .map(|&(m, n)| ModeIndex::two(m, n).unwrap())
        .collect();
    ModeSuperposition::random_phases(BoxGeometry::square(PI).unwrap(), &modes, 4).unwrap()
}

/// Velocity of `(φ₁ + φ₂)/√2` on `(0, π)` written out by hand.
fn pair_velocity(x: f64, t: f64) -> f64 {
    let (e1, e2) = (0.5, 2.0);
    // ψ ∝ sin x e^{-i e1 t} + sin 2x e^{-i e2 t}
    let (re1, im1) = ((e1 * t).cos() * x.sin(), -(e1 * t).sin() * x.sin());
    let (re2, im2) = ((e2 * t).cos() * (2.0 * x).sin(), -(e2 * t).sin() * (2.0 * x).sin());
    let (dre1, dim1) = ((e1 * t).cos() * x.cos(), -(e1 * t).sin() * x.cos());
    let (dre2, dim2) = (2.0 * (e2 * t).cos() * (2.0 * x).cos(), -2.0 * (e2 * t).sin() * (2.0 * x).cos());
    let (re, im) = (re1 + re2, im1 + im2);
    let (dre, dim) = (dre1 + dre2, dim1 + dim2);
    (dim * re - dre * im) / (re * re + im * im)
}

#[test]
fn matches_fixed_step_rk4() {
    let h = 1e-6;
    let steps = 2_000_000;
    let mut x = 1.0;
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = pair_velocity(x, t);
        let k2 = pair_velocity(x + 0.5 * h * k1, t + 0.5 * h);
        let k3 = pair_velocity(x + 0.5 * h * k2, t + 0.5 * h);
        let k4 = pair_velocity(x + h * k3, t + h);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    let path = integrate(&line_pair(), [1.0, 0.0], 0.0, 2.0, &IntegratorConfig::default()).unwrap();
    assert_eq!(path.status, PathStatus::Completed);
    let end = path.last();
    assert!((end.t - 2.0).abs() < 1e-14);
    assert!((end.x[0] - x).abs() < 1e-6, "{} vs rk4 {x}", end.x[0]);
}

fn round_trip_error<S: WaveState>(state: &S, x0: Point, t: f64, cfg: &IntegratorConfig) -> f64 {
    let fwd = integrate(state, x0, 0.0, t, cfg).unwrap();
    assert_eq!(fwd.status, PathStatus::Completed);
    let back = backtrack(state, fwd.last().x, t, cfg).unwrap();
    (back[0] - x0[0]).hypot(back[1] - x0[1])
}

#[test]
fn one_period_round_trip_closes() {
    // all energies n²/2 make the state periodic with period 4π
    let err = round_trip_error(&line_pair(), [1.0, 0.0], 4.0 * PI, &IntegratorConfig::default());
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn four_mode_backtrack_closes() {
    let state = square_four();
    let cfg = IntegratorConfig::default();
    let x = [1.5, 2.0];
    let x0 = backtrack(&state, x, 2.0 * PI, &cfg).unwrap();
    let fwd = integrate(&state, x0, 0.0, 2.0 * PI, &cfg).unwrap();
    let end = fwd.last().x;
    let err = (end[0] - x[0]).hypot(end[1] - x[1]);
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn paths_are_monotone_and_interior() {
    let state = square_four();
    for (t0, t1) in [(0.0, 3.0), (3.0, 0.0)] {
        let path = integrate(&state, [0.9, 2.2], t0, t1, &IntegratorConfig::default()).unwrap();
        assert!(path.step_count > 10);
        let sign = (t1 - t0).signum();
        for w in path.points.windows(2) {
            assert!((w[1].t - w[0].t) * sign > 0.0);
        }
        for p in &path.points {
            assert!(state.contains(&p.x, p.t), "{:?}", p.x);
        }
        assert_eq!(path.points.first().unwrap().t, t0);
        assert!((path.last().t - t1).abs() < 1e-14);
    }
}

/// `|ψ(x_t, t)|² det J / |ψ(x₀, 0)|²` with `J = ∂x_t/∂x₀` from central
/// differences over a bundle of neighbouring trajectories.
fn continuity_ratio<S: WaveState>(state: &S, x0: Point, t: f64, delta: f64) -> f64 {
    let cfg = IntegratorConfig {
        rel_tol: 1e-11,
        abs_tol: 1e-13,
        ..IntegratorConfig::default()
    };
    let end = |x: Point| integrate(state, x, 0.0, t, &cfg).unwrap().last().x;
    let column = |axis: usize| {
        let (mut up, mut down) = (x0, x0);
        up[axis] += delta;
        down[axis] -= delta;
        let (a, b) = (end(up), end(down));
        [(a[0] - b[0]) / (2.0 * delta), (a[1] - b[1]) / (2.0 * delta)]
    };
    let det = if state.dim() == 1 {
        column(0)[0]
    } else {
        let (c0, c1) = (column(0), column(1));
        c0[0] * c1[1] - c1[0] * c0[1]
    };
    let xt = end(x0);
    state.density(&xt, t) * det / state.density(&x0, 0.0)
}

#[test]
fn flow_conserves_density_ratio() {
    for x0 in [0.7, 1.6, 2.5] {
        let r = continuity_ratio(&line_pair(), [x0, 0.0], 2.0, 1e-5);
        assert!((r - 1.0).abs() < 1e-4, "1D x0 = {x0}: {r}");
    }
    for x0 in [[1.0, 1.0], [2.1, 0.8]] {
        let r = continuity_ratio(&square_four(), x0, 1.5, 1e-5);
        assert!((r - 1.0).abs() < 1e-4, "2D x0 = {x0:?}: {r}");
    }
}

#[test]
fn stationary_paths_stay_put() {
    let state = ModeSuperposition::single(BoxGeometry::square(PI).unwrap(), ModeIndex::two(2, 3).unwrap()).unwrap();
    let x0 = [0.4, 0.9];
    let path = integrate(&state, x0, 0.0, 10.0, &IntegratorConfig::default()).unwrap();
    assert_eq!(path.status, PathStatus::Completed);
    assert!(path.points.iter().all(|p| p.x == x0));
    assert_eq!(backtrack(&state, x0, 7.0, &IntegratorConfig::default()).unwrap(), x0);
    assert_eq!(backtrack(&square_four(), [1.2, 0.3], 0.0, &IntegratorConfig::default()).unwrap(), [1.2, 0.3]);
}

#[test]
fn repeated_integration_is_bitwise_identical() {
    let state = square_four();
    let cfg = IntegratorConfig::default();
    let a = integrate(&state, [0.5, 2.5], 0.0, 5.0, &cfg).unwrap();
    let b = integrate(&state, [0.5, 2.5], 0.0, 5.0, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn backtracking_ignores_thread_count() {
    let state = square_four();
    let spec = GridSpec::new(2, [PI, PI], 6).unwrap();
    let cfg = IntegratorConfig::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let field = backtrack_field(&state, 2.0, spec, 2, &cfg).unwrap();
            field.origins().collect::<Vec<_>>()
        })
    };
    let one = run(1);
    assert_eq!(one.len(), 6 * 6 * 4);
    assert_eq!(one, run(3));
    assert_eq!(one, run(4));
}
