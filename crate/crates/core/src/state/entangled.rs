use super::{
    check_interior, BoxGeometry, Branch, ModeIndex,
    ModeSuperposition, Point, StateError, WaveEvaluation, WaveState,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Largest truncation order considered when searching for one that meets a
/// norm-loss tolerance.
const MAX_ORDER: usize = 1 << 16;

/// Odd-mode counts up to this evaluate without heap allocation.
const STACK_ORDER: usize = 128;

/// Overlaps `⟨χ_k(2L) | φ_n(L)⟩` for `k = 1..=order`, where `φ_n` is the
/// n-th eigenmode of `(0, L)` and `χ_k` the k-th eigenmode of `(0, 2L)`.
///
/// The overlap integral is dimensionless: it only depends on `n` and `k`.
/// Even `k ≠ 2n` vanish, `k = 2n` gives `1/√2`, and odd `k` give
/// `(√2/π)(σ(p)/p − σ(q)/q)` with `p = 2n − k`, `q = 2n + k` and
/// `σ(j) = sin(πj/2)`.
pub fn wall_expansion_coefficients(n: u32, order: usize, side: f64) -> Result<Vec<f64>, StateError> {
    if n == 0 {
        return Err(StateError::InvalidMode);
    }
    if order < 1 {
        return Err(StateError::InvalidParameter("truncation order K must be >= 1".into()));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(StateError::InvalidParameter(format!("box side must be positive, got {side}")));
    }
    Ok((1..=order as i64).map(|k| overlap(i64::from(n), k)).collect())
}

fn overlap(n: i64, k: i64) -> f64 {
    if k == 2 * n {
        return FRAC_1_SQRT_2;
    }
    if k % 2 == 0 {
        return 0.0;
    }
    let p = 2 * n - k;
    let q = 2 * n + k;
    // sin(πj/2) for odd j
    let sigma = |j: i64| if (j - 1).rem_euclid(4) == 0 { 1.0 } else { -1.0 };
    SQRT_2 / PI * (sigma(p) / p as f64 - sigma(q) / q as f64)
}

/// Smallest `K` for which every source mode in `modes` keeps at least
/// `1 - tolerance` of its norm after re-expansion.
pub fn truncation_order(modes: &[u32], tolerance: f64) -> Result<usize, StateError> {
    if !(tolerance > 0.0) {
        return Err(StateError::InvalidParameter(format!(
            "truncation tolerance must be positive, got {tolerance}"
        )));
    }
    let mut best = 1;
    for &n in modes {
        if n == 0 {
            return Err(StateError::InvalidMode);
        }
        let mut kept = 0.0;
        let mut k = 1;
        loop {
            let c = overlap(i64::from(n), k as i64);
            kept += c * c;
            if 1.0 - kept <= tolerance && k >= 2 * n as usize {
                break;
            }
            k += 1;
            if k > MAX_ORDER {
                return Err(StateError::Truncation {
                    mode: n,
                    order: MAX_ORDER,
                    loss: 1.0 - kept,
                    tolerance,
                });
            }
        }
        best = best.max(k);
    }
    Ok(best)
}

/// Sudden expansion of box B from `(0, L)` to `(0, 2L)` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallMove {
    pub time: f64,
    /// Truncation order `K`; chosen from `tolerance` when absent.
    pub order: Option<usize>,
    /// Largest acceptable norm loss per source mode.
    pub tolerance: f64,
}

impl WallMove {
    pub fn at(time: f64) -> Self {
        Self {
            time,
            order: None,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
struct Expanded {
    time: f64,
    order: usize,
    norm_loss: f64,
    /// `(n_A, d_n[k] for odd k, nonzero (k, d_n[k]) for even k)`.
    /// Even `k` only survive at `k = 2j` for the source modes `j`.
    rows: Vec<(u32, Vec<Complex64>, Vec<(usize, Complex64)>)>,
}

impl Expanded {
    fn odd_len(&self) -> usize {
        self.order.div_ceil(2)
    }
}

/// Two particles in two 1D boxes of width `L`, entangled in configuration
/// space `(x_A, x_B)`, optionally with a sudden wall move at B.
#[derive(Debug, Clone)]
pub struct EntangledState {
    side: f64,
    coefficients: Vec<(u32, u32, Complex64)>,
    before: ModeSuperposition,
    after: Option<Expanded>,
}

impl EntangledState {
    /// `coefficients` are `(n, j, c)` for product modes `φ_n(x_A) χ_j(x_B)`.
    pub fn new(
        side: f64,
        coefficients: Vec<(u32, u32, Complex64)>,
        wall_move: Option<WallMove>,
    ) -> Result<Self, StateError> {
        let geometry = BoxGeometry::square(side)?;
        let terms = coefficients
            .iter()
            .map(|&(n, j, c)| Ok((ModeIndex::two(n, j)?, c)))
            .collect::<Result<Vec<_>, StateError>>()?;
        let before = ModeSuperposition::new(geometry, terms)?;
        let after = match wall_move {
            Some(mv) => Some(expand(side, &coefficients, mv)?),
            None => None,
        };
        Ok(Self {
            side,
            coefficients,
            before,
            after,
        })
    }

    /// `(φ₁(x_A) χ₂(x_B) + φ₂(x_A) χ₁(x_B)) / √2`.
    pub fn symmetric_pair(side: f64, wall_move: Option<WallMove>) -> Result<Self, StateError> {
        let c = Complex64::new(FRAC_1_SQRT_2, 0.0);
        Self::new(side, vec![(1, 2, c), (2, 1, c)], wall_move)
    }

    /// The same state with the wall move removed.
    pub fn without_move(&self) -> Self {
        Self {
            side: self.side,
            coefficients: self.coefficients.clone(),
            before: self.before.clone(),
            after: None,
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn coefficients(&self) -> &[(u32, u32, Complex64)] {
        &self.coefficients
    }

    pub fn truncation(&self) -> Option<usize> {
        self.after.as_ref().map(|a| a.order)
    }

    /// `1 - Σ|d|²` of the re-expanded coefficients (zero without a move).
    pub fn norm_loss(&self) -> f64 {
        self.after.as_ref().map_or(0.0, |a| a.norm_loss)
    }

    fn eval_after(&self, post: &Expanded, x: &Point, t: f64) -> WaveEvaluation {
        let len = post.odd_len();
        if len <= STACK_ORDER {
            let mut real = [0.0; 2 * STACK_ORDER];
            let mut phases = [Complex64::new(0.0, 0.0); STACK_ORDER];
            self.eval_after_with(post, x, t, &mut real[..2 * len], &mut phases[..len])
        } else {
            let mut real = vec![0.0; 2 * len];
            let mut phases = vec![Complex64::new(0.0, 0.0); len];
            self.eval_after_with(post, x, t, &mut real, &mut phases)
        }
    }

    /// Scratch slices hold `sin(kθ)`, `cos(kθ)` and `exp(-iβk²)` for odd
    /// `k = 2i + 1`; the few nonzero even terms are evaluated directly.
    fn eval_after_with(
        &self,
        post: &Expanded,
        x: &Point,
        t: f64,
        real: &mut [f64],
        zb: &mut [Complex64],
    ) -> WaveEvaluation {
        let l = self.side;
        let ka = PI / l;
        let kb = PI / (2.0 * l);
        let alpha = 0.5 * ka * ka;
        let beta = 0.5 * kb * kb * (t - post.time);
        let theta = kb * x[1];

        let (sb, cb) = real.split_at_mut(zb.len());
        progression_harmonics(theta, 1, 2, sb, cb);
        progression_phases(beta, 1, 2, zb);

        let norm_a = (2.0 / l).sqrt();
        let norm_b = (1.0 / l).sqrt();
        let zero = Complex64::new(0.0, 0.0);
        let (mut psi, mut da, mut db) = (zero, zero, zero);
        for (n, odd, even) in &post.rows {
            let mut value = zero;
            let mut slope = zero;
            let mut k = 1.0;
            for (((d, z), s), c) in odd.iter().zip(zb.iter()).zip(sb.iter()).zip(cb.iter()) {
                let w = d * z;
                value += w * *s;
                slope += w * (k * c);
                k += 2.0;
            }
            for &(k, d) in even {
                let kf = k as f64;
                let (s, c) = (kf * theta).sin_cos();
                let w = d * Complex64::from_polar(1.0, -beta * kf * kf);
                value += w * s;
                slope += w * (kf * c);
            }
            let nf = f64::from(*n);
            let (s, c) = (nf * ka * x[0]).sin_cos();
            let phase = Complex64::from_polar(norm_a * norm_b, -alpha * nf * nf * t);
            psi += phase * s * value;
            da += phase * (nf * ka * c) * value;
            db += phase * s * (kb * slope);
        }
        WaveEvaluation {
            psi,
            grad: [da, db],
            dim: 2,
        }
    }
}

/// Interleaved recurrence chains; every `ANCHOR` entries all chains restart
/// from directly evaluated values.
const CHAINS: usize = 4;
const ANCHOR: usize = 64;

/// `sin(k_i θ)`, `cos(k_i θ)` for `k_i = first + stride·i`.
fn progression_harmonics(theta: f64, first: usize, stride: usize, sin: &mut [f64], cos: &mut [f64]) {
    let (s4, c4) = ((CHAINS * stride) as f64 * theta).sin_cos();
    for i in 0..sin.len() {
        if i % ANCHOR < CHAINS {
            let (s, c) = ((first + stride * i) as f64 * theta).sin_cos();
            sin[i] = s;
            cos[i] = c;
        } else {
            let (s, c) = (sin[i - CHAINS], cos[i - CHAINS]);
            sin[i] = s * c4 + c * s4;
            cos[i] = c * c4 - s * s4;
        }
    }
}

/// `exp(-iβ k_i²)` for `k_i = first + stride·i`.
fn progression_phases(beta: f64, first: usize, stride: usize, out: &mut [Complex64]) {
    let k = |i: usize| (first + stride * i) as f64;
    let sf = stride as f64;
    // k_{i+4}² - k_i² = 8 s k_i + 16 s², which itself grows by 32 s² per chain step
    let ratio = |i: usize| Complex64::from_polar(1.0, -beta * (2.0 * CHAINS as f64 * sf * k(i) + (CHAINS * CHAINS) as f64 * sf * sf));
    let bump = Complex64::from_polar(1.0, -beta * (2 * CHAINS * CHAINS) as f64 * sf * sf);
    let mut w = [Complex64::new(0.0, 0.0); CHAINS];
    for i in 0..out.len() {
        let r = i % CHAINS;
        if i % ANCHOR < CHAINS {
            out[i] = Complex64::from_polar(1.0, -beta * k(i) * k(i));
            w[r] = ratio(i);
        } else {
            out[i] = out[i - CHAINS] * w[r];
            w[r] *= bump;
        }
    }
}

fn expand(side: f64, coefficients: &[(u32, u32, Complex64)], mv: WallMove) -> Result<Expanded, StateError> {
    if !(mv.time >= 0.0 && mv.time.is_finite()) {
        return Err(StateError::InvalidParameter(format!(
            "wall move time must be finite and >= 0, got {}",
            mv.time
        )));
    }
    let mut sources: Vec<u32> = coefficients.iter().map(|&(_, j, _)| j).collect();
    sources.sort_unstable();
    sources.dedup();
    let order = match mv.order {
        Some(k) => k,
        None => truncation_order(&sources, mv.tolerance)?,
    };
    let mut overlaps = BTreeMap::new();
    for &j in &sources {
        let coef = wall_expansion_coefficients(j, order, side)?;
        let loss = 1.0 - coef.iter().map(|c| c * c).sum::<f64>();
        if loss > mv.tolerance {
            return Err(StateError::Truncation {
                mode: j,
                order,
                loss,
                tolerance: mv.tolerance,
            });
        }
        overlaps.insert(j, coef);
    }

    let alpha = 0.5 * (PI / side).powi(2);
    let mut rows: BTreeMap<u32, Vec<Complex64>> = BTreeMap::new();
    for &(n, j, c) in coefficients {
        let row = rows
            .entry(n)
            .or_insert_with(|| vec![Complex64::new(0.0, 0.0); order + 1]);
        // B-mode phase accumulated up to the move; the A phase keeps running
        // from t = 0 and is applied at evaluation time.
        let jf = f64::from(j);
        let amp = c * Complex64::from_polar(1.0, -alpha * jf * jf * mv.time);
        for (k, o) in overlaps[&j].iter().enumerate() {
            row[k + 1] += amp * o;
        }
    }
    let kept: f64 = rows.values().flat_map(|r| r.iter()).map(|d| d.norm_sqr()).sum();
    let norm_loss = 1.0 - kept;
    let bound = mv.tolerance * sources.len() as f64 + 1e-12;
    if norm_loss.abs() > bound {
        return Err(StateError::Truncation {
            mode: 0,
            order,
            loss: norm_loss,
            tolerance: bound,
        });
    }
    let rows = rows
        .into_iter()
        .map(|(n, d)| {
            let odd = d.iter().skip(1).step_by(2).copied().collect();
            let even = (2..=order)
                .step_by(2)
                .filter(|&k| d[k] != Complex64::new(0.0, 0.0))
                .map(|k| (k, d[k]))
                .collect();
            (n, odd, even)
        })
        .collect();
    Ok(Expanded {
        time: mv.time,
        order,
        norm_loss,
        rows,
    })
}

impl WaveState for EntangledState {
    fn dim(&self) -> usize {
        2
    }

    fn extent_on(&self, _t: f64, branch: Branch) -> Point {
        match (branch, &self.after) {
            (Branch::After, Some(_)) => [self.side, 2.0 * self.side],
            _ => [self.side, self.side],
        }
    }

    fn eval_on(&self, x: &Point, t: f64, branch: Branch) -> Result<WaveEvaluation, StateError> {
        match (branch, &self.after) {
            (Branch::After, Some(post)) => {
                check_interior(x, [self.side, 2.0 * self.side], 2, t)?;
                Ok(self.eval_after(post, x, t))
            }
            _ => self.before.eval_on(x, t, Branch::Before),
        }
    }

    fn event_time(&self) -> Option<f64> {
        self.after.as_ref().map(|a| a.time)
    }

    fn peak_density(&self) -> f64 {
        self.before.peak_density()
    }

    fn density(&self, x: &Point, t: f64) -> f64 {
        match (self.branch_at(t), &self.after) {
            (Branch::After, Some(_)) => self.eval(x, t).map_or(0.0, |e| e.psi.norm_sqr()),
            _ => self.before.density(x, t),
        }
    }

    fn static_flow(&self, branch: Branch) -> bool {
        match (branch, &self.after) {
            (Branch::After, Some(_)) => false,
            _ => self.before.static_flow(Branch::Before),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Midpoint-rule quadrature of the overlap integral, independent of the
    /// closed form.
    fn overlap_by_quadrature(n: u32, k: u32, side: f64) -> f64 {
        let steps = 200_000;
        let h = side / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let x = (i as f64 + 0.5) * h;
            acc += (f64::from(n) * PI * x / side).sin() * (f64::from(k) * PI * x / (2.0 * side)).sin();
        }
        (2.0 / side).sqrt() * (1.0 / side).sqrt() * acc * h
    }

    #[test]
    fn resonant_overlaps_are_one_over_root_two() {
        let c1 = wall_expansion_coefficients(1, 4, PI).unwrap();
        assert_relative_eq!(c1[1], 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        let c2 = wall_expansion_coefficients(2, 4, PI).unwrap();
        assert_relative_eq!(c2[3], 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        // analytic: ∫₀^π sin²x dx · √2/π
        assert_relative_eq!(c1[1], (PI / 2.0) * 2f64.sqrt() / PI, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for side in [PI, 1.3] {
            for n in 1..=3 {
                let coef = wall_expansion_coefficients(n, 12, side).unwrap();
                for (i, c) in coef.iter().enumerate() {
                    let q = overlap_by_quadrature(n, i as u32 + 1, side);
                    assert!((c - q).abs() < 1e-9, "n={n} k={} closed={c} quad={q}", i + 1);
                }
            }
        }
    }

    #[test]
    fn norm_partial_sums_increase_to_one() {
        let coef = wall_expansion_coefficients(1, 64, PI).unwrap();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for c in &coef {
            acc += c * c;
            assert!(acc >= prev);
            prev = acc;
        }
        assert!(acc >= 0.999 && acc <= 1.0 + 1e-12, "{acc}");
    }

    #[test]
    fn coefficient_errors() {
        assert!(wall_expansion_coefficients(1, 0, PI).is_err());
        assert!(wall_expansion_coefficients(0, 4, PI).is_err());
    }

    #[test]
    fn truncation_meets_tolerance() {
        let k = truncation_order(&[1, 2], 1e-6).unwrap();
        for n in [1, 2] {
            let coef = wall_expansion_coefficients(n, k, PI).unwrap();
            assert!(1.0 - coef.iter().map(|c| c * c).sum::<f64>() <= 1e-6);
        }
        let coef = wall_expansion_coefficients(2, k - 1, PI).unwrap();
        assert!(1.0 - coef.iter().map(|c| c * c).sum::<f64>() > 1e-6);
    }

    #[test]
    fn explicit_order_too_small_is_rejected() {
        let mv = WallMove {
            time: 1.0,
            order: Some(8),
            tolerance: 1e-6,
        };
        assert!(matches!(
            EntangledState::symmetric_pair(PI, Some(mv)),
            Err(StateError::Truncation { .. })
        ));
    }

    #[test]
    fn wavefunction_continuous_across_move() {
        let st = EntangledState::symmetric_pair(PI, Some(WallMove::at(0.8))).unwrap();
        for x in [[0.7, 1.1], [2.2, 0.4], [1.5, 2.9]] {
            let before = st.eval_on(&x, 0.8, Branch::Before).unwrap().psi;
            let after = st.eval_on(&x, 0.8, Branch::After).unwrap().psi;
            assert!((before - after).norm() < 2e-3, "{x:?}: {before} vs {after}");
        }
        // the expanded half of box B starts (nearly) empty
        let far = st.eval_on(&[1.0, 1.5 * PI], 0.8, Branch::After).unwrap().psi;
        assert!(far.norm() < 2e-3);
        assert!(st.norm_loss().abs() < 2e-6);
    }

    #[test]
    fn pre_move_state_is_stationary() {
        let st = EntangledState::symmetric_pair(PI, Some(WallMove::at(1.0))).unwrap();
        let v = st.guidance(&[1.0, 2.0], 0.5, Branch::Before, 0.0).unwrap();
        assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
        assert_eq!(st.extent(0.5), [PI, PI]);
        assert_eq!(st.extent(1.0), [PI, 2.0 * PI]);
    }

    #[test]
    fn progressions_match_direct_evaluation() {
        let mut sin = vec![0.0; 300];
        let mut cos = vec![0.0; 300];
        let mut z = vec![Complex64::new(0.0, 0.0); 300];
        for (first, stride) in [(1, 2), (0, 1), (3, 5)] {
            progression_harmonics(0.731, first, stride, &mut sin, &mut cos);
            progression_phases(0.0123, first, stride, &mut z);
            for i in 0..300 {
                let k = (first + stride * i) as f64;
                // direct values carry an argument rounding error ~ kθ·ε or βk²·ε
                let (ds, dc) = (k * 0.731).sin_cos();
                let tol = 1e-13 + 1e-15 * k * 0.731;
                assert!((sin[i] - ds).abs() < tol && (cos[i] - dc).abs() < tol, "harmonic {k}");
                let direct = Complex64::from_polar(1.0, -0.0123 * k * k);
                let tol = 1e-13 * (1.0 + 0.0123 * k * k);
                assert!((z[i] - direct).norm() < tol, "phase {k}: {}", (z[i] - direct).norm());
            }
        }
    }

    /// Term-by-term sum of `d_nk φ_n(x_A) χ_k(x_B)` with every factor from
    /// `sin` / `exp` directly.
    fn naive_after(side: f64, t_op: f64, order: usize, x: Point, t: f64) -> Complex64 {
        let c = FRAC_1_SQRT_2;
        let e = |k: f64, w: f64| 0.5 * (k * PI / w).powi(2);
        let mut psi = Complex64::new(0.0, 0.0);
        for (n, j) in [(1u32, 2u32), (2, 1)] {
            let coef = wall_expansion_coefficients(j, order, side).unwrap();
            let (nf, jf) = (f64::from(n), f64::from(j));
            let pre = Complex64::from_polar(c, -e(jf, side) * t_op - e(nf, side) * t);
            let phi = (2.0 / side).sqrt() * (nf * PI * x[0] / side).sin();
            for (i, o) in coef.iter().enumerate() {
                let k = (i + 1) as f64;
                let chi = (1.0 / side).sqrt() * (k * PI * x[1] / (2.0 * side)).sin();
                psi += pre * o * phi * chi * Complex64::from_polar(1.0, -e(k, 2.0 * side) * (t - t_op));
            }
        }
        psi
    }

    #[test]
    fn post_move_matches_direct_sum() {
        let st = EntangledState::symmetric_pair(PI, Some(WallMove::at(0.5))).unwrap();
        let order = st.truncation().unwrap();
        for (x, t) in [([0.7, 1.1], 0.5), ([2.2, 4.4], 0.93), ([1.5, 5.9], 3.1)] {
            let fast = st.eval(&x, t).unwrap().psi;
            let slow = naive_after(PI, 0.5, order, x, t);
            assert!((fast - slow).norm() < 1e-12, "{x:?} {t}: {fast} vs {slow}");
        }
    }
}
