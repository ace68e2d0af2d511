use super::{
    check_interior, grid_peak, is_interior, harmonics, mode_energy, quadratic_phases, BoxGeometry, Branch,
    ModeIndex, Point, StateError, WaveEvaluation, WaveState,
};
use crate::rng;
use num_complex::Complex64;
use rand::Rng;
use std::collections::HashSet;
use std::f64::consts::PI;

const NORM_TOLERANCE: f64 = 1e-12;
/// Largest quantum number + 1 evaluated with stack scratch space.
const STACK_MODES: usize = 17;

/// Finite superposition of eigenmodes of a static 1D or 2D box, each term
/// evolving with its own phase `exp(-iEt)`.
#[derive(Debug, Clone)]
pub struct ModeSuperposition {
    geometry: BoxGeometry,
    terms: Vec<(ModeIndex, Complex64)>,
    velocity_scale: f64,
    max_m: usize,
    max_n: usize,
    peak: f64,
    static_flow: bool,
    /// `(m, n, c)` with `n = 0` in 1D.
    flat: Vec<(usize, usize, Complex64)>,
}

impl ModeSuperposition {
    pub fn new(geometry: BoxGeometry, terms: Vec<(ModeIndex, Complex64)>) -> Result<Self, StateError> {
        if terms.is_empty() {
            return Err(StateError::InvalidParameter("superposition has no terms".into()));
        }
        let mut seen = HashSet::new();
        for (mode, _) in &terms {
            if mode.dim() != geometry.dim() {
                return Err(StateError::DimensionMismatch {
                    mode: mode.dim(),
                    geometry: geometry.dim(),
                });
            }
            if !seen.insert(*mode) {
                return Err(StateError::DuplicateMode(*mode));
            }
        }
        let norm: f64 = terms.iter().map(|(_, c)| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(StateError::NotNormalized(norm));
        }
        let max_m = terms.iter().map(|(k, _)| k.m() as usize).max().unwrap_or(1);
        let max_n = terms
            .iter()
            .map(|(k, _)| k.n().unwrap_or(0) as usize)
            .max()
            .unwrap_or(0);
        let static_flow = has_static_flow(&terms, geometry);
        let flat = terms
            .iter()
            .map(|(k, c)| (k.m() as usize, k.n().unwrap_or(0) as usize, *c))
            .collect();
        let mut state = Self {
            geometry,
            terms,
            velocity_scale: 1.0,
            max_m,
            max_n,
            peak: 0.0,
            static_flow,
            flat,
        };
        state.peak = grid_peak(geometry.dim(), geometry.extent(), |x| {
            state.eval_static(x, 0.0).psi.norm_sqr()
        });
        Ok(state)
    }

    pub fn single(geometry: BoxGeometry, mode: ModeIndex) -> Result<Self, StateError> {
        Self::new(geometry, vec![(mode, Complex64::new(1.0, 0.0))])
    }

    /// `(1/√M) Σ exp(iθ_j) φ_j` with the given phases.
    pub fn equal_amplitude(
        geometry: BoxGeometry,
        modes: &[ModeIndex],
        phases: &[f64],
    ) -> Result<Self, StateError> {
        if modes.len() != phases.len() {
            return Err(StateError::InvalidParameter(format!(
                "{} modes but {} phases",
                modes.len(),
                phases.len()
            )));
        }
        let amp = 1.0 / (modes.len() as f64).sqrt();
        let terms = modes
            .iter()
            .zip(phases)
            .map(|(&k, &th)| (k, Complex64::from_polar(amp, th)))
            .collect();
        Self::new(geometry, terms)
    }

    /// Equal amplitudes with phases drawn uniformly from `[0, 2π)`, one
    /// counter-based stream per mode position.
    pub fn random_phases(
        geometry: BoxGeometry,
        modes: &[ModeIndex],
        seed: u64,
    ) -> Result<Self, StateError> {
        let phases: Vec<f64> = (0..modes.len())
            .map(|i| {
                let mut r = rng::stream(rng::derive_seed(seed, rng::TAG_PHASES), i as u64);
                2.0 * PI * r.random::<f64>()
            })
            .collect();
        Self::equal_amplitude(geometry, modes, &phases)
    }

    /// Same state with `ħ/m` multiplied by `scale`: energies and velocities
    /// both scale, so the dynamics at time `t` equal the unscaled dynamics at
    /// `scale · t`.
    pub fn with_velocity_scale(mut self, scale: f64) -> Result<Self, StateError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(StateError::InvalidParameter(format!(
                "velocity scale must be positive, got {scale}"
            )));
        }
        self.velocity_scale = scale;
        Ok(self)
    }

    pub fn geometry(&self) -> BoxGeometry {
        self.geometry
    }

    pub fn terms(&self) -> &[(ModeIndex, Complex64)] {
        &self.terms
    }

    /// Effective energy of each term (`velocity_scale · E`).
    pub fn energies(&self) -> Vec<f64> {
        self.terms
            .iter()
            .map(|(k, _)| self.velocity_scale * mode_energy(*k, self.geometry).unwrap_or(f64::NAN))
            .collect()
    }

    fn eval_static(&self, x: &Point, t: f64) -> WaveEvaluation {
        let len = self.max_m.max(self.max_n) + 1;
        if len <= STACK_MODES {
            let mut real = [0.0; 4 * STACK_MODES];
            let mut complex = [Complex64::new(0.0, 0.0); 5 * STACK_MODES];
            self.eval_with(x, t, len, &mut real[..4 * len], &mut complex[..5 * len])
        } else {
            let mut real = vec![0.0; 4 * len];
            let mut complex = vec![Complex64::new(0.0, 0.0); 5 * len];
            self.eval_with(x, t, len, &mut real, &mut complex)
        }
    }

    /// `real` and `complex` are scratch space of `4 len` and `5 len` entries.
    fn eval_with(&self, x: &Point, t: f64, len: usize, real: &mut [f64], complex: &mut [Complex64]) -> WaveEvaluation {
        let side = self.geometry.side();
        let k = PI / side;
        let beta = self.velocity_scale * 0.5 * k * k * t;
        let zero = Complex64::new(0.0, 0.0);
        let (sx, rest) = real.split_at_mut(len);
        let (cx, rest) = rest.split_at_mut(len);
        let (sy, cy) = rest.split_at_mut(len);
        let (phase, rest) = complex.split_at_mut(len);
        let (q, rest) = rest.split_at_mut(len);
        let (r, rest) = rest.split_at_mut(len);
        let (inner_a, inner_b) = rest.split_at_mut(len);
        // exp(-iβj²) serves both axes
        harmonics(k * x[0], sx, cx);
        quadratic_phases(beta, phase);

        if self.geometry.dim() == 1 {
            let norm = (2.0 / side).sqrt();
            let mut psi = zero;
            let mut dx = zero;
            for &(m, _, c) in &self.flat {
                let a = c * phase[m];
                psi += a * sx[m];
                dx += a * (m as f64 * cx[m]);
            }
            return WaveEvaluation {
                psi: psi * norm,
                grad: [dx * (k * norm), zero],
                dim: 1,
            };
        }

        // ψ = Σ_m e_m sin(mkx) A_m with A_m = Σ_n c_mn e_n sin(nky), and
        // likewise for the gradient, so each term costs two complex products.
        harmonics(k * x[1], sy, cy);
        for n in 0..=self.max_n {
            q[n] = phase[n] * sy[n];
            r[n] = phase[n] * (n as f64 * cy[n]);
        }
        for &(m, n, c) in &self.flat {
            inner_a[m] += c * q[n];
            inner_b[m] += c * r[n];
        }
        let mut psi = zero;
        let mut dx = zero;
        let mut dy = zero;
        for m in 1..=self.max_m {
            let a = phase[m] * inner_a[m];
            psi += a * sx[m];
            dx += a * (m as f64 * cx[m]);
            dy += phase[m] * inner_b[m] * sx[m];
        }
        let norm = 2.0 / side;
        WaveEvaluation {
            psi: psi * norm,
            grad: [dx * (k * norm), dy * (k * norm)],
            dim: 2,
        }
    }
}

impl WaveState for ModeSuperposition {
    fn dim(&self) -> usize {
        self.geometry.dim()
    }

    fn extent_on(&self, _t: f64, _branch: Branch) -> Point {
        self.geometry.extent()
    }

    fn eval_on(&self, x: &Point, t: f64, _branch: Branch) -> Result<WaveEvaluation, StateError> {
        check_interior(x, self.geometry.extent(), self.geometry.dim(), t)?;
        Ok(self.eval_static(x, t))
    }

    fn velocity_scale(&self) -> f64 {
        self.velocity_scale
    }

    fn peak_density(&self) -> f64 {
        self.peak
    }

    fn static_flow(&self, _branch: Branch) -> bool {
        self.static_flow
    }

    fn density(&self, x: &Point, t: f64) -> f64 {
        // a static flow has a time-independent |ψ|²; skip the phase factors
        let t = if self.static_flow { 0.0 } else { t };
        if !is_interior(x, &self.geometry.extent(), self.geometry.dim()) {
            return 0.0;
        }
        self.eval_static(x, t).psi.norm_sqr()
    }
}

/// Degenerate energies and a common phase (up to sign) for every
/// coefficient: `ψ` is a real function times `exp(-iEt + iθ)`, so `v ≡ 0`.
fn has_static_flow(terms: &[(ModeIndex, Complex64)], geometry: BoxGeometry) -> bool {
    let (k0, c0) = terms[0];
    let e0 = mode_energy(k0, geometry).unwrap_or(f64::NAN);
    terms.iter().all(|&(k, c)| {
        let e = mode_energy(k, geometry).unwrap_or(f64::NAN);
        (e - e0).abs() <= 1e-14 * e0 && (c * c0.conj()).im.abs() <= 1e-15 * c.norm() * c0.norm()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::velocity;
    use approx::assert_relative_eq;

    fn square() -> BoxGeometry {
        BoxGeometry::square(PI).unwrap()
    }

    fn mode2(m: u32, n: u32) -> ModeIndex {
        ModeIndex::two(m, n).unwrap()
    }

    #[test]
    fn ground_state_at_centre() {
        let s = ModeSuperposition::single(square(), mode2(1, 1)).unwrap();
        let e = s.eval(&[PI / 2.0, PI / 2.0], 0.0).unwrap();
        assert_relative_eq!(e.psi.re, 2.0 / PI, epsilon = 1e-15);
        assert!(e.psi.im.abs() < 1e-15);
        assert!(e.grad[0].norm() < 1e-15 && e.grad[1].norm() < 1e-15);
        assert_relative_eq!(crate::state::born_density(&e), (2.0 / PI).powi(2), epsilon = 1e-15);
        assert_relative_eq!(s.peak_density(), (2.0 / PI).powi(2), max_relative = 1e-4);
    }

    #[test]
    fn stationary_state_rotates_phase() {
        let s = ModeSuperposition::single(square(), mode2(1, 1)).unwrap();
        for x in [[0.3, 1.1], [2.0, 0.7], [3.0, 3.0]] {
            let e0 = s.eval(&x, 0.0).unwrap();
            let e1 = s.eval(&x, 1.0).unwrap();
            let expected = e0.psi * Complex64::from_polar(1.0, -1.0);
            assert!((e1.psi - expected).norm() < 1e-14);
            assert!(velocity(&e1, 0.0).unwrap()[0].abs() < 1e-15);
            assert_eq!(s.guidance(&x, 1.0, Branch::Before, 0.0).unwrap(), [0.0, 0.0]);
            assert_eq!(s.density(&x, 1.0), s.density(&x, 0.0));
        }
    }

    #[test]
    fn rejects_bad_superpositions() {
        let g = square();
        let half = Complex64::new(0.5f64.sqrt(), 0.0);
        assert!(matches!(
            ModeSuperposition::new(g, vec![(mode2(1, 1), half), (mode2(1, 1), half)]),
            Err(StateError::DuplicateMode(_))
        ));
        assert!(matches!(
            ModeSuperposition::new(g, vec![(mode2(1, 1), half)]),
            Err(StateError::NotNormalized(_))
        ));
        assert!(matches!(
            ModeSuperposition::new(g, vec![(ModeIndex::one(1).unwrap(), Complex64::new(1.0, 0.0))]),
            Err(StateError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outside_points_are_domain_errors() {
        let s = ModeSuperposition::single(square(), mode2(1, 1)).unwrap();
        for x in [[0.0, 1.0], [1.0, PI], [-0.1, 1.0], [1.0, 4.0]] {
            assert!(matches!(s.eval(&x, 0.0), Err(StateError::OutsideDomain { .. })));
        }
    }

    #[test]
    fn random_phases_are_seeded() {
        let modes: Vec<_> = (1..=4).flat_map(|m| (1..=4).map(move |n| mode2(m, n))).collect();
        let a = ModeSuperposition::random_phases(square(), &modes, 7).unwrap();
        let b = ModeSuperposition::random_phases(square(), &modes, 7).unwrap();
        let c = ModeSuperposition::random_phases(square(), &modes, 8).unwrap();
        assert_eq!(a.terms(), b.terms());
        assert_ne!(a.terms(), c.terms());
        for (_, coef) in a.terms() {
            assert_relative_eq!(coef.norm(), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn velocity_scale_rescales_time() {
        let modes = [mode2(1, 1), mode2(2, 1), mode2(1, 3)];
        let base = ModeSuperposition::equal_amplitude(square(), &modes, &[0.0, 1.0, 2.0]).unwrap();
        let slow = base.clone().with_velocity_scale(0.25).unwrap();
        let x = [1.2, 0.9];
        let vb = base.guidance(&x, 0.5, Branch::Before, 0.0).unwrap();
        let vs = slow.guidance(&x, 2.0, Branch::Before, 0.0).unwrap();
        assert_relative_eq!(vs[0], 0.25 * vb[0], max_relative = 1e-12);
        assert_relative_eq!(vs[1], 0.25 * vb[1], max_relative = 1e-12);
    }
}
