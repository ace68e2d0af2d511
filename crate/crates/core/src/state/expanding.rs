use super::{
    check_interior, grid_peak, harmonics, Branch, ModeIndex, Point, StateError, WaveEvaluation, WaveState,
};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Box `(0, L(t))` or `(0, L(t))²` whose far walls move outward at constant
/// speed, `L(t) = L₀ + v t`.
///
/// Each 1D basis function
///
/// ```text
/// ψ_n(x, t) = √(2/L) sin(nπx/L) exp(i [v x²/(2L) − E_n L₀ t / L]),   E_n = n²π²/(2L₀²)
/// ```
///
/// solves the Schrödinger equation exactly with `ψ_n = 0` on both walls, and
/// the set is orthonormal at every `t`, so a finite superposition is an exact
/// solution as well. The square uses products `ψ_m(x, t) ψ_n(y, t)`.
///
/// In comoving coordinates `x/L` the state is the static box state at the
/// reparametrized time `L₀ t / L(t)`, which saturates at `L₀²/v`.
#[derive(Debug, Clone)]
pub struct ExpandingBoxState {
    dim: usize,
    initial_width: f64,
    rate: f64,
    terms: Vec<(ModeIndex, Complex64)>,
    max_mode: usize,
    peak: f64,
}

impl ExpandingBoxState {
    /// All modes must share one dimension, which becomes the state's.
    pub fn new(initial_width: f64, rate: f64, terms: Vec<(ModeIndex, Complex64)>) -> Result<Self, StateError> {
        if !(initial_width > 0.0 && initial_width.is_finite()) {
            return Err(StateError::InvalidParameter(format!(
                "initial width must be positive, got {initial_width}"
            )));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(StateError::InvalidParameter(format!(
                "expansion rate must be finite and >= 0, got {rate}"
            )));
        }
        let Some(&(first, _)) = terms.first() else {
            return Err(StateError::InvalidParameter("superposition has no terms".into()));
        };
        let dim = first.dim();
        if let Some((k, _)) = terms.iter().find(|(k, _)| k.dim() != dim) {
            return Err(StateError::DimensionMismatch {
                mode: k.dim(),
                geometry: dim,
            });
        }
        let mut modes: Vec<ModeIndex> = terms.iter().map(|t| t.0).collect();
        modes.sort_unstable();
        if let Some(w) = modes.windows(2).find(|w| w[0] == w[1]) {
            return Err(StateError::DuplicateMode(w[0]));
        }
        let norm: f64 = terms.iter().map(|(_, c)| c.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(StateError::NotNormalized(norm));
        }
        let max_mode = modes.iter().map(|k| k.m().max(k.n().unwrap_or(1))).max().unwrap_or(1) as usize;
        let mut state = Self {
            dim,
            initial_width,
            rate,
            terms,
            max_mode,
            peak: 0.0,
        };
        let ext = state.extent_on(0.0, Branch::Before);
        state.peak = grid_peak(dim, ext, |x| state.eval_interior(x, 0.0).psi.norm_sqr());
        Ok(state)
    }

    pub fn width(&self, t: f64) -> f64 {
        self.initial_width + self.rate * t
    }

    /// Scale factor `a(t) = L(t)/L₀`.
    pub fn scale_factor(&self, t: f64) -> f64 {
        self.width(t) / self.initial_width
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn terms(&self) -> &[(ModeIndex, Complex64)] {
        &self.terms
    }

    fn eval_interior(&self, x: &Point, t: f64) -> WaveEvaluation {
        let l = self.width(t);
        let k = PI / l;
        let mut sx = vec![0.0; self.max_mode + 1];
        let mut cx = vec![0.0; self.max_mode + 1];
        harmonics(k * x[0], &mut sx, &mut cx);
        let (mut sy, mut cy) = (vec![1.0; self.max_mode + 1], vec![0.0; self.max_mode + 1]);
        if self.dim == 2 {
            harmonics(k * x[1], &mut sy, &mut cy);
        }
        // integrated energy phase ∫ E L₀²/L(t')² dt' = E L₀ t / L
        let beta = 0.5 * (PI / self.initial_width).powi(2) * self.initial_width * t / l;
        let zero = Complex64::new(0.0, 0.0);
        let (mut value, mut gx, mut gy) = (zero, zero, zero);
        for &(mode, coef) in &self.terms {
            let (m, n) = (mode.m() as usize, mode.n().unwrap_or(0) as usize);
            let quanta = (m * m + n * n) as f64;
            let a = coef * Complex64::from_polar(1.0, -beta * quanta);
            // sy[0] = 1, cy[0] = 0 stand in for the missing y factor in 1D
            value += a * (sx[m] * sy[n]);
            gx += a * (m as f64 * k * cx[m] * sy[n]);
            gy += a * (n as f64 * k * sx[m] * cy[n]);
        }
        let r2 = x[0] * x[0] + x[1] * x[1];
        let norm = if self.dim == 2 { 2.0 / l } else { (2.0 / l).sqrt() };
        let common = Complex64::from_polar(norm, self.rate * r2 / (2.0 * l));
        let chirp = |xi: f64| Complex64::i() * (self.rate * xi / l) * value;
        WaveEvaluation {
            psi: common * value,
            grad: [common * (gx + chirp(x[0])), if self.dim == 2 { common * (gy + chirp(x[1])) } else { zero }],
            dim: self.dim,
        }
    }
}

impl WaveState for ExpandingBoxState {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extent_on(&self, t: f64, _branch: Branch) -> Point {
        let l = self.width(t);
        [l, if self.dim == 2 { l } else { 0.0 }]
    }

    fn eval_on(&self, x: &Point, t: f64, _branch: Branch) -> Result<WaveEvaluation, StateError> {
        check_interior(x, self.extent_on(t, Branch::Before), self.dim, t)?;
        Ok(self.eval_interior(x, t))
    }

    fn peak_density(&self) -> f64 {
        self.peak
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{BoxGeometry, ModeSuperposition};
    use std::f64::consts::FRAC_1_SQRT_2;

    fn one(m: u32) -> ModeIndex {
        ModeIndex::one(m).unwrap()
    }

    fn mixed(rate: f64) -> ExpandingBoxState {
        let a = 1.0 / 3f64.sqrt();
        ExpandingBoxState::new(
            PI,
            rate,
            vec![
                (one(1), Complex64::new(a, 0.0)),
                (one(2), Complex64::from_polar(a, 0.4)),
                (one(3), Complex64::from_polar(a, 2.0)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn static_limit_matches_box_superposition() {
        let a = 1.0 / 3f64.sqrt();
        let modes: Vec<_> = (1..=3).map(|m| ModeIndex::one(m).unwrap()).collect();
        let reference = ModeSuperposition::new(
            BoxGeometry::line(PI).unwrap(),
            modes
                .iter()
                .zip([0.0, 0.4, 2.0])
                .map(|(&k, th)| (k, Complex64::from_polar(a, th)))
                .collect(),
        )
        .unwrap();
        let st = mixed(0.0);
        for (x, t) in [(0.3, 0.0), (1.9, 2.5), (2.7, 7.1)] {
            let e = st.eval(&[x, 0.0], t).unwrap();
            let r = reference.eval(&[x, 0.0], t).unwrap();
            assert!((e.psi - r.psi).norm() < 1e-13);
            assert!((e.grad[0] - r.grad[0]).norm() < 1e-13);
        }
    }

    #[test]
    fn static_square_matches_box_superposition() {
        let modes: Vec<_> = [(1, 1), (2, 1), (1, 3)].iter().map(|&(m, n)| ModeIndex::two(m, n).unwrap()).collect();
        let reference = ModeSuperposition::random_phases(BoxGeometry::square(PI).unwrap(), &modes, 6).unwrap();
        let st = ExpandingBoxState::new(PI, 0.0, reference.terms().to_vec()).unwrap();
        assert_eq!(st.dim(), 2);
        for (x, t) in [([0.3, 2.2], 0.0), ([1.9, 0.4], 2.5), ([2.7, 1.3], 7.1)] {
            let e = st.eval(&x, t).unwrap();
            let r = reference.eval(&x, t).unwrap();
            assert!((e.psi - r.psi).norm() < 1e-13);
            assert!((e.grad[0] - r.grad[0]).norm() < 1e-13);
            assert!((e.grad[1] - r.grad[1]).norm() < 1e-13);
        }
    }

    #[test]
    fn wall_moves_with_rate() {
        let st = mixed(2.0);
        assert_eq!(st.width(3.0), PI + 6.0);
        assert_eq!(st.scale_factor(0.0), 1.0);
        assert!(st.eval(&[PI + 1.0, 0.0], 0.0).is_err());
        assert!(st.eval(&[PI + 1.0, 0.0], 1.0).is_ok());
        let sq = ExpandingBoxState::new(PI, 2.0, vec![(ModeIndex::two(1, 2).unwrap(), Complex64::new(1.0, 0.0))]).unwrap();
        assert_eq!(sq.extent(3.0), [PI + 6.0, PI + 6.0]);
        assert!(sq.eval(&[1.0, PI + 1.0], 0.0).is_err());
        assert!(sq.eval(&[1.0, PI + 1.0], 1.0).is_ok());
    }

    #[test]
    fn rejects_invalid_parameters() {
        let single = vec![(one(1), Complex64::new(1.0, 0.0))];
        assert!(ExpandingBoxState::new(0.0, 1.0, single.clone()).is_err());
        assert!(ExpandingBoxState::new(1.0, -1.0, single).is_err());
        assert!(ExpandingBoxState::new(1.0, 1.0, vec![(one(1), Complex64::new(0.5, 0.0))]).is_err());
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        let mixed_dims = vec![(one(1), h), (ModeIndex::two(1, 1).unwrap(), h)];
        assert!(matches!(
            ExpandingBoxState::new(1.0, 1.0, mixed_dims),
            Err(StateError::DimensionMismatch { .. })
        ));
        assert!(ExpandingBoxState::new(1.0, 1.0, vec![(one(2), h), (one(2), h)]).is_err());
    }
}
