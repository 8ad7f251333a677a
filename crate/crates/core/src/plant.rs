//! The switched plant: subsystems cycling with fixed dwell-times,
//! `x(k+1) = (A_i + B_i K L) x(k)`.
//!
//! Mode indices are 1-based (`1..=s`) throughout the public API; the phase
//! within a dwell interval is 0-based.

use nalgebra::DVector;

use crate::channel::ChannelState;
use crate::design::LyapunovDesign;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub a: Matrix,
    pub b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PplsSystem {
    subsystems: Vec<Subsystem>,
    dwell: Vec<usize>,
    /// Switching offsets `k_0 = 0, k_1, …, k_s = T`.
    offsets: Vec<usize>,
    n: usize,
    n_u: usize,
}

/// Position inside the period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// 1-based subsystem index.
    pub index: usize,
    /// Steps since the subsystem became active.
    pub phase: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub k: usize,
    pub x: DVector<f64>,
}

impl SystemState {
    pub fn new(k: usize, x: Vec<f64>) -> Self {
        SystemState {
            k,
            x: DVector::from_vec(x),
        }
    }
}

impl PplsSystem {
    pub fn new(subsystems: Vec<Subsystem>, dwell: Vec<usize>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::InvalidInput("system needs at least one subsystem".into()));
        }
        if dwell.len() != subsystems.len() {
            return Err(Error::Dimension(format!(
                "{} subsystems but {} dwell-times",
                subsystems.len(),
                dwell.len()
            )));
        }
        if dwell.contains(&0) {
            return Err(Error::InvalidInput("dwell-times must be positive".into()));
        }
        let n = subsystems[0].a.nrows();
        let n_u = subsystems[0].b.ncols();
        for (i, sub) in subsystems.iter().enumerate() {
            if sub.a.nrows() != n || sub.a.ncols() != n {
                return Err(Error::Dimension(format!("A_{} must be {n}x{n}", i + 1)));
            }
            if sub.b.nrows() != n || sub.b.ncols() != n_u {
                return Err(Error::Dimension(format!("B_{} must be {n}x{n_u}", i + 1)));
            }
            if sub.a.iter().chain(sub.b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("subsystem {} has non-finite entries", i + 1)));
            }
        }
        let mut offsets = vec![0];
        for &t in &dwell {
            offsets.push(offsets.last().unwrap() + t);
        }
        Ok(PplsSystem {
            subsystems,
            dwell,
            offsets,
            n,
            n_u,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn num_modes(&self) -> usize {
        self.subsystems.len()
    }

    pub fn period(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Dwell-time `T_i` of mode `i` (1-based).
    pub fn dwell(&self, i: usize) -> usize {
        self.dwell[i - 1]
    }

    pub fn dwell_times(&self) -> &[usize] {
        &self.dwell
    }

    /// Subsystem `i` (1-based).
    pub fn subsystem(&self, i: usize) -> &Subsystem {
        &self.subsystems[i - 1]
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn mode_at(&self, k: usize) -> Mode {
        let r = k % self.period();
        // offsets is sorted; find the interval [k_{i-1}, k_i) containing r
        let i = self.offsets.partition_point(|&o| o <= r);
        Mode {
            index: i,
            phase: r - self.offsets[i - 1],
        }
    }

    /// `A_i + B_i K diag(L)`.
    pub fn closed_loop(&self, i: usize, gain: &Matrix, l: &ChannelState) -> Result<Matrix> {
        if gain.nrows() != self.n_u || gain.ncols() != self.n {
            return Err(Error::Dimension(format!(
                "gain must be {}x{}, got {}x{}",
                self.n_u,
                self.n,
                gain.nrows(),
                gain.ncols()
            )));
        }
        if l.len() != self.n {
            return Err(Error::Dimension(format!("channel state of length {} for n = {}", l.len(), self.n)));
        }
        let sub = self.subsystem(i);
        Ok(&sub.a + &sub.b * gain * l.diag())
    }

    pub fn step(&self, st: &SystemState, gain: &Matrix, l: &ChannelState) -> Result<SystemState> {
        if st.x.len() != self.n {
            return Err(Error::Dimension(format!("state of length {} for n = {}", st.x.len(), self.n)));
        }
        let m = self.closed_loop(self.mode_at(st.k).index, gain, l)?;
        Ok(SystemState {
            k: st.k + 1,
            x: m * &st.x,
        })
    }
}

/// `P_i(k)`: linear interpolation from `P_{i−1}` to `P_i` across the dwell of mode `i`.
pub fn interpolated_p(sys: &PplsSystem, design: &LyapunovDesign, mode: Mode) -> SymMatrix {
    let t = sys.dwell(mode.index) as f64;
    let w = mode.phase as f64 / t;
    design.p_prev(mode.index).lin_comb(1.0 - w, design.p(mode.index), w)
}

/// `V(k) = x(k)ᵀ P_i(k) x(k)`.
pub fn lyapunov_value(sys: &PplsSystem, design: &LyapunovDesign, st: &SystemState) -> f64 {
    interpolated_p(sys, design, sys.mode_at(st.k)).quad_form(&st.x)
}

/// `V_i(k+1)` evaluated with mode `i`'s interpolation (phase may equal `T_i`).
pub fn lyapunov_value_at_phase(sys: &PplsSystem, design: &LyapunovDesign, mode: Mode, x: &DVector<f64>) -> f64 {
    interpolated_p(sys, design, mode).quad_form(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_mode() -> PplsSystem {
        let sub = |s: f64| Subsystem {
            a: Matrix::identity(2, 2) * s,
            b: Matrix::from_row_slice(2, 1, &[1.0, 0.5]),
        };
        PplsSystem::new(vec![sub(1.1), sub(0.9), sub(1.3)], vec![4, 5, 6]).unwrap()
    }

    #[test]
    fn mode_schedule() {
        let sys = three_mode();
        assert_eq!(sys.period(), 15);
        assert_eq!(sys.mode_at(0), Mode { index: 1, phase: 0 });
        assert_eq!(sys.mode_at(7), Mode { index: 2, phase: 3 });
        assert_eq!(sys.mode_at(15), Mode { index: 1, phase: 0 });
        assert_eq!(sys.mode_at(14), Mode { index: 3, phase: 5 });
        assert_eq!(sys.mode_at(9), Mode { index: 3, phase: 0 });
    }

    #[test]
    fn mode_schedule_is_periodic() {
        let sys = three_mode();
        for k in 0..45 {
            assert_eq!(sys.mode_at(k), sys.mode_at(k + sys.period()));
        }
    }

    #[test]
    fn equilibrium_and_open_loop() {
        let sys = three_mode();
        let k = Matrix::from_row_slice(1, 2, &[0.3, -0.2]);
        let l = ChannelState::all_ones(2);
        let zero = SystemState::new(3, vec![0.0, 0.0]);
        assert_eq!(sys.step(&zero, &k, &l).unwrap().x, DVector::zeros(2));
        let x = SystemState::new(5, vec![1.0, -2.0]);
        let next = sys.step(&x, &Matrix::zeros(1, 2), &l).unwrap();
        assert_eq!(next.k, 6);
        assert_eq!(next.x, &sys.subsystem(2).a * &x.x);
    }

    #[test]
    fn dimension_errors() {
        let sys = three_mode();
        let st = SystemState::new(0, vec![1.0, 1.0]);
        assert!(sys.step(&st, &Matrix::zeros(2, 2), &ChannelState::all_ones(2)).is_err());
        assert!(sys.step(&st, &Matrix::zeros(1, 2), &ChannelState::all_ones(3)).is_err());
        assert!(PplsSystem::new(vec![], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn step_is_linear(x1 in prop::collection::vec(-5.0f64..5.0, 2), x2 in prop::collection::vec(-5.0f64..5.0, 2),
                          a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0usize..30, g in prop::collection::vec(-2.0f64..2.0, 2), mask in 0u32..4) {
            let sys = three_mode();
            let gain = Matrix::from_row_slice(1, 2, &g);
            let l = ChannelState::from_mask(mask, 2);
            let s1 = SystemState::new(k, x1.clone());
            let s2 = SystemState::new(k, x2.clone());
            let comb = SystemState { k, x: &s1.x * a + &s2.x * b };
            let lhs = sys.step(&comb, &gain, &l).unwrap().x;
            let rhs = sys.step(&s1, &gain, &l).unwrap().x * a + sys.step(&s2, &gain, &l).unwrap().x * b;
            prop_assert!((lhs - rhs).amax() < 1e-10);
        }
    }
}
