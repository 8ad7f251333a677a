//! Offline Lyapunov design: the matrices `P_i` and the default gains `K_i`
//! used whenever no attack is detected.

use crate::channel::ChannelState;
use crate::conic::{solve_lmi, LmiOutcome};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymMatrix};
use crate::lmi::{build_offline, OnlineBlocks, OFFLINE_MARGIN};
use crate::plant::PplsSystem;

/// Largest accepted condition number of a recovered `G_i`.
pub const MAX_G_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovDesign {
    pub alpha: Vec<f64>,
    /// `P_1..P_s`; `P_0` is `P_s`.
    pub p: Vec<SymMatrix>,
    /// `Q_i = P_i⁻¹`, kept alongside to avoid re-inverting.
    pub q: Vec<SymMatrix>,
    /// Default gains `K_i` (`n_u × n`).
    pub gains: Vec<Matrix>,
    /// `(G_i, Y_i)` when the design was synthesised here.
    pub factors: Option<Vec<(Matrix, Matrix)>>,
}

impl LyapunovDesign {
    /// Wraps externally supplied `P_i` and `K_i`.
    pub fn from_given(sys: &PplsSystem, alpha: Vec<f64>, p: Vec<SymMatrix>, gains: Vec<Matrix>) -> Result<Self> {
        let s = sys.num_modes();
        if alpha.len() != s || p.len() != s || gains.len() != s {
            return Err(Error::Dimension(format!(
                "design needs {s} rates, Lyapunov matrices and gains (got {}, {}, {})",
                alpha.len(),
                p.len(),
                gains.len()
            )));
        }
        if let Some(i) = alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::validation(format!("design.alpha[{i}]"), "must be positive"));
        }
        for (i, (pi, ki)) in p.iter().zip(&gains).enumerate() {
            if pi.dim() != sys.n() {
                return Err(Error::validation(format!("design.p[{i}]"), format!("must be {0}x{0}", sys.n())));
            }
            if ki.nrows() != sys.n_u() || ki.ncols() != sys.n() {
                return Err(Error::validation(
                    format!("design.k[{i}]"),
                    format!("must be {}x{}", sys.n_u(), sys.n()),
                ));
            }
        }
        let q = p
            .iter()
            .enumerate()
            .map(|(i, pi)| {
                linalg::invert(pi).map_err(|_| Error::validation(format!("design.p[{i}]"), "must be positive definite"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LyapunovDesign {
            alpha,
            p,
            q,
            gains,
            factors: None,
        })
    }

    pub fn num_modes(&self) -> usize {
        self.p.len()
    }

    /// `P_j` for `j ∈ 0..=s`, with `P_0 = P_s`.
    pub fn p(&self, j: usize) -> &SymMatrix {
        let s = self.p.len();
        &self.p[(j + s - 1) % s]
    }

    /// `P_{i−1}` for mode `i ∈ 1..=s`.
    pub fn p_prev(&self, i: usize) -> &SymMatrix {
        self.p(i - 1)
    }

    pub fn q(&self, j: usize) -> &SymMatrix {
        let s = self.q.len();
        &self.q[(j + s - 1) % s]
    }

    /// Default gain of mode `i ∈ 1..=s`.
    pub fn gain(&self, i: usize) -> &Matrix {
        &self.gains[i - 1]
    }
}

/// Runs the offline synthesis for the given rates.
pub fn design(sys: &PplsSystem, alpha: &[f64]) -> Result<LyapunovDesign> {
    let off = build_offline(sys, alpha, OFFLINE_MARGIN)?;
    let mut problem = off.problem;
    let mut outcome = solve_lmi(&problem)?;
    if let LmiOutcome::NumericalFailure(_) = outcome {
        problem.scale_margins(0.1);
        outcome = solve_lmi(&problem)?;
    }
    let sol = match outcome {
        LmiOutcome::Optimal(sol) => sol,
        LmiOutcome::Infeasible => {
            return Err(Error::Infeasible(format!(
                "no Lyapunov design for rates {alpha:?}; raise alpha on the unstable subsystems"
            )))
        }
        LmiOutcome::NumericalFailure(d) => return Err(Error::Solver(format!("offline synthesis: {d}"))),
    };
    let s = sys.num_modes();
    let mut p = Vec::with_capacity(s);
    let mut q = Vec::with_capacity(s);
    let mut gains = Vec::with_capacity(s);
    let mut factors = Vec::with_capacity(s);
    for i in 0..s {
        let qi = SymMatrix::symmetrized(&sol.matrix(&off.q[i]))?;
        let gi = sol.matrix(&off.g[i]);
        let yi = sol.matrix(&off.y[i]);
        let sv = gi.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < MAX_G_CONDITION) {
            return Err(Error::Conditioning { condition: cond });
        }
        let g_inv = gi
            .clone()
            .try_inverse()
            .ok_or(Error::Conditioning { condition: cond })?;
        gains.push(&yi * g_inv);
        p.push(linalg::invert(&qi)?);
        q.push(qi);
        factors.push((gi, yi));
    }
    let d = LyapunovDesign {
        alpha: alpha.to_vec(),
        p,
        q,
        gains,
        factors: Some(factors),
    };
    let report = validate(&d, sys);
    if !report.passed() {
        return Err(Error::Solver(format!("synthesised design failed re-verification: {report}")));
    }
    Ok(d)
}

/// Shrinks each rate by the factor 1.05 while the synthesis stays feasible.
/// Coordinates are swept in order until no rate can be lowered.
pub fn minimal_alpha(sys: &PplsSystem, start: &[f64], max_solves: usize) -> Result<Vec<f64>> {
    let mut alpha = start.to_vec();
    design(sys, &alpha)?;
    let mut solves = 1;
    let mut improved = true;
    while improved && solves < max_solves {
        improved = false;
        for i in 0..alpha.len() {
            if solves >= max_solves {
                break;
            }
            let mut trial = alpha.clone();
            trial[i] /= 1.05;
            solves += 1;
            match design(sys, &trial) {
                Ok(_) => {
                    alpha = trial;
                    improved = true;
                }
                Err(Error::Infeasible(_)) | Err(Error::Solver(_)) | Err(Error::Conditioning { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignCheck {
    pub name: String,
    /// Positive when the check passes with room to spare.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignReport {
    pub checks: Vec<DesignCheck>,
}

impl DesignReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: String, margin: f64, passed: bool) {
        self.checks.push(DesignCheck { name, margin, passed });
    }
}

impl std::fmt::Display for DesignReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<32} {:>14.6e} {}", c.name, c.margin, if c.passed { "ok" } else { "FAIL" })?;
        }
        Ok(())
    }
}

/// Re-checks every design invariant numerically.
pub fn validate(d: &LyapunovDesign, sys: &PplsSystem) -> DesignReport {
    let mut r = DesignReport::default();
    let s = sys.num_modes();
    if d.num_modes() != s {
        r.push("mode count".into(), -1.0, false);
        return r;
    }
    for i in 1..=s {
        let min_eig = linalg::eig_extrema(d.p(i)).map(|e| e.0).unwrap_or(f64::NEG_INFINITY);
        r.push(format!("P{i} positive definite"), min_eig, min_eig > 0.0);

        let resid = (d.p(i).as_matrix() * d.q(i).as_matrix() - Matrix::identity(sys.n(), sys.n())).amax();
        r.push(format!("Q{i} inverts P{i}"), 1e-6 - resid, resid < 1e-6);

        let t = sys.dwell(i) as f64;
        let growth = d.p_prev(i).lin_comb(t + 1.0, d.p(i), -1.0);
        let g_min = linalg::eig_extrema(&growth).map(|e| e.0).unwrap_or(f64::NEG_INFINITY);
        r.push(format!("(T{i}+1)P{} - P{i} positive", i - 1), g_min, g_min > 0.0);

        let rate = OnlineBlocks::new(sys, d, i)
            .and_then(|b| b.fixed_beta(&b.closed_loop(d.gain(i), &ChannelState::all_ones(sys.n()))));
        let bound = d.alpha[i - 1] * (1.0 + 1e-6);
        match rate {
            Ok(beta) => r.push(format!("rate {i} within alpha"), bound - beta, beta <= bound),
            Err(_) => r.push(format!("rate {i} within alpha"), f64::NEG_INFINITY, false),
        }

        if let Some(f) = &d.factors {
            let (g, y) = &f[i - 1];
            let err = match g.clone().try_inverse() {
                Some(g_inv) => (y * g_inv - d.gain(i)).amax(),
                None => f64::INFINITY,
            };
            r.push(format!("K{i} = Y{i} G{i}^-1"), 1e-8 - err, err <= 1e-8 * d.gain(i).amax().max(1.0));
        }
    }
    r
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::plant::{lyapunov_value, Subsystem, SystemState};
    use crate::scenario::Scenario;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference system with the reference Lyapunov matrices and gains.
    pub(crate) fn reference_system_and_design() -> (PplsSystem, LyapunovDesign) {
        let sc = Scenario::bundled("paper_example").unwrap();
        let sys = sc.system().unwrap();
        let d = sc.given_design(&sys).unwrap().expect("bundled scenario carries a design");
        (sys, d)
    }

    #[test]
    fn given_design_validates() {
        let (sys, d) = reference_system_and_design();
        let report = validate(&d, &sys);
        assert!(report.passed(), "{report}");
        assert!(d.p.iter().all(|p| linalg::eig_extrema(p).unwrap().0 > 0.0));
    }

    #[test]
    fn negative_controls() {
        let (sys, d) = reference_system_and_design();
        let mut flipped = d.clone();
        flipped.p[1] = flipped.p[1].lin_comb(-1.0, &flipped.p[1], 0.0);
        assert!(!validate(&flipped, &sys).passed());

        let mut shuffled = d.clone();
        shuffled.gains.rotate_left(1);
        let report = validate(&shuffled, &sys);
        assert!(report.checks.iter().any(|c| c.name.starts_with("rate") && !c.passed));
    }

    #[test]
    fn synthesis_on_reference_system() {
        let (sys, _) = reference_system_and_design();
        let d = design(&sys, &[1.3, 0.4, 0.3]).unwrap();
        assert!(validate(&d, &sys).passed());

        // attack-free closed loop from the reference initial state contracts
        // by at most the product of the per-step rates over one period
        let mut st = SystemState::new(0, vec![2.0, 3.2, 1.3, 3.0]);
        let v0 = lyapunov_value(&sys, &d, &st);
        let ones = ChannelState::all_ones(4);
        for _ in 0..sys.period() {
            let i = sys.mode_at(st.k).index;
            st = sys.step(&st, d.gain(i), &ones).unwrap();
        }
        let bound = 1.3f64.powi(4) * 0.4f64.powi(5) * 0.3f64.powi(6);
        assert!(lyapunov_value(&sys, &d, &st) <= bound * v0 * (1.0 + 1e-5));
    }

    #[test]
    fn trivial_single_subsystem() {
        let sys = PplsSystem::new(
            vec![Subsystem {
                a: Matrix::from_element(1, 1, 0.1),
                b: Matrix::identity(1, 1),
            }],
            vec![1],
        )
        .unwrap();
        let d = design(&sys, &[1.0]).unwrap();
        assert!(validate(&d, &sys).passed());
    }

    #[test]
    fn infeasible_rates_are_reported() {
        let sys = PplsSystem::new(
            vec![Subsystem {
                a: Matrix::from_element(1, 1, 2.0),
                b: Matrix::zeros(1, 1),
            }],
            vec![2],
        )
        .unwrap();
        assert!(matches!(design(&sys, &[1.0]), Err(Error::Infeasible(_))));
    }

    #[test]
    fn lyapunov_rate_holds_on_random_runs() {
        let (sys, d) = reference_system_and_design();
        let ones = ChannelState::all_ones(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut st = SystemState::new(0, x);
            for _ in 0..3 * sys.period() {
                let i = sys.mode_at(st.k).index;
                let v0 = lyapunov_value(&sys, &d, &st);
                let next = sys.step(&st, d.gain(i), &ones).unwrap();
                let v1 = lyapunov_value(&sys, &d, &next);
                assert!(v1 <= d.alpha[i - 1] * v0 * (1.0 + 1e-6) + 1e-300);
                st = next;
            }
        }
    }

    #[test]
    fn lyapunov_value_is_positive_and_interpolates() {
        let (sys, d) = reference_system_and_design();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(0..45);
            let st = SystemState::new(k, x);
            if st.x.norm() > 1e-9 {
                assert!(lyapunov_value(&sys, &d, &st) > 0.0);
            }
        }
        // phase 0 of mode 2 equals the P_1 form exactly
        let st = SystemState::new(4, vec![1.0, -1.0, 0.5, 2.0]);
        assert_eq!(lyapunov_value(&sys, &d, &st), d.p(1).quad_form(&st.x));
        assert_eq!(lyapunov_value(&sys, &d, &SystemState::new(2, vec![0.0; 4])), 0.0);
    }

    #[test]
    fn mid_dwell_value_lies_between_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let p0 = SymMatrix::symmetrized(&(&a * a.transpose() + Matrix::identity(3, 3))).unwrap();
            let b = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let p1 = SymMatrix::symmetrized(&(p0.as_matrix() + &b * b.transpose())).unwrap();
            let sys = PplsSystem::new(
                vec![
                    Subsystem {
                        a: Matrix::identity(3, 3),
                        b: Matrix::zeros(3, 1),
                    };
                    2
                ],
                vec![4, 4],
            )
            .unwrap();
            // P_0 = P_2 = p0, P_1 = p1: mode 1 interpolates p0 → p1
            let d = LyapunovDesign::from_given(&sys, vec![1.0, 1.0], vec![p1.clone(), p0.clone()], vec![Matrix::zeros(1, 3); 2])
                .unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let st = SystemState::new(2, x);
            let v = lyapunov_value(&sys, &d, &st);
            assert!(v >= p0.quad_form(&st.x) - 1e-12 && v <= p1.quad_form(&st.x) + 1e-12);
        }
    }
}
