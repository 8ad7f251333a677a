//! Builders for the three LMI systems used by the pipeline: the offline
//! synthesis over `Q_i = P_i⁻¹, G_i, Y_i`, the per-channel-state online
//! problem over `(β, K)`, and the linearisation of the product `K·L`.

use crate::channel::ChannelState;
use crate::conic::{Affine, AffineMatrix, LmiProblem, LmiSolution, MatrixVar, RowKind};
use crate::design::LyapunovDesign;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymMatrix};
use crate::plant::{PplsSystem, SystemState, Subsystem};

/// Default strict-LMI margin for the offline problem. The normalisation
/// `Q_i ⪰ I` fixes the scale, so an absolute margin is meaningful.
pub const OFFLINE_MARGIN: f64 = 1e-6;

pub struct OfflineLmi {
    pub problem: LmiProblem,
    /// `Q_1..Q_s`; `Q_0` is `Q_s`.
    pub q: Vec<MatrixVar>,
    pub g: Vec<MatrixVar>,
    pub y: Vec<MatrixVar>,
    /// Upper bound `t` in `I ⪯ Q_i ⪯ t·I`, minimised.
    pub t: usize,
}

fn const_block(m: &Matrix) -> AffineMatrix {
    AffineMatrix::constant(m)
}

/// Both synthesis inequalities for every subsystem, normalised by
/// `I ⪯ Q_i ⪯ t·I` with `t` minimised to keep the recovered `P_i` well
/// conditioned.
pub fn build_offline(sys: &PplsSystem, alpha: &[f64], margin: f64) -> Result<OfflineLmi> {
    let s = sys.num_modes();
    if alpha.len() != s {
        return Err(Error::Dimension(format!("{} rates for {s} subsystems", alpha.len())));
    }
    if let Some(i) = alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::InvalidInput(format!("alpha[{i}] must be positive")));
    }
    let (n, n_u) = (sys.n(), sys.n_u());
    let mut p = LmiProblem::new();
    let q: Vec<MatrixVar> = (1..=s).map(|i| p.symmetric(&format!("Q{i}"), n)).collect();
    let g: Vec<MatrixVar> = (1..=s).map(|i| p.matrix(&format!("G{i}"), n, n, None)).collect();
    let y: Vec<MatrixVar> = (1..=s).map(|i| p.matrix(&format!("Y{i}"), n_u, n, None)).collect();
    let t = p.scalar("t", Some(1.0), None);
    let eye = Matrix::identity(n, n);

    for i in 1..=s {
        let Subsystem { a, b } = sys.subsystem(i);
        let ti = sys.dwell(i) as f64;
        let al = alpha[i - 1];
        let q_prev = q[(i + s - 2) % s].expr();
        let q_cur = q[i - 1].expr();
        let gi = g[i - 1].expr();
        let gsum = gi.transpose() + gi.clone();
        let closed = gi.left_mul(a) + y[i - 1].expr().left_mul(b);

        let m11 = (q_prev.clone() - gsum.clone()).scale((ti + 1.0) / ti * al);
        let first = AffineMatrix::blocks(vec![
            vec![Some(m11), Some(closed.transpose()), Some(gi.transpose())],
            vec![Some(closed.clone()), Some(-q_prev.clone()), None],
            vec![Some(gi.clone()), None, Some(q_cur.scale(-ti / al))],
        ]);
        p.add_lmi(format!("decrease-into-{i}"), first, margin);

        let m11 = q_cur.scale((ti - 1.0) / ti * al) + q_prev.scale(al / ti) - gsum.scale(al);
        let second = AffineMatrix::blocks(vec![
            vec![Some(m11), Some(closed.transpose())],
            vec![Some(closed), Some(-q_cur.clone())],
        ]);
        p.add_lmi(format!("decrease-within-{i}"), second, margin);

        // I − Q_i ⪯ 0 and Q_i − t·I ⪯ 0
        p.add_lmi_nsd(format!("Q{i}-lower"), const_block(&eye) - q_cur.clone());
        let mut upper = q_cur.clone();
        for d in 0..n {
            upper.get_mut(d, d).add_term(t, -1.0);
        }
        p.add_lmi_nsd(format!("Q{i}-upper"), upper);
    }
    p.minimize(Affine::var(t));
    Ok(OfflineLmi { problem: p, q, g, y, t })
}

/// Data for the online problem of one mode, with inverses precomputed.
#[derive(Debug, Clone)]
pub struct OnlineBlocks {
    pub a: Matrix,
    pub b: Matrix,
    pub p_prev: SymMatrix,
    pub p_cur: SymMatrix,
    pub p_prev_inv: SymMatrix,
    pub p_cur_inv: SymMatrix,
    /// `((T+1)P_{i−1} − P_i)/T`
    pub n_into: SymMatrix,
    /// `(P_{i−1} + (T−1)P_i)/T`
    pub n_within: SymMatrix,
}

impl OnlineBlocks {
    pub fn new(sys: &PplsSystem, design: &LyapunovDesign, i: usize) -> Result<Self> {
        let sub = sys.subsystem(i);
        let t = sys.dwell(i) as f64;
        let p_prev = design.p_prev(i).clone();
        let p_cur = design.p(i).clone();
        let n_into = p_prev.lin_comb((t + 1.0) / t, &p_cur, -1.0 / t);
        let n_within = p_prev.lin_comb(1.0 / t, &p_cur, (t - 1.0) / t);
        let (lo, _) = linalg::eig_extrema(&n_into)?;
        if lo <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "(T+1)P_prev − P must be positive definite for mode {i} (min eigenvalue {lo:.3e})"
            )));
        }
        Ok(OnlineBlocks {
            a: sub.a.clone(),
            b: sub.b.clone(),
            p_prev_inv: design.q(i - 1).clone(),
            p_cur_inv: design.q(i).clone(),
            p_prev,
            p_cur,
            n_into,
            n_within,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Smallest `β` such that both bulked inequalities hold for a fixed
    /// closed-loop matrix `m = A + B K L`.
    pub fn fixed_beta(&self, m: &Matrix) -> Result<f64> {
        let lhs_into = SymMatrix::symmetrized(&(m.transpose() * self.p_prev.as_matrix() * m))?;
        let lhs_within = SymMatrix::symmetrized(&(m.transpose() * self.p_cur.as_matrix() * m))?;
        let b1 = linalg::max_generalized_eig(&lhs_into, &self.n_into)?;
        let b2 = linalg::max_generalized_eig(&lhs_within, &self.n_within)?;
        Ok(b1.max(b2).max(0.0))
    }

    pub fn closed_loop(&self, gain: &Matrix, l: &ChannelState) -> Matrix {
        &self.a + &self.b * gain * l.diag()
    }
}

/// Online problem for one fixed channel state.
pub struct OnlineLmi {
    pub problem: LmiProblem,
    pub beta: usize,
    /// Gain entries: `Some(id)` for free entries, `None` for entries pinned
    /// at zero (columns of disabled channels, or everything when `B = 0`).
    pub gain_ids: Vec<Option<usize>>,
    n_u: usize,
    n: usize,
}

impl OnlineLmi {
    pub fn gain(&self, sol: &LmiSolution) -> Matrix {
        Matrix::from_fn(self.n_u, self.n, |p, q| self.gain_ids[p * self.n + q].map_or(0.0, |id| sol.value(id)))
    }

    pub fn has_gain_vars(&self) -> bool {
        self.gain_ids.iter().any(Option::is_some)
    }
}

fn online_lmis(p: &mut LmiProblem, blocks: &OnlineBlocks, beta: usize, closed: AffineMatrix) {
    for (name, nmat, inv) in [
        ("into", &blocks.n_into, &blocks.p_prev_inv),
        ("within", &blocks.n_within, &blocks.p_cur_inv),
    ] {
        let mut top = AffineMatrix::zeros(blocks.n(), blocks.n());
        for r in 0..blocks.n() {
            for c in 0..blocks.n() {
                top.get_mut(r, c).add_term(beta, -nmat[(r, c)]);
            }
        }
        let lmi = AffineMatrix::blocks(vec![
            vec![Some(top), Some(closed.transpose())],
            vec![Some(closed.clone()), Some(-const_block(inv))],
        ]);
        p.add_lmi_nsd(format!("rate-{name}"), lmi);
    }
}

/// Minimise `β` over `(β, K)` for a fixed `L`. `gain_box = Some(k̄)` boxes
/// every free gain entry to `[−k̄, k̄]`.
pub fn build_online(blocks: &OnlineBlocks, l: &ChannelState, gain_box: Option<f64>) -> Result<OnlineLmi> {
    let (n, n_u) = (blocks.n(), blocks.n_u());
    if l.len() != n {
        return Err(Error::Dimension(format!("channel state of length {} for n = {n}", l.len())));
    }
    if let Some(kb) = gain_box {
        if !(kb > 0.0) {
            return Err(Error::InvalidInput("gain bound must be positive".into()));
        }
    }
    let mut p = LmiProblem::new();
    let beta = p.scalar("beta", Some(0.0), None);
    let input_used = blocks.b.iter().any(|&v| v != 0.0);
    let bound = gain_box.map(|kb| (-kb, kb));
    let mut gain_ids = vec![None; n_u * n];
    let mut gain = AffineMatrix::zeros(n_u, n);
    if input_used {
        for q in l.enabled() {
            for r in 0..n_u {
                let id = p.scalar(format!("K[{r},{q}]"), bound.map(|b| b.0), bound.map(|b| b.1));
                gain_ids[r * n + q] = Some(id);
                *gain.get_mut(r, q) = Affine::var(id);
            }
        }
    }
    let closed = const_block(&blocks.a) + gain.left_mul(&blocks.b);
    online_lmis(&mut p, blocks, beta, closed);
    p.minimize(Affine::var(beta));
    Ok(OnlineLmi {
        problem: p,
        beta,
        gain_ids,
        n_u,
        n,
    })
}

/// Entrywise linearisation of `K·diag(L)` through `Q` with
/// `Q − k̄·𝟏·diag(L) = K·diag(L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductEncoding {
    pub gain_bound: f64,
    pub l: ChannelState,
}

pub fn build_product_encoding(gain_bound: f64, l: &ChannelState) -> Result<ProductEncoding> {
    if !(gain_bound > 0.0 && gain_bound.is_finite()) {
        return Err(Error::InvalidInput("gain bound must be positive".into()));
    }
    Ok(ProductEncoding {
        gain_bound,
        l: l.clone(),
    })
}

impl ProductEncoding {
    /// The four rows for one entry in column `col`, as `(q coeff, k coeff,
    /// constant, kind)` meaning `a·q + b·k + c (kind) 0`.
    pub fn entry_rows(&self, col: usize) -> [(f64, f64, f64, RowKind); 5] {
        let kb = self.gain_bound;
        let l = if self.l.get(col) { 1.0 } else { 0.0 };
        [
            (1.0, 0.0, 0.0, RowKind::Ge),
            (1.0, 0.0, -2.0 * kb, RowKind::Le),
            (1.0, 0.0, -2.0 * kb * l, RowKind::Le),
            (1.0, -1.0, -kb, RowKind::Le),
            (1.0, -1.0, kb - 2.0 * kb * l, RowKind::Ge),
        ]
    }

    pub fn entry_holds(&self, col: usize, q: f64, k: f64, tol: f64) -> bool {
        self.entry_rows(col).iter().all(|&(a, b, c, kind)| {
            let v = a * q + b * k + c;
            match kind {
                RowKind::Le => v <= tol,
                RowKind::Ge => v >= -tol,
                RowKind::Eq => v.abs() <= tol,
            }
        })
    }

    /// Feasible `q` for a given `k` in column `col`: `[lo, hi]`, empty if `lo > hi`.
    pub fn feasible_interval(&self, col: usize, k: f64) -> (f64, f64) {
        let kb = self.gain_bound;
        let l = if self.l.get(col) { 1.0 } else { 0.0 };
        let lo = 0.0f64.max(k - kb + 2.0 * kb * l);
        let hi = (2.0 * kb).min(2.0 * kb * l).min(k + kb);
        (lo, hi)
    }

    /// Adds `Q` with the encoding rows to `p`, tied to the existing gain
    /// variable `gain`. Returns `Q`.
    pub fn add_to(&self, p: &mut LmiProblem, gain: &MatrixVar) -> MatrixVar {
        let q = p.matrix("Qprod", gain.rows, gain.cols, Some((0.0, 2.0 * self.gain_bound)));
        for r in 0..gain.rows {
            for c in 0..gain.cols {
                for (a, b, cst, kind) in self.entry_rows(c) {
                    let mut e = Affine::constant(cst);
                    e.add_term(q.id(r, c), a);
                    e.add_term(gain.id(r, c), b);
                    p.add_linear(format!("prod[{r},{c}]"), e, kind);
                }
            }
        }
        q
    }
}

/// The online problem with `K·L` replaced by `Q − k̄·𝟏·L` and the product
/// rows. Solves the same problem as [`build_online`] with a gain box.
pub fn build_online_linearized(blocks: &OnlineBlocks, l: &ChannelState, gain_bound: f64) -> Result<(OnlineLmi, MatrixVar)> {
    let (n, n_u) = (blocks.n(), blocks.n_u());
    let enc = build_product_encoding(gain_bound, l)?;
    let mut p = LmiProblem::new();
    let beta = p.scalar("beta", Some(0.0), None);
    let gain = p.matrix("K", n_u, n, Some((-gain_bound, gain_bound)));
    let q = enc.add_to(&mut p, &gain);
    let mut kl = q.expr();
    for r in 0..n_u {
        for c in 0..n {
            if l.get(c) {
                kl.get_mut(r, c).constant -= gain_bound;
            }
        }
    }
    let closed = const_block(&blocks.a) + kl.left_mul(&blocks.b);
    online_lmis(&mut p, blocks, beta, closed);
    p.minimize(Affine::var(beta));
    let gain_ids = gain.ids().iter().map(|&id| Some(id)).collect();
    Ok((
        OnlineLmi {
            problem: p,
            beta,
            gain_ids,
            n_u,
            n,
        },
        q,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateViolation {
    pub k: usize,
    pub ratio: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateReport {
    pub steps: usize,
    pub violations: Vec<RateViolation>,
    /// Largest `V(k+1) / (rate·V(k))` seen.
    pub worst: f64,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `V(k+1) ≤ rate(k)·V(k)·(1 + 1e-6)` along a trajectory.
/// `rates[k]` is the rate claimed for the step from `states[k]`.
pub fn verify_design_rates(sys: &PplsSystem, design: &LyapunovDesign, states: &[SystemState], rates: &[f64]) -> RateReport {
    let mut report = RateReport::default();
    for (k, pair) in states.windows(2).enumerate().take(rates.len()) {
        let v0 = crate::plant::lyapunov_value(sys, design, &pair[0]);
        let v1 = crate::plant::lyapunov_value(sys, design, &pair[1]);
        report.steps += 1;
        let bound = rates[k] * v0;
        // V is positive definite, so v0 == 0 means x == 0 and v1 must be 0 too.
        let ratio = if bound > 0.0 { v1 / bound } else if v1 > 0.0 { f64::INFINITY } else { 0.0 };
        report.worst = report.worst.max(ratio);
        if v1 > bound * (1.0 + 1e-6) + f64::MIN_POSITIVE {
            report.violations.push(RateViolation {
                k: pair[0].k,
                ratio: if v0 > 0.0 { v1 / v0 } else { f64::INFINITY },
                rate: rates[k],
            });
        }
    }
    report
}

/// Checks the unbulked quadratic forms `MᵀP M − β·N ⪯ 0` for a solved `(β, K)`.
pub fn schur_forms_hold(blocks: &OnlineBlocks, gain: &Matrix, l: &ChannelState, beta: f64, slack: f64) -> bool {
    let m = blocks.closed_loop(gain, l);
    [(&blocks.p_prev, &blocks.n_into), (&blocks.p_cur, &blocks.n_within)]
        .iter()
        .all(|(p, nmat)| {
            let form = m.transpose() * p.as_matrix() * &m - nmat.as_matrix() * beta;
            match SymMatrix::symmetrized(&(-form)) {
                Ok(s) => linalg::is_psd(&s, slack * s.max_abs().max(1.0)),
                Err(_) => false,
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve_lmi, LmiOutcome};
    use crate::design::tests::reference_system_and_design;

    fn solve_beta(blocks: &OnlineBlocks, l: &ChannelState) -> (f64, Matrix) {
        let lmi = build_online(blocks, l, Some(100.0)).unwrap();
        match solve_lmi(&lmi.problem).unwrap() {
            LmiOutcome::Optimal(sol) => (sol.value(lmi.beta), lmi.gain(&sol)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn online_table_values_for_mode_one() {
        let (sys, design) = reference_system_and_design();
        let blocks = OnlineBlocks::new(&sys, &design, 1).unwrap();
        for (bits, want) in [([1, 1, 1, 1], 1.2689), ([0, 0, 0, 0], 2.0661), ([1, 1, 1, 0], 1.5039)] {
            let l = ChannelState::from_bits(&bits);
            let (beta, gain) = solve_beta(&blocks, &l);
            assert!((beta - want).abs() < 5e-3, "{l}: {beta} vs {want}");
            assert!(schur_forms_hold(&blocks, &gain, &l, beta, 1e-6));
            assert!((blocks.fixed_beta(&blocks.closed_loop(&gain, &l)).unwrap() - beta).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_input_matrix_makes_states_irrelevant() {
        let (sys, design) = reference_system_and_design();
        let mut blocks = OnlineBlocks::new(&sys, &design, 2).unwrap();
        blocks.b = Matrix::zeros(4, 2);
        let betas: Vec<f64> = ChannelState::all(4).map(|l| solve_beta(&blocks, &l).0).collect();
        for b in &betas {
            assert!((b - betas[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn linearized_route_matches_direct_route() {
        let (sys, design) = reference_system_and_design();
        let blocks = OnlineBlocks::new(&sys, &design, 3).unwrap();
        for bits in [[1, 1, 0, 0], [0, 1, 1, 0], [1, 1, 1, 1]] {
            let l = ChannelState::from_bits(&bits);
            let direct = solve_beta(&blocks, &l).0;
            let (lmi, _) = build_online_linearized(&blocks, &l, 100.0).unwrap();
            let lin = match solve_lmi(&lmi.problem).unwrap() {
                LmiOutcome::Optimal(sol) => sol.value(lmi.beta),
                other => panic!("{other:?}"),
            };
            assert!((direct - lin).abs() < 1e-5, "{l}: {direct} vs {lin}");
        }
    }

    #[test]
    fn product_encoding_pins_the_product() {
        let kb = 100.0;
        let enc = build_product_encoding(kb, &ChannelState::from_bits(&[0, 1])).unwrap();
        assert_eq!(enc.feasible_interval(0, 37.0), (0.0, 0.0));
        assert_eq!(enc.feasible_interval(1, -kb), (0.0, 0.0));
        for step in 0..21 {
            let k = -kb + step as f64 * kb / 10.0;
            for col in 0..2 {
                let l = col as f64;
                let (lo, hi) = enc.feasible_interval(col, k);
                assert_eq!(lo, hi, "unique q for k={k}, l={l}");
                assert!((lo - kb * l - k * l).abs() < 1e-12);
                assert!(enc.entry_holds(col, lo, k, 0.0));
                assert!(!enc.entry_holds(col, lo + 1e-3, k, 0.0));
                assert!(!enc.entry_holds(col, lo - 1e-3, k, 0.0));
            }
        }
        assert!(build_product_encoding(0.0, &ChannelState::zeros(1)).is_err());
    }

    #[test]
    fn offline_scalar_cases() {
        let sys = PplsSystem::new(
            vec![Subsystem {
                a: Matrix::from_element(1, 1, 0.5),
                b: Matrix::from_element(1, 1, 1.0),
            }],
            vec![1],
        )
        .unwrap();
        let off = build_offline(&sys, &[1.0], OFFLINE_MARGIN).unwrap();
        assert!(matches!(solve_lmi(&off.problem).unwrap(), LmiOutcome::Optimal(_)));

        let unstable = PplsSystem::new(
            vec![Subsystem {
                a: Matrix::from_element(1, 1, 2.0),
                b: Matrix::from_element(1, 1, 0.0),
            }],
            vec![1],
        )
        .unwrap();
        let off = build_offline(&unstable, &[1.0], OFFLINE_MARGIN).unwrap();
        assert!(!matches!(solve_lmi(&off.problem).unwrap(), LmiOutcome::Optimal(_)));
        assert!(build_offline(&unstable, &[0.0], OFFLINE_MARGIN).is_err());
    }

    #[test]
    fn rate_report_on_zero_and_corrupted_runs() {
        let (sys, design) = reference_system_and_design();
        let zero: Vec<SystemState> = (0..5).map(|k| SystemState::new(k, vec![0.0; 4])).collect();
        assert!(verify_design_rates(&sys, &design, &zero, &[1.0; 4]).passed());

        let mut states = vec![SystemState::new(0, vec![2.0, 3.2, 1.3, 3.0])];
        let mut rates = vec![];
        let bad = Matrix::from_element(2, 4, 3.0);
        for _ in 0..6 {
            let st = states.last().unwrap();
            let i = sys.mode_at(st.k).index;
            rates.push(design.alpha[i - 1]);
            states.push(sys.step(st, &bad, &ChannelState::all_ones(4)).unwrap());
        }
        assert!(!verify_design_rates(&sys, &design, &states, &rates).passed());
    }
}
