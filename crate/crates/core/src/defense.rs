//! Online defense: at an attacked step, choose the channel state, the
//! bandwidth allocation realising it and the gain minimising the
//! per-step Lyapunov rate `β`.
//!
//! The mixed-integer problem is solved exactly by enumerating channel
//! states. For a fixed state the problem is a small SDP in `(β, K)` whose
//! answer does not depend on the attack, so results are cached per
//! `(mode, state)` and the online work is feasibility filtering plus lookup.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::channel::{enabling_state, AttackFlow, BandwidthAlloc, ChannelState, NetworkConfig};
use crate::conic::{solve_lmi, solve_lmi_with, LmiOutcome, SolveSettings};
use crate::design::LyapunovDesign;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lmi::{build_online, OnlineBlocks};
use crate::plant::PplsSystem;
use crate::worst_case::StateBetaTable;

/// Relative tolerance under which two rates count as equal.
pub const TIE_TOL: f64 = 1e-6;

pub fn tie_tol(beta: f64) -> f64 {
    TIE_TOL * beta.abs().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    /// Smallest rate certified for `gain`: both bulked inequalities are
    /// re-evaluated as generalized eigenvalues at the returned gain.
    pub beta: f64,
    pub gain: Matrix,
    /// Objective reported by the SDP, before re-evaluation.
    pub sdp_beta: f64,
}

/// Per-state online problem solver with a `(mode, state)` cache.
pub struct OnlineSolver {
    sys: PplsSystem,
    design: LyapunovDesign,
    gain_box: Option<f64>,
    blocks: Vec<OnlineBlocks>,
    cache: Mutex<HashMap<(usize, u32), OnlineResult>>,
}

impl OnlineSolver {
    pub fn new(sys: &PplsSystem, design: &LyapunovDesign, gain_box: Option<f64>) -> Result<Self> {
        let blocks = (1..=sys.num_modes())
            .map(|i| OnlineBlocks::new(sys, design, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(OnlineSolver {
            sys: sys.clone(),
            design: design.clone(),
            gain_box,
            blocks,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn system(&self) -> &PplsSystem {
        &self.sys
    }

    pub fn design(&self) -> &LyapunovDesign {
        &self.design
    }

    pub fn gain_box(&self) -> Option<f64> {
        self.gain_box
    }

    pub fn blocks(&self, i: usize) -> &OnlineBlocks {
        &self.blocks[i - 1]
    }

    /// Optimal `(β, K)` for mode `i` under channel state `l`.
    pub fn solve(&self, i: usize, l: &ChannelState) -> Result<OnlineResult> {
        let key = (i, l.mask());
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let res = self.solve_uncached(i, l)?;
        self.cache.lock().unwrap().insert(key, res.clone());
        Ok(res)
    }

    fn solve_uncached(&self, i: usize, l: &ChannelState) -> Result<OnlineResult> {
        let blocks = self.blocks(i);
        let lmi = build_online(blocks, l, self.gain_box)?;
        if !lmi.has_gain_vars() {
            // nothing to optimise: the rate of the open-loop matrix is exact
            let beta = blocks.fixed_beta(&blocks.a)?;
            return Ok(OnlineResult {
                beta,
                gain: Matrix::zeros(blocks.n_u(), blocks.n()),
                sdp_beta: beta,
            });
        }
        let mut outcome = solve_lmi(&lmi.problem)?;
        if let LmiOutcome::NumericalFailure(_) = outcome {
            outcome = solve_lmi_with(&lmi.problem, &SolveSettings { max_iter: 400, tol: 1e-7 })?;
        }
        match outcome {
            LmiOutcome::Optimal(sol) => {
                let gain = lmi.gain(&sol);
                let beta = blocks.fixed_beta(&blocks.closed_loop(&gain, l))?;
                Ok(OnlineResult {
                    beta,
                    gain,
                    sdp_beta: sol.value(lmi.beta),
                })
            }
            LmiOutcome::Infeasible => Err(Error::Solver(format!("online problem for mode {i}, state {l} reported infeasible"))),
            LmiOutcome::NumericalFailure(d) => Err(Error::Solver(format!("online problem for mode {i}, state {l}: {d}"))),
        }
    }

    /// Optimal rates of all `2ⁿ` states of mode `i`.
    pub fn beta_table(&self, i: usize) -> Result<StateBetaTable> {
        let n = self.sys.n();
        let values = ChannelState::all(n)
            .map(|l| self.solve(i, &l).map(|r| r.beta))
            .collect::<Result<Vec<_>>>()?;
        StateBetaTable::new(n, values)
    }

    /// Rate of mode `i` with a fixed gain.
    pub fn fixed_gain_beta(&self, i: usize, gain: &Matrix, l: &ChannelState) -> Result<f64> {
        let b = self.blocks(i);
        b.fixed_beta(&b.closed_loop(gain, l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseDecision {
    pub w: BandwidthAlloc,
    pub l: ChannelState,
    pub gain: Matrix,
    pub beta: f64,
    pub attacked: bool,
}

/// Non-zero channel states the defender can realise against `attack`:
/// enabled channels pass the delay test and their needs fit the bandwidth;
/// disabled channels can actually be switched off (the delay test fails,
/// or their need is positive so a zero allocation fails it).
pub fn feasible_states(cfg: &NetworkConfig, w_prev: &BandwidthAlloc, attack: &AttackFlow) -> Vec<ChannelState> {
    let n = cfg.n();
    let delay: Vec<bool> = (0..n).map(|j| cfg.delay_ok(j, w_prev.0[j], attack.0[j])).collect();
    let need: Vec<f64> = (0..n).map(|j| cfg.need(j, attack.0[j])).collect();
    ChannelState::all(n)
        .filter(|l| !l.is_zero())
        .filter(|l| {
            (0..n).all(|j| if l.get(j) { delay[j] } else { !delay[j] || need[j] > 0.0 })
                && l.enabled().map(|j| need[j]).sum::<f64>() <= cfg.total_bandwidth
        })
        .collect()
}

/// Enabled channels get their need plus an equal share of the surplus;
/// disabled channels get nothing.
pub fn allocation_for(cfg: &NetworkConfig, l: &ChannelState, attack: &AttackFlow) -> BandwidthAlloc {
    let needs: f64 = l.enabled().map(|j| cfg.need(j, attack.0[j])).sum();
    let share = if l.count() > 0 {
        ((cfg.total_bandwidth - needs) / l.count() as f64).max(0.0)
    } else {
        0.0
    };
    BandwidthAlloc(
        (0..cfg.n())
            .map(|j| if l.get(j) { cfg.need(j, attack.0[j]) + share } else { 0.0 })
            .collect(),
    )
}

/// Index of the preferred candidate: smallest rate, then more enabled
/// channels, then the lexicographically smallest state.
pub fn pick_best(cands: &[(ChannelState, f64)]) -> Option<usize> {
    let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = tie_tol(min);
    cands
        .iter()
        .enumerate()
        .filter(|(_, c)| c.1 <= min + tol)
        .min_by(|(_, a), (_, b)| b.0.count().cmp(&a.0.count()).then_with(|| a.0.cmp(&b.0)))
        .map(|(idx, _)| idx)
}

fn check_realised(cfg: &NetworkConfig, w_prev: &BandwidthAlloc, d: &DefenseDecision, attack: &AttackFlow) -> Result<()> {
    let got = enabling_state(cfg, w_prev, &d.w, attack);
    if got != d.l {
        return Err(Error::Solver(format!(
            "allocation {:?} realises {got} instead of the chosen state {}",
            d.w.0, d.l
        )));
    }
    Ok(())
}

/// Decision at an unattacked step: equal split, default gain, design rate.
pub fn nominal(solver: &OnlineSolver, cfg: &NetworkConfig, i: usize, w_prev: &BandwidthAlloc) -> Result<DefenseDecision> {
    let n = cfg.n();
    let w = cfg.equal_split();
    let l = enabling_state(cfg, w_prev, &w, &AttackFlow::zero(n));
    let gain = solver.design().gain(i).clone();
    let beta = if l == ChannelState::all_ones(n) {
        solver.design().alpha[i - 1]
    } else {
        solver.fixed_gain_beta(i, &gain, &l)?
    };
    Ok(DefenseDecision {
        w,
        l,
        gain,
        beta,
        attacked: false,
    })
}

/// Cross-layered decision: joint choice of state, allocation and gain.
pub fn defend(solver: &OnlineSolver, cfg: &NetworkConfig, i: usize, w_prev: &BandwidthAlloc, attack: &AttackFlow) -> Result<DefenseDecision> {
    if attack.is_zero() {
        return nominal(solver, cfg, i, w_prev);
    }
    let states = feasible_states(cfg, w_prev, attack);
    let cands = states
        .into_iter()
        .map(|l| solver.solve(i, &l).map(|r| (l, r.beta)))
        .collect::<Result<Vec<_>>>()?;
    let best = pick_best(&cands).ok_or_else(|| {
        Error::Infeasible(format!("no channel can be enabled against attack {:?} in mode {i}", attack.0))
    })?;
    let l = cands[best].0.clone();
    let res = solver.solve(i, &l)?;
    let d = DefenseDecision {
        w: allocation_for(cfg, &l, attack),
        l,
        gain: res.gain,
        beta: res.beta,
        attacked: true,
    };
    check_realised(cfg, w_prev, &d, attack)?;
    Ok(d)
}

/// Bandwidth fixed at the normal flow; only the gain adapts. All channels
/// may jam, in which case the plant coasts open loop.
pub fn strategy_a(solver: &OnlineSolver, cfg: &NetworkConfig, i: usize, w_prev: &BandwidthAlloc, attack: &AttackFlow) -> Result<DefenseDecision> {
    let w = cfg.normal_allocation();
    let l = enabling_state(cfg, w_prev, &w, attack);
    if attack.is_zero() {
        let gain = solver.design().gain(i).clone();
        let beta = if l == ChannelState::all_ones(cfg.n()) {
            solver.design().alpha[i - 1]
        } else {
            solver.fixed_gain_beta(i, &gain, &l)?
        };
        return Ok(DefenseDecision {
            w,
            l,
            gain,
            beta,
            attacked: false,
        });
    }
    let res = solver.solve(i, &l)?;
    let gain = if l.is_zero() { solver.design().gain(i).clone() } else { res.gain };
    Ok(DefenseDecision {
        w,
        l,
        gain,
        beta: res.beta,
        attacked: true,
    })
}

/// Gain fixed at the default; only the allocation adapts.
pub fn strategy_b(solver: &OnlineSolver, cfg: &NetworkConfig, i: usize, w_prev: &BandwidthAlloc, attack: &AttackFlow) -> Result<DefenseDecision> {
    if attack.is_zero() {
        return nominal(solver, cfg, i, w_prev);
    }
    let gain = solver.design().gain(i).clone();
    let cands = feasible_states(cfg, w_prev, attack)
        .into_iter()
        .map(|l| solver.fixed_gain_beta(i, &gain, &l).map(|b| (l, b)))
        .collect::<Result<Vec<_>>>()?;
    let best = pick_best(&cands).ok_or_else(|| {
        Error::Infeasible(format!("no channel can be enabled against attack {:?} in mode {i}", attack.0))
    })?;
    let (l, beta) = cands[best].clone();
    let d = DefenseDecision {
        w: allocation_for(cfg, &l, attack),
        l,
        gain,
        beta,
        attacked: true,
    };
    check_realised(cfg, w_prev, &d, attack)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::tests::reference_network;
    use crate::design::tests::reference_system_and_design;
    use proptest::prelude::*;

    fn solver() -> OnlineSolver {
        let (sys, d) = reference_system_and_design();
        OnlineSolver::new(&sys, &d, Some(100.0)).unwrap()
    }

    #[test]
    fn feasible_state_examples() {
        let cfg = reference_network();
        let all = feasible_states(&cfg, &cfg.equal_split(), &AttackFlow::zero(4));
        assert_eq!(all.len(), 15);

        let jam1 = feasible_states(&cfg, &BandwidthAlloc::zero(4), &AttackFlow(vec![15.0, 0.0, 0.0, 0.0]));
        assert_eq!(jam1.len(), 7);
        assert!(jam1.iter().all(|l| !l.get(0)));

        let uniform = feasible_states(&cfg, &cfg.equal_split(), &AttackFlow(vec![5.0; 4]));
        assert_eq!(uniform.len(), 4 + 6);
        assert!(uniform.iter().all(|l| l.count() <= 2));
    }

    #[test]
    fn zero_need_channels_cannot_be_switched_off() {
        let mut cfg = reference_network();
        cfg.normal_flow[0] = 0.0;
        let states = feasible_states(&cfg, &cfg.equal_split(), &AttackFlow(vec![0.0, 5.0, 5.0, 5.0]));
        assert!(states.iter().all(|l| l.get(0)));
    }

    #[test]
    fn uniform_flood_channel_preferences() {
        let s = solver();
        let cfg = reference_network();
        let attack = AttackFlow(vec![5.0; 4]);
        for (mode, bits) in [(1, [0, 0, 1, 1]), (2, [0, 1, 0, 1]), (3, [1, 1, 0, 0])] {
            let d = defend(&s, &cfg, mode, &cfg.equal_split(), &attack).unwrap();
            assert_eq!(d.l, ChannelState::from_bits(&bits), "mode {mode}");
            assert_eq!(enabling_state(&cfg, &cfg.equal_split(), &d.w, &attack), d.l);
            assert!(d.w.total() <= cfg.total_bandwidth + 1e-12);
        }
        let d = defend(&s, &cfg, 1, &cfg.equal_split(), &attack).unwrap();
        assert!((d.beta - 1.2689).abs() < 5e-3);
    }

    #[test]
    fn unattacked_steps_use_the_default_gain() {
        let s = solver();
        let cfg = reference_network();
        for f in [defend, strategy_a, strategy_b] {
            let d = f(&s, &cfg, 2, &cfg.equal_split(), &AttackFlow::zero(4)).unwrap();
            assert!(!d.attacked);
            assert_eq!(d.l, ChannelState::all_ones(4));
            assert_eq!(&d.gain, s.design().gain(2));
            assert_eq!(d.beta, 0.4);
        }
    }

    #[test]
    fn strategy_a_jams_everything_under_uniform_flow() {
        let s = solver();
        let cfg = reference_network();
        let d = strategy_a(&s, &cfg, 1, &cfg.equal_split(), &AttackFlow(vec![5.0; 4])).unwrap();
        assert!(d.l.is_zero());
        assert!((d.beta - 2.0661).abs() < 5e-3);
    }

    #[test]
    fn optimality_against_exhaustive_solves() {
        let s = solver();
        let cfg = reference_network();
        let attack = AttackFlow(vec![0.0, 7.0, 0.0, 13.0]);
        let w_prev = BandwidthAlloc(vec![2.0, 3.0, 5.0, 0.0]);
        for mode in 1..=3 {
            let d = defend(&s, &cfg, mode, &w_prev, &attack).unwrap();
            let brute = feasible_states(&cfg, &w_prev, &attack)
                .iter()
                .map(|l| s.solve(mode, l).unwrap().beta)
                .fold(f64::INFINITY, f64::min);
            assert!((d.beta - brute).abs() <= 1e-6 * brute.max(1.0));
        }
    }

    #[test]
    fn monotone_in_channel_state() {
        let s = solver();
        let table = s.beta_table(2).unwrap();
        for l in ChannelState::all(4) {
            for j in 0..4 {
                if !l.get(j) {
                    let mut sup = l.clone();
                    sup.set(j, true);
                    assert!(table.get(&sup) <= table.get(&l) + 1e-6, "{sup} vs {l}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn decisions_are_consistent_and_dominant(raw in prop::collection::vec(0.0f64..15.0, 4),
                                                 wp in prop::collection::vec(0.0f64..5.0, 4), mode in 1usize..=3) {
            let s = solver();
            let cfg = reference_network();
            let total: f64 = raw.iter().sum();
            let scale = if total > 20.0 { 20.0 / total } else { 1.0 };
            let attack = AttackFlow(raw.iter().map(|v| v * scale).collect());
            let w_prev = BandwidthAlloc(wp);
            let d = defend(&s, &cfg, mode, &w_prev, &attack).unwrap();
            prop_assert_eq!(enabling_state(&cfg, &w_prev, &d.w, &attack), d.l.clone());
            prop_assert!(d.l.count() >= 1);
            let a = strategy_a(&s, &cfg, mode, &w_prev, &attack).unwrap();
            let b = strategy_b(&s, &cfg, mode, &w_prev, &attack).unwrap();
            prop_assert!(d.beta <= a.beta + tie_tol(a.beta));
            prop_assert!(d.beta <= b.beta + tie_tol(b.beta));
        }
    }
}
