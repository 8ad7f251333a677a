//! Offline worst case of the online problem: the attacker picks an
//! admissible flow (with zero previous allocation), the defender answers
//! with the best realisable channel state, and we want the attacker's best
//! value `β̄`.
//!
//! The smart enumeration partitions attacks by the set `J` of channels they
//! jam through the delay test. Within a branch, channels in `J` are lost and
//! every other state can only be denied by overloading the bandwidth, which
//! is a linear condition on the attack. Candidates are tested in ascending
//! `β` order with one LP each.

mod oracle;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, NetworkConfig};
use crate::conic::{lp_feasible, LpOp, LpOutcome, LpProblem};
use crate::defense::tie_tol;
use crate::error::{Error, Result};

pub use oracle::{brute_force_worst_case, OracleResult};

/// Optimal online rate for each of the `2ⁿ` states, indexed by mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBetaTable {
    n: usize,
    values: Vec<f64>,
}

impl StateBetaTable {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != 1 << n {
            return Err(Error::Dimension(format!("{} rates for {} states", values.len(), 1usize << n)));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("rates must be finite and nonnegative".into()));
        }
        Ok(StateBetaTable { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, l: &ChannelState) -> f64 {
        self.values[l.mask() as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// States in ascending rate order (ties by mask).
    pub fn sorted(&self) -> Vec<(ChannelState, f64)> {
        let mut v: Vec<_> = ChannelState::all(self.n).map(|l| {
            let b = self.get(&l);
            (l, b)
        }).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.mask().cmp(&b.0.mask())));
        v
    }
}

/// How the safe-state test treats its equality boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// Budget term non-strict, per-channel-cap term strict. Reproduces the
    /// reference safe-state sets exactly.
    #[default]
    PaperTable,
    /// `W_Σ ≥ min{budget term, cap term}`, both non-strict.
    Formula,
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundaryMode::PaperTable => "paper-table",
            BoundaryMode::Formula => "formula",
        })
    }
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-table" => Ok(BoundaryMode::PaperTable),
            "formula" => Ok(BoundaryMode::Formula),
            _ => Err(Error::Parse(format!("unknown boundary mode `{s}`"))),
        }
    }
}

/// A set of channels the attacker can jam through the delay test at once.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForcePattern {
    pub jammed: ChannelState,
}

impl ForcePattern {
    /// The state with every undetermined entry set to 1.
    pub fn optimistic_state(&self) -> ChannelState {
        ChannelState::new(self.jammed.bits().iter().map(|&b| !b).collect())
    }

    pub fn forcing_cost(&self, cfg: &NetworkConfig) -> f64 {
        self.jammed.enabled().map(|j| cfg.force_jam_threshold(j).max(0.0)).sum()
    }

    pub fn is_disjoint(&self, l: &ChannelState) -> bool {
        !l.enabled().any(|j| self.jammed.get(j))
    }
}

impl fmt::Display for ForcePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (j, &b) in self.jammed.bits().iter().enumerate() {
            if j > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", if b { '0' } else { '?' })?;
        }
        write!(f, "]")
    }
}

/// All jam sets whose thresholds fit the per-channel caps and the budget,
/// including the empty set.
pub fn enumerate_force(cfg: &NetworkConfig) -> Vec<ForcePattern> {
    ChannelState::all(cfg.n())
        .filter(|jam| {
            let thr = |j: usize| cfg.force_jam_threshold(j).max(0.0);
            jam.enabled().all(|j| thr(j) <= cfg.attack_cap[j]) && jam.enabled().map(thr).sum::<f64>() <= cfg.attack_budget
        })
        .map(|jammed| ForcePattern { jammed })
        .collect()
}

/// States disjoint from the jam set that the defender reaches whatever the
/// attacker does with the rest of the budget.
pub fn enumerate_safe(cfg: &NetworkConfig, pattern: &ForcePattern, mode: BoundaryMode) -> Vec<ChannelState> {
    let spare = cfg.attack_budget - pattern.forcing_cost(cfg);
    ChannelState::all(cfg.n())
        .filter(|l| pattern.is_disjoint(l))
        .filter(|l| {
            let base: f64 = l.enabled().map(|h| cfg.normal_flow[h]).sum();
            let budget_term = spare + base;
            let cap_term: f64 = l.enabled().map(|h| cfg.normal_flow[h] + cfg.attack_cap[h]).sum();
            let w = cfg.total_bandwidth;
            match mode {
                BoundaryMode::PaperTable => w >= budget_term || w > cap_term,
                BoundaryMode::Formula => w >= budget_term.min(cap_term),
            }
        })
        .collect()
}

/// Outcome of one force-pattern branch.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchOutcome {
    /// No candidate state between the lower and upper bounds.
    Excluded,
    /// The branch cannot beat the global lower bound `β̃*`; it is reported at that bound.
    Floor(f64),
    /// The branch value, attained at `state`.
    Value { beta: f64, state: ChannelState },
}

impl BranchOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            BranchOutcome::Excluded => None,
            BranchOutcome::Floor(b) => Some(*b),
            BranchOutcome::Value { beta, .. } => Some(*beta),
        }
    }
}

/// One LP: can the attacker deny every state in `blocking` at once?
#[derive(Debug, Clone, PartialEq)]
pub struct BlockingTest {
    /// Rate level tested (all branch states at or below it must be denied).
    pub level: f64,
    pub candidate: Option<ChannelState>,
    pub blocking: Vec<ChannelState>,
    /// Attack flow denying them, when one exists.
    pub witness: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchResult {
    pub pattern: ForcePattern,
    pub safe: Vec<ChannelState>,
    /// Best safe rate; `None` when no state is safe (no upper filter).
    pub beta_hat: Option<f64>,
    /// Candidates in ascending rate order.
    pub s_opt: Vec<(ChannelState, f64)>,
    pub entry: Option<BlockingTest>,
    pub tests: Vec<BlockingTest>,
    pub outcome: BranchOutcome,
}

impl BranchResult {
    /// Attack flow realising the branch value, when the branch has one.
    pub fn witness(&self) -> Option<&Vec<f64>> {
        self.tests
            .iter()
            .rev()
            .chain(self.entry.iter())
            .find_map(|t| t.witness.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseResult {
    pub beta_bar: f64,
    pub beta_tilde: f64,
    pub branches: Vec<BranchResult>,
    /// Branch attaining `beta_bar`.
    pub worst_branch: Option<usize>,
}

impl WorstCaseResult {
    pub fn branch(&self, pattern: &str) -> Option<&BranchResult> {
        self.branches.iter().find(|b| b.pattern.to_string() == pattern)
    }

    pub fn witness(&self) -> Option<&Vec<f64>> {
        self.worst_branch.and_then(|i| self.branches[i].witness())
    }
}

/// Strict-row slack for the blocking LPs, scaled by the flow quantities.
pub fn blocking_eps(cfg: &NetworkConfig) -> f64 {
    1e-9 * (cfg.total_bandwidth + cfg.attack_budget).max(1.0)
}

/// Attack flow that jams `pattern` through the delay test and overloads the
/// bandwidth of every state in `blocking`, if one exists.
pub fn attacker_can_block(cfg: &NetworkConfig, pattern: &ForcePattern, blocking: &[ChannelState]) -> Result<Option<Vec<f64>>> {
    let n = cfg.n();
    let mut lp = LpProblem::new();
    for j in 0..n {
        lp.var(0.0, cfg.attack_cap[j]);
    }
    lp.row((0..n).map(|j| (j, 1.0)).collect(), LpOp::Le, cfg.attack_budget);
    for j in pattern.jammed.enabled() {
        lp.row(vec![(j, 1.0)], LpOp::Ge, cfg.force_jam_threshold(j));
    }
    for l in blocking {
        let base: f64 = l.enabled().map(|h| cfg.normal_flow[h]).sum();
        lp.row(l.enabled().map(|h| (h, 1.0)).collect(), LpOp::Gt, cfg.total_bandwidth - base);
    }
    Ok(match lp_feasible(&lp, blocking_eps(cfg))? {
        LpOutcome::Feasible(w) => Some(w),
        LpOutcome::Infeasible => None,
    })
}

fn blocking_set(table: &StateBetaTable, pattern: &ForcePattern, keep: impl Fn(f64) -> bool) -> Vec<ChannelState> {
    ChannelState::all(table.n())
        .filter(|l| pattern.is_disjoint(l) && keep(table.get(l)))
        .collect()
}

fn run_branch(cfg: &NetworkConfig, table: &StateBetaTable, pattern: &ForcePattern, beta_tilde: f64, mode: BoundaryMode) -> Result<BranchResult> {
    let safe = enumerate_safe(cfg, pattern, mode);
    let beta_hat = safe.iter().map(|l| table.get(l)).reduce(f64::min);
    let upper = beta_hat.unwrap_or(f64::INFINITY);
    let branch_states: Vec<(ChannelState, f64)> = table
        .sorted()
        .into_iter()
        .filter(|(l, _)| pattern.is_disjoint(l))
        .collect();
    let s_opt: Vec<(ChannelState, f64)> = branch_states
        .iter()
        .filter(|(_, b)| *b >= beta_tilde - tie_tol(beta_tilde) && *b <= upper + tie_tol(upper))
        .cloned()
        .collect();
    let mut result = BranchResult {
        pattern: pattern.clone(),
        safe,
        beta_hat,
        s_opt: s_opt.clone(),
        entry: None,
        tests: vec![],
        outcome: BranchOutcome::Excluded,
    };
    let Some((_, first)) = s_opt.first().cloned() else {
        return Ok(result);
    };

    // Everything strictly below the first candidate must be deniable,
    // otherwise the branch is worth less than the global lower bound.
    let below = blocking_set(table, pattern, |b| b < first - tie_tol(first));
    let entry_witness = attacker_can_block(cfg, pattern, &below)?;
    let entry_ok = entry_witness.is_some();
    result.entry = Some(BlockingTest {
        level: first,
        candidate: None,
        blocking: below,
        witness: entry_witness,
    });
    if !entry_ok {
        result.outcome = BranchOutcome::Floor(beta_tilde);
        return Ok(result);
    }

    // Ascend through the candidates, then through any remaining branch
    // states; the all-zero state can never be denied, so this terminates.
    let mut last_level = f64::NEG_INFINITY;
    for (lo, beta) in s_opt.iter().chain(branch_states.iter().filter(|(_, b)| *b > upper + tie_tol(upper))) {
        if *beta <= last_level + tie_tol(last_level) {
            continue;
        }
        last_level = *beta;
        let blocking = blocking_set(table, pattern, |b| b <= beta + tie_tol(*beta));
        let witness = attacker_can_block(cfg, pattern, &blocking)?;
        let denied = witness.is_some();
        result.tests.push(BlockingTest {
            level: *beta,
            candidate: Some(lo.clone()),
            blocking,
            witness,
        });
        if !denied {
            result.outcome = BranchOutcome::Value {
                beta: *beta,
                state: lo.clone(),
            };
            return Ok(result);
        }
    }
    Err(Error::Solver(format!(
        "every state of branch {pattern} was deniable, including the all-zero state"
    )))
}

/// Smart enumeration over a precomputed rate table.
pub fn sea(cfg: &NetworkConfig, table: &StateBetaTable, mode: BoundaryMode) -> Result<WorstCaseResult> {
    if table.n() != cfg.n() {
        return Err(Error::Dimension(format!("rate table over {} channels for {} channels", table.n(), cfg.n())));
    }
    let patterns = enumerate_force(cfg);
    let beta_tilde = patterns
        .iter()
        .map(|p| table.get(&p.optimistic_state()))
        .fold(f64::NEG_INFINITY, f64::max);
    let branches = patterns
        .iter()
        .map(|p| run_branch(cfg, table, p, beta_tilde, mode))
        .collect::<Result<Vec<_>>>()?;
    let mut beta_bar = beta_tilde;
    let mut worst_branch = None;
    for (idx, b) in branches.iter().enumerate() {
        if let Some(v) = b.outcome.value() {
            if worst_branch.is_none() || v > beta_bar {
                beta_bar = beta_bar.max(v);
                worst_branch = Some(idx);
            }
        }
    }
    Ok(WorstCaseResult {
        beta_bar,
        beta_tilde,
        branches,
        worst_branch,
    })
}

/// Re-checks that every state left out of `S_opt` lies outside the
/// `[β̃*, β̂*]` window of its branch.
pub fn filter_is_sound(table: &StateBetaTable, res: &WorstCaseResult) -> bool {
    res.branches.iter().all(|b| {
        let upper = b.beta_hat.unwrap_or(f64::INFINITY);
        ChannelState::all(table.n())
            .filter(|l| b.pattern.is_disjoint(l) && !b.s_opt.iter().any(|(s, _)| s == l))
            .all(|l| {
                let v = table.get(&l);
                v < res.beta_tilde - tie_tol(res.beta_tilde) || v > upper + tie_tol(upper)
            })
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::tests::reference_network;
    use proptest::prelude::*;

    /// Reference rates of mode 1 keyed by the displayed state.
    pub(crate) fn reference_table_mode1() -> StateBetaTable {
        let entries = [
            ("1111", 1.2689),
            ("1011", 1.2689),
            ("0111", 1.2689),
            ("0011", 1.2689),
            ("1101", 1.3737),
            ("0101", 1.3926),
            ("1001", 1.4258),
            ("0001", 1.4275),
            ("1110", 1.5038),
            ("0110", 1.5646),
            ("1100", 1.6701),
            ("0100", 1.7068),
            ("1010", 1.8282),
            ("1000", 1.9140),
            ("0010", 2.0299),
            ("0000", 2.0661),
        ];
        let mut values = vec![0.0; 16];
        for (s, v) in entries {
            let l: ChannelState = s.parse().unwrap();
            values[l.mask() as usize] = v;
        }
        StateBetaTable::new(4, values).unwrap()
    }

    #[test]
    fn force_patterns_of_reference_network() {
        let cfg = reference_network();
        let pats = enumerate_force(&cfg);
        assert_eq!(pats.len(), 5);
        assert!(pats.iter().all(|p| p.jammed.count() <= 1));
        let mut none = cfg.clone();
        none.attack_budget = 0.0;
        assert_eq!(enumerate_force(&none).len(), 1);
        let mut all = cfg.clone();
        all.attack_budget = 1e6;
        all.attack_cap = vec![1e5; 4];
        all.total_bandwidth = 1e6;
        assert_eq!(enumerate_force(&all).len(), 16);
    }

    #[test]
    fn safe_sets_under_both_boundaries() {
        let cfg = reference_network();
        let free = ForcePattern { jammed: ChannelState::zeros(4) };
        let last = ForcePattern { jammed: ChannelState::from_bits(&[0, 0, 0, 1]) };
        assert_eq!(last.to_string(), "[? ? ? 0]");
        assert_eq!(enumerate_safe(&cfg, &free, BoundaryMode::PaperTable), vec![ChannelState::zeros(4)]);
        let safe_last = enumerate_safe(&cfg, &last, BoundaryMode::PaperTable);
        assert_eq!(safe_last.len(), 8);
        assert!(safe_last.iter().all(|l| !l.get(3)));
        let formula = enumerate_safe(&cfg, &free, BoundaryMode::Formula);
        assert_eq!(formula.len(), 5);
        assert!(formula.iter().all(|l| l.count() <= 1));
    }

    #[test]
    fn reference_audit_trail() {
        let cfg = reference_network();
        let table = reference_table_mode1();
        for mode in [BoundaryMode::PaperTable, BoundaryMode::Formula] {
            let res = sea(&cfg, &table, mode).unwrap();
            assert!((res.beta_bar - 1.5038).abs() < 1e-9, "{mode}: {}", res.beta_bar);
            assert!((res.beta_tilde - 1.5038).abs() < 1e-9);
            let last = res.branch("[? ? ? 0]").unwrap();
            assert_eq!(last.outcome.value(), Some(1.5038));
            let free = res.branch("[? ? ? ?]").unwrap();
            match mode {
                BoundaryMode::PaperTable => assert_eq!(free.outcome.value(), Some(1.5038)),
                // single channels count as safe here, which caps the branch below β̃*
                BoundaryMode::Formula => {
                    assert_eq!(free.beta_hat, Some(1.4275));
                    assert_eq!(free.outcome, BranchOutcome::Excluded);
                }
            }
            for p in ["[0 ? ? ?]", "[? 0 ? ?]", "[? ? 0 ?]"] {
                assert_eq!(res.branch(p).unwrap().outcome, BranchOutcome::Excluded, "{p}");
            }
            assert!(filter_is_sound(&table, &res));
        }
        let res = sea(&cfg, &table, BoundaryMode::PaperTable).unwrap();
        assert_eq!(res.branch("[? ? ? ?]").unwrap().beta_hat, Some(2.0661));
    }

    #[test]
    fn blocking_lp_examples() {
        let cfg = reference_network();
        let last = ForcePattern { jammed: ChannelState::from_bits(&[0, 0, 0, 1]) };
        let l = ChannelState::from_bits(&[1, 1, 1, 0]);
        assert!(attacker_can_block(&cfg, &last, &[l]).unwrap().is_none());
        let free = ForcePattern { jammed: ChannelState::zeros(4) };
        let w = attacker_can_block(&cfg, &free, &[ChannelState::from_bits(&[1, 1, 0, 0])]).unwrap().unwrap();
        assert!(w[0] + w[1] > 10.0);
        assert!(attacker_can_block(&cfg, &free, &[ChannelState::zeros(4)]).unwrap().is_none());
    }

    fn monotone_table(n: usize, raw: Vec<f64>) -> StateBetaTable {
        // β(L) = base − Σ_{j∈L} w_j keeps the table monotone in L
        let base = 3.0;
        let w: Vec<f64> = raw.iter().take(n).map(|v| v * 2.0 / n as f64).collect();
        let values = ChannelState::all(n)
            .map(|l| base - l.enabled().map(|j| w[j]).sum::<f64>())
            .collect();
        StateBetaTable::new(n, values).unwrap()
    }

    #[test]
    fn attack_free_budget_gives_all_ones_rate() {
        let mut cfg = reference_network();
        cfg.attack_budget = 0.0;
        let table = reference_table_mode1();
        let res = sea(&cfg, &table, BoundaryMode::PaperTable).unwrap();
        assert!((res.beta_bar - table.get(&ChannelState::all_ones(4))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn worst_case_bounds(raw in prop::collection::vec(0.01f64..1.0, 4)) {
            let cfg = reference_network();
            let table = monotone_table(4, raw);
            let res = sea(&cfg, &table, BoundaryMode::PaperTable).unwrap();
            prop_assert!(res.beta_bar >= res.beta_tilde);
            prop_assert!(res.beta_bar <= table.max() + 1e-12);
            prop_assert!(filter_is_sound(&table, &res));
        }

        #[test]
        fn smart_enumeration_matches_oracle_on_two_channels(raw in prop::collection::vec(0.01f64..1.0, 2),
                r0 in 1.0f64..6.0, r1 in 1.0f64..6.0, s0 in 2.0f64..12.0, s1 in 2.0f64..12.0,
                tau in 0.2f64..1.0, budget in 0.0f64..25.0, c0 in 1.0f64..15.0, c1 in 1.0f64..15.0, slack in 0.5f64..10.0) {
            let w = (r0 + c0).max(r1 + c1) + slack;
            let cfg = NetworkConfig {
                normal_flow: vec![r0, r1],
                buffer: vec![s0, s1],
                delay: tau,
                total_bandwidth: w,
                attack_budget: budget,
                attack_cap: vec![c0, c1],
            };
            prop_assume!(cfg.validate().is_ok());
            let table = monotone_table(2, raw);
            let res = sea(&cfg, &table, BoundaryMode::PaperTable).unwrap();
            let oracle = brute_force_worst_case(&cfg, &table, 20);
            prop_assert!((res.beta_bar - oracle.value).abs() <= 1e-6, "sea {} oracle {}", res.beta_bar, oracle.value);
        }
    }
}
