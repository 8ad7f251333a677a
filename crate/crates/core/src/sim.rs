//! Closed-loop simulation: attack traces within the flow and duration
//! budgets, per-step defense, plant update and logging.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::AttackBudget;
use crate::channel::{admissible, AttackFlow, BandwidthAlloc, ChannelState, NetworkConfig};
use crate::defense::{defend, nominal, strategy_a, strategy_b, DefenseDecision, OnlineSolver};
use crate::error::{Error, Result};
use crate::plant::{lyapunov_value, PplsSystem, SystemState};

/// How attacked steps and their flows are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TracePolicy {
    /// The same flow on every attacked step, default `min(R̄_j, R̃_Σ/n)`.
    /// `phases` are the attacked offsets within each dwell (default
    /// `1..=T̃_i`), truncated to the mode's duration cap.
    UniformSplit { flow: Option<Vec<f64>>, phases: Option<Vec<usize>> },
    /// Jam one channel through the delay test at zero previous allocation
    /// (flow just above `S/τ − R`), default the last channel.
    ForceOneChannel { channel: Option<usize>, phases: Option<Vec<usize>> },
    /// Random attacked offsets and random admissible flows.
    RandomAdmissible,
    /// Given `(k, flow)` pairs; every other step is unattacked.
    Explicit(Vec<(usize, Vec<f64>)>),
}

impl TracePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            TracePolicy::UniformSplit { .. } => "uniform-split",
            TracePolicy::ForceOneChannel { .. } => "force-one-channel",
            TracePolicy::RandomAdmissible => "random-admissible",
            TracePolicy::Explicit(_) => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub flows: Vec<AttackFlow>,
    pub seed: u64,
    pub policy: String,
}

/// Attacked-step count of one dwell interval `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwellCount {
    pub start: usize,
    pub len: usize,
    pub mode: usize,
    pub attacked: usize,
    pub cap: usize,
}

impl AttackTrace {
    pub fn horizon(&self) -> usize {
        self.flows.len()
    }

    pub fn attacked(&self, k: usize) -> bool {
        !self.flows[k].is_zero()
    }

    pub fn attacked_steps(&self) -> Vec<usize> {
        (0..self.horizon()).filter(|&k| self.attacked(k)).collect()
    }

    /// Counts per dwell interval, including a trailing partial one.
    pub fn dwell_counts(&self, sys: &PplsSystem, budget: &AttackBudget) -> Vec<DwellCount> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < self.horizon() {
            let mode = sys.mode_at(start).index;
            let len = sys.dwell(mode);
            let end = (start + len).min(self.horizon());
            out.push(DwellCount {
                start,
                len,
                mode,
                attacked: (start..end).filter(|&k| self.attacked(k)).count(),
                cap: budget.duration_caps[mode - 1],
            });
            start += len;
        }
        out
    }

    pub fn admissibility_violations(&self, cfg: &NetworkConfig) -> usize {
        self.flows.iter().filter(|f| !admissible(cfg, &f.0)).count()
    }

    pub fn budget_violations(&self, sys: &PplsSystem, budget: &AttackBudget) -> usize {
        self.dwell_counts(sys, budget).iter().filter(|d| d.attacked > d.cap).count()
    }

    pub fn respects(&self, cfg: &NetworkConfig, sys: &PplsSystem, budget: &AttackBudget) -> bool {
        self.admissibility_violations(cfg) == 0 && self.budget_violations(sys, budget) == 0
    }
}

fn default_phases(cap: usize, dwell: usize) -> Vec<usize> {
    let start = 1.min(dwell - cap);
    (start..start + cap).collect()
}

fn phased_trace(sys: &PplsSystem, budget: &AttackBudget, horizon: usize, phases: &Option<Vec<usize>>, flow: &AttackFlow) -> Vec<AttackFlow> {
    let n = flow.0.len();
    (0..horizon)
        .map(|k| {
            let m = sys.mode_at(k);
            let cap = budget.duration_caps[m.index - 1];
            let hit = match phases {
                Some(p) => p.iter().take(cap).any(|&ph| ph == m.phase),
                None => default_phases(cap, sys.dwell(m.index)).contains(&m.phase),
            };
            if hit {
                flow.clone()
            } else {
                AttackFlow::zero(n)
            }
        })
        .collect()
}

fn random_flow(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> AttackFlow {
    let n = cfg.n();
    let mut r: Vec<f64> = (0..n).map(|j| rng.random::<f64>() * cfg.attack_cap[j]).collect();
    let total: f64 = r.iter().sum();
    let allowed = rng.random::<f64>() * cfg.attack_budget;
    if total > allowed && total > 0.0 {
        let scale = allowed / total;
        r.iter_mut().for_each(|v| *v *= scale);
    }
    // Guard against rounding pushing the sum past the budget.
    while r.iter().sum::<f64>() > cfg.attack_budget {
        r.iter_mut().for_each(|v| *v *= 1.0 - 1e-12);
    }
    AttackFlow(r)
}

/// Builds a trace of `horizon` steps; deterministic given the seed.
pub fn generate_trace(cfg: &NetworkConfig, budget: &AttackBudget, sys: &PplsSystem, policy: &TracePolicy, seed: u64, horizon: usize) -> Result<AttackTrace> {
    budget.validate()?;
    let n = cfg.n();
    let flows = match policy {
        TracePolicy::UniformSplit { flow, phases } => {
            let f = match flow {
                Some(f) => f.clone(),
                None => (0..n).map(|j| cfg.attack_cap[j].min(cfg.attack_budget / n as f64)).collect(),
            };
            if !admissible(cfg, &f) {
                return Err(Error::validation("attack.trace.flow", "violates the attack caps or budget"));
            }
            phased_trace(sys, budget, horizon, phases, &AttackFlow(f))
        }
        TracePolicy::ForceOneChannel { channel, phases } => {
            let c = channel.unwrap_or(n - 1);
            if c >= n {
                return Err(Error::validation("attack.trace.channel", format!("must be below {n}")));
            }
            let thr = cfg.force_jam_threshold(c).max(0.0);
            let level = (thr * (1.0 + 1e-9) + 1e-12).min(cfg.attack_cap[c]).min(cfg.attack_budget);
            let mut f = vec![0.0; n];
            f[c] = level;
            phased_trace(sys, budget, horizon, phases, &AttackFlow(f))
        }
        TracePolicy::RandomAdmissible => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut flows = vec![AttackFlow::zero(n); horizon];
            let mut start = 0;
            while start < horizon {
                let mode = sys.mode_at(start).index;
                let len = sys.dwell(mode);
                let mut offsets: Vec<usize> = (0..len).collect();
                for _ in 0..budget.duration_caps[mode - 1] {
                    let pick = rng.random_range(0..offsets.len());
                    let ph = offsets.swap_remove(pick);
                    if start + ph < horizon {
                        flows[start + ph] = random_flow(cfg, &mut rng);
                    }
                }
                start += len;
            }
            flows
        }
        TracePolicy::Explicit(steps) => {
            let mut flows = vec![AttackFlow::zero(n); horizon];
            for (k, f) in steps {
                if *k >= horizon {
                    return Err(Error::validation("attack.trace.steps", format!("step {k} beyond the horizon {horizon}")));
                }
                if !admissible(cfg, f) {
                    return Err(Error::validation("attack.trace.steps", format!("flow at step {k} violates the caps or budget")));
                }
                flows[*k] = AttackFlow(f.clone());
            }
            flows
        }
    };
    let trace = AttackTrace {
        flows,
        seed,
        policy: policy.name().to_string(),
    };
    if trace.budget_violations(sys, budget) > 0 {
        return Err(Error::validation("attack.trace", "trace exceeds the attack-duration caps"));
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Joint allocation, channel state and gain.
    Cross,
    /// Normal-flow allocation, adaptive gain.
    A,
    /// Adaptive allocation, default gain.
    B,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Cross, Strategy::A, Strategy::B];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Cross => "cross",
            Strategy::A => "a",
            Strategy::B => "b",
        }
    }

    pub fn decide(&self, solver: &OnlineSolver, cfg: &NetworkConfig, i: usize, w_prev: &BandwidthAlloc, attack: &AttackFlow) -> Result<DefenseDecision> {
        match self {
            Strategy::Cross => defend(solver, cfg, i, w_prev, attack),
            Strategy::A => strategy_a(solver, cfg, i, w_prev, attack),
            Strategy::B => strategy_b(solver, cfg, i, w_prev, attack),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(Strategy::Cross),
            "a" => Ok(Strategy::A),
            "b" => Ok(Strategy::B),
            _ => Err(Error::Parse(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub mode: usize,
    pub phase: usize,
    pub attack: Vec<f64>,
    pub w: Vec<f64>,
    pub l: ChannelState,
    pub beta: f64,
    pub attacked: bool,
    /// `V(k+1) / V(k)`.
    pub v_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `max_k ‖x(k)‖ / ‖x(0)‖`.
    pub peak_ratio: f64,
    /// `Σ ‖x(k+1) − x(k)‖`.
    pub oscillation: f64,
    /// First step after which `‖x‖ ≤ 2% ‖x(0)‖` for the rest of the run.
    pub settling_index: Option<usize>,
    pub final_ratio: f64,
    /// Steps where `V(k+1) > β V(k)(1 + 1e-6)`.
    pub contract_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub strategy: Strategy,
    /// `x(0..=horizon)`.
    pub states: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub dwell_counts: Vec<DwellCount>,
    pub metrics: Metrics,
}

impl SimResult {
    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }
}

/// Relative slack of the per-step Lyapunov contract.
pub const CONTRACT_SLACK: f64 = 1e-6;

fn contract_holds(v: f64, v_next: f64, beta: f64) -> bool {
    v_next <= beta * v * (1.0 + CONTRACT_SLACK) + f64::MIN_POSITIVE
}

fn metrics(norms: &[f64], states: &[Vec<f64>], steps: &[StepRecord], v: &[f64]) -> Metrics {
    let x0 = norms[0].max(f64::MIN_POSITIVE);
    let peak_ratio = norms.iter().fold(0.0f64, |m, v| m.max(*v)) / x0;
    let oscillation = states
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt())
        .sum();
    let settled = |k: usize| norms[k..].iter().all(|v| *v <= 0.02 * x0);
    let settling_index = (0..norms.len()).find(|&k| settled(k));
    let contract_violations = steps
        .iter()
        .filter(|s| !contract_holds(v[s.k], v[s.k + 1], s.beta))
        .count();
    Metrics {
        peak_ratio,
        oscillation,
        settling_index,
        final_ratio: norms[norms.len() - 1] / x0,
        contract_violations,
    }
}

/// Runs one strategy over a trace from `x0`, starting from allocation `w_init`.
pub fn run(solver: &OnlineSolver, cfg: &NetworkConfig, budget: &AttackBudget, trace: &AttackTrace, strategy: Strategy, x0: &[f64], w_init: &BandwidthAlloc) -> Result<SimResult> {
    let sys = solver.system();
    let design = solver.design();
    if x0.len() != sys.n() || cfg.n() != sys.n() || w_init.0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "state {}, channels {}, allocation {} for a plant of order {}",
            x0.len(),
            cfg.n(),
            w_init.0.len(),
            sys.n()
        )));
    }
    let mut st = SystemState::new(0, x0.to_vec());
    let mut w_prev = w_init.clone();
    let mut states = vec![x0.to_vec()];
    let mut v = vec![lyapunov_value(sys, design, &st)];
    let mut steps = Vec::with_capacity(trace.horizon());
    for k in 0..trace.horizon() {
        let m = sys.mode_at(k);
        let attack = &trace.flows[k];
        let d = if attack.is_zero() && strategy != Strategy::A {
            nominal(solver, cfg, m.index, &w_prev)?
        } else {
            strategy.decide(solver, cfg, m.index, &w_prev, attack)?
        };
        let next = sys.step(&st, &d.gain, &d.l)?;
        let v_next = lyapunov_value(sys, design, &next);
        steps.push(StepRecord {
            k,
            mode: m.index,
            phase: m.phase,
            attack: attack.0.clone(),
            w: d.w.0.clone(),
            l: d.l.clone(),
            beta: d.beta,
            attacked: d.attacked,
            v_ratio: if v[k] > 0.0 { v_next / v[k] } else { 0.0 },
        });
        states.push(next.x.iter().copied().collect());
        v.push(v_next);
        w_prev = d.w;
        st = next;
    }
    let norms: Vec<f64> = states.iter().map(|x| x.iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
    let metrics = metrics(&norms, &states, &steps, &v);
    Ok(SimResult {
        strategy,
        dwell_counts: trace.dwell_counts(sys, budget),
        states,
        v,
        steps,
        metrics,
    })
}

/// Rates the three strategies would attain at the same attacked step,
/// evaluated at the cross-layered run's previous allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub k: usize,
    pub mode: usize,
    pub cross: f64,
    pub a: f64,
    pub b: f64,
}

impl DominanceRow {
    pub fn holds(&self, slack: f64) -> bool {
        self.cross <= self.a + slack && self.cross <= self.b + slack
    }
}

pub fn dominance(solver: &OnlineSolver, cfg: &NetworkConfig, cross: &SimResult, w_init: &BandwidthAlloc, trace: &AttackTrace) -> Result<Vec<DominanceRow>> {
    let mut rows = Vec::new();
    let mut w_prev = w_init.clone();
    for s in &cross.steps {
        let attack = &trace.flows[s.k];
        if !attack.is_zero() {
            let rate = |st: Strategy| st.decide(solver, cfg, s.mode, &w_prev, attack).map(|d| d.beta);
            rows.push(DominanceRow {
                k: s.k,
                mode: s.mode,
                cross: rate(Strategy::Cross)?,
                a: rate(Strategy::A)?,
                b: rate(Strategy::B)?,
            });
        }
        w_prev = BandwidthAlloc(s.w.clone());
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub results: Vec<SimResult>,
    pub dominance: Vec<DominanceRow>,
}

impl Comparison {
    pub fn get(&self, s: Strategy) -> &SimResult {
        self.results.iter().find(|r| r.strategy == s).expect("every strategy is run")
    }
}

/// All three strategies on one shared trace.
pub fn compare(solver: &OnlineSolver, cfg: &NetworkConfig, budget: &AttackBudget, trace: &AttackTrace, x0: &[f64], w_init: &BandwidthAlloc) -> Result<Comparison> {
    let results = Strategy::ALL
        .iter()
        .map(|&s| run(solver, cfg, budget, trace, s, x0, w_init))
        .collect::<Result<Vec<_>>>()?;
    let dominance = dominance(solver, cfg, &results[0], w_init, trace)?;
    Ok(Comparison { results, dominance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::chi_of;
    use crate::channel::tests::reference_network;
    use crate::design::tests::reference_system_and_design;

    fn setup() -> (PplsSystem, OnlineSolver, NetworkConfig, AttackBudget) {
        let (sys, d) = reference_system_and_design();
        let solver = OnlineSolver::new(&sys, &d, Some(100.0)).unwrap();
        let budget = AttackBudget {
            duration_caps: vec![2, 2, 2],
            dwell: vec![4, 5, 6],
        };
        (sys, solver, reference_network(), budget)
    }

    #[test]
    fn zero_budget_gives_zero_trace() {
        let (sys, _, cfg, _) = setup();
        let none = AttackBudget::attack_free(&[4, 5, 6]);
        for policy in [
            TracePolicy::UniformSplit { flow: None, phases: None },
            TracePolicy::RandomAdmissible,
        ] {
            let t = generate_trace(&cfg, &none, &sys, &policy, 3, 60).unwrap();
            assert!(t.attacked_steps().is_empty());
        }
    }

    #[test]
    fn uniform_trace_hits_default_phases() {
        let (sys, _, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::UniformSplit { flow: None, phases: None }, 1, 30).unwrap();
        assert_eq!(t.attacked_steps(), vec![1, 2, 5, 6, 10, 11, 16, 17, 20, 21, 25, 26]);
        assert!(t.flows[1].0.iter().all(|v| *v == 5.0));
        assert!(t.respects(&cfg, &sys, &budget));
    }

    #[test]
    fn random_trace_respects_assumptions() {
        let (sys, _, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::RandomAdmissible, 42, 1000).unwrap();
        assert_eq!(t.admissibility_violations(&cfg), 0);
        assert_eq!(t.budget_violations(&sys, &budget), 0);
        let again = generate_trace(&cfg, &budget, &sys, &TracePolicy::RandomAdmissible, 42, 1000).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn explicit_trace_is_checked() {
        let (sys, _, cfg, budget) = setup();
        let ok = TracePolicy::Explicit(vec![(1, vec![5.0; 4])]);
        assert!(generate_trace(&cfg, &budget, &sys, &ok, 0, 10).is_ok());
        let too_big = TracePolicy::Explicit(vec![(1, vec![16.0, 0.0, 0.0, 0.0])]);
        assert!(generate_trace(&cfg, &budget, &sys, &too_big, 0, 10).is_err());
        let too_many = TracePolicy::Explicit((0..3).map(|k| (k, vec![1.0; 4])).collect());
        assert!(generate_trace(&cfg, &budget, &sys, &too_many, 0, 10).is_err());
    }

    #[test]
    fn force_one_channel_jams_through_delay() {
        let (sys, _, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::ForceOneChannel { channel: Some(3), phases: None }, 0, 15).unwrap();
        let f = &t.flows[1].0;
        assert!(!cfg.delay_ok(3, 0.0, f[3]));
        assert!(admissible(&cfg, f));
    }

    #[test]
    fn attack_free_run_contracts() {
        let (sys, solver, cfg, _) = setup();
        let none = AttackBudget::attack_free(&[4, 5, 6]);
        let t = generate_trace(&cfg, &none, &sys, &TracePolicy::RandomAdmissible, 0, 60).unwrap();
        let r = run(&solver, &cfg, &none, &t, Strategy::Cross, &[2.0, 3.2, 1.3, 3.0], &cfg.equal_split()).unwrap();
        assert_eq!(r.metrics.contract_violations, 0);
        assert!(r.steps.iter().all(|s| s.l == ChannelState::all_ones(4)));
        // one period contracts V by the product of the design rates
        let t_len = sys.period();
        for l in 1..=4 {
            assert!(r.v[l * t_len] < r.v[(l - 1) * t_len]);
        }
    }

    #[test]
    fn attacked_run_keeps_contracts_and_period_bound() {
        let (sys, solver, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::UniformSplit { flow: None, phases: None }, 1, 150).unwrap();
        let x0 = [2.0, 3.2, 1.3, 3.0];
        let r = run(&solver, &cfg, &budget, &t, Strategy::Cross, &x0, &cfg.equal_split()).unwrap();
        assert_eq!(r.metrics.contract_violations, 0);
        assert_eq!(r.states.len(), 151);
        assert!(r.dwell_counts.iter().all(|d| d.attacked <= d.cap));
        let beta_bar = [1.5038, 3.1578, 3.4006];
        for s in r.steps.iter().filter(|s| s.attacked) {
            assert!(s.beta <= beta_bar[s.mode - 1] + 1e-3, "k={} beta={}", s.k, s.beta);
        }
        let (_, chi) = chi_of(&solver.design().alpha, &beta_bar, &budget).unwrap();
        let tt = sys.period();
        for l in 1..=10 {
            assert!(r.v[l * tt] <= chi.powi(2 * (l * tt) as i32) * r.v[0] * (1.0 + 1e-6));
        }
        assert!(r.metrics.final_ratio < 1e-3);
    }

    #[test]
    fn runs_are_reproducible() {
        let (sys, solver, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::RandomAdmissible, 9, 45).unwrap();
        let x0 = [2.0, 3.2, 1.3, 3.0];
        let a = run(&solver, &cfg, &budget, &t, Strategy::Cross, &x0, &cfg.equal_split()).unwrap();
        let b = run(&solver, &cfg, &budget, &t, Strategy::Cross, &x0, &cfg.equal_split()).unwrap();
        assert_eq!(a.steps, b.steps);
    }

    #[test]
    fn comparison_dominance_on_shared_trace() {
        let (sys, solver, cfg, budget) = setup();
        let t = generate_trace(&cfg, &budget, &sys, &TracePolicy::UniformSplit { flow: None, phases: None }, 1, 45).unwrap();
        let c = compare(&solver, &cfg, &budget, &t, &[2.0, 3.2, 1.3, 3.0], &cfg.equal_split()).unwrap();
        assert_eq!(c.results.len(), 3);
        assert!(!c.dominance.is_empty());
        assert!(c.dominance.iter().all(|row| row.holds(1e-6)));
        // normal-flow allocation cannot carry any channel under a uniform split
        let a = c.get(Strategy::A);
        assert!(a.steps.iter().filter(|s| s.attacked).all(|s| s.l.is_zero()));
    }
}
