//! Network layer: flows, bandwidth, buffers and the per-channel enabling
//! condition, plus the big-M mixed-integer encoding of that condition.
//!
//! All comparisons in the enabling condition are exact float comparisons.
//! The reference parameters sit exactly on the delay boundary (`10 = S`),
//! so any tolerance would flip which channels an attacker can force.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Normal input flow `R` per channel.
    pub normal_flow: Vec<f64>,
    /// Buffer sizes `S`.
    pub buffer: Vec<f64>,
    /// Allocation delay `τ`.
    pub delay: f64,
    /// Shared bandwidth `W_Σ`.
    pub total_bandwidth: f64,
    /// Total attack flow budget `R̃_Σ`.
    pub attack_budget: f64,
    /// Per-channel attack caps `R̄`.
    pub attack_cap: Vec<f64>,
}

impl NetworkConfig {
    pub fn n(&self) -> usize {
        self.normal_flow.len()
    }

    /// Checks shapes, signs and that the bandwidth can always carry one
    /// fully attacked channel (`W_Σ ≥ R̄ + R` per channel).
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::validation("network.normal_flow", "at least one channel is required"));
        }
        if n > 31 {
            return Err(Error::validation("network.normal_flow", "at most 31 channels are supported"));
        }
        for (name, v) in [("network.buffer", &self.buffer), ("attack.caps", &self.attack_cap)] {
            if v.len() != n {
                return Err(Error::validation(name, format!("expected {n} entries, got {}", v.len())));
            }
        }
        let vectors = [
            ("network.normal_flow", &self.normal_flow),
            ("network.buffer", &self.buffer),
            ("attack.caps", &self.attack_cap),
        ];
        for (name, v) in vectors {
            if let Some(j) = v.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::validation(format!("{name}[{j}]"), "must be finite and nonnegative"));
            }
        }
        if !self.delay.is_finite() || self.delay <= 0.0 {
            return Err(Error::validation("network.delay", "must be positive"));
        }
        for (name, v) in [
            ("network.total_bandwidth", self.total_bandwidth),
            ("attack.budget", self.attack_budget),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::validation(name, "must be finite and nonnegative"));
            }
        }
        for j in 0..n {
            let need = self.attack_cap[j] + self.normal_flow[j];
            if self.total_bandwidth < need {
                return Err(Error::validation(
                    "network.total_bandwidth",
                    format!(
                        "bandwidth assumption violated on channel {}: W_Σ = {} is below R̄ + R = {need}",
                        j + 1,
                        self.total_bandwidth
                    ),
                ));
            }
        }
        Ok(())
    }

    /// `S/τ − R`: smallest attack rate violating the delay test when the
    /// previous allocation was zero.
    pub fn force_jam_threshold(&self, j: usize) -> f64 {
        self.buffer[j] / self.delay - self.normal_flow[j]
    }

    /// Buffer survives the allocation lag: `(R + r̃ − w_prev)·τ < S`.
    pub fn delay_ok(&self, j: usize, w_prev: f64, attack: f64) -> bool {
        (self.normal_flow[j] + attack - w_prev) * self.delay < self.buffer[j]
    }

    /// Bandwidth channel `j` needs to pass the allocation test.
    pub fn need(&self, j: usize, attack: f64) -> f64 {
        self.normal_flow[j] + attack
    }

    pub fn equal_split(&self) -> BandwidthAlloc {
        BandwidthAlloc(vec![self.total_bandwidth / self.n() as f64; self.n()])
    }

    pub fn normal_allocation(&self) -> BandwidthAlloc {
        BandwidthAlloc(self.normal_flow.clone())
    }
}

/// Attack flow `R̃(k)` at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackFlow(pub Vec<f64>);

impl AttackFlow {
    pub fn zero(n: usize) -> Self {
        AttackFlow(vec![0.0; n])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Bandwidth allocation `W(k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthAlloc(pub Vec<f64>);

impl BandwidthAlloc {
    pub fn zero(n: usize) -> Self {
        BandwidthAlloc(vec![0.0; n])
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Binary channel-state vector `𝓛`; entry `j` says whether state
/// component `j` reaches the controller.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ChannelState(Vec<bool>);

impl ChannelState {
    pub fn new(bits: Vec<bool>) -> Self {
        ChannelState(bits)
    }

    pub fn all_ones(n: usize) -> Self {
        ChannelState(vec![true; n])
    }

    pub fn zeros(n: usize) -> Self {
        ChannelState(vec![false; n])
    }

    /// Bit `j` of `mask` is channel `j` (0-based).
    pub fn from_mask(mask: u32, n: usize) -> Self {
        ChannelState((0..n).map(|j| mask >> j & 1 == 1).collect())
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        ChannelState(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn mask(&self) -> u32 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |m, (j, &b)| if b { m | 1 << j } else { m })
    }

    /// All `2ⁿ` states in mask order.
    pub fn all(n: usize) -> impl Iterator<Item = ChannelState> {
        (0..1u32 << n).map(move |m| ChannelState::from_mask(m, n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, v: bool) {
        self.0[j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_zero(&self) -> bool {
        self.count() == 0
    }

    pub fn enabled(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    /// `self ⊇ other` entrywise.
    pub fn covers(&self, other: &ChannelState) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| a || !b)
    }

    pub fn diag(&self) -> Matrix {
        Matrix::from_fn(self.len(), self.len(), |p, q| if p == q && self.0[p] { 1.0 } else { 0.0 })
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (j, &b) in self.0.iter().enumerate() {
            if j > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", b as u8)?;
        }
        write!(f, "]")
    }
}

impl From<ChannelState> for String {
    fn from(l: ChannelState) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for ChannelState {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for ChannelState {
    type Err = Error;

    /// Accepts `[1 0 1 1]`, `1011` or `1,0,1,1`.
    fn from_str(s: &str) -> Result<Self> {
        let mut bits = Vec::new();
        for c in s.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                '[' | ']' | ' ' | ',' => {}
                _ => return Err(Error::Parse(format!("bad channel state `{s}`"))),
            }
        }
        if bits.is_empty() {
            return Err(Error::Parse("empty channel state".into()));
        }
        Ok(ChannelState(bits))
    }
}

/// Enabled iff the delay test and the allocation test `w ≥ R + r̃` both pass.
pub fn enabling_state(cfg: &NetworkConfig, w_prev: &BandwidthAlloc, w: &BandwidthAlloc, attack: &AttackFlow) -> ChannelState {
    ChannelState(
        (0..cfg.n())
            .map(|j| cfg.delay_ok(j, w_prev.0[j], attack.0[j]) && w.0[j] >= cfg.need(j, attack.0[j]))
            .collect(),
    )
}

pub fn force_jam_threshold(cfg: &NetworkConfig, j: usize) -> f64 {
    cfg.force_jam_threshold(j)
}

/// Per-channel caps and the total budget.
pub fn admissible(cfg: &NetworkConfig, attack: &[f64]) -> bool {
    attack.len() == cfg.n()
        && attack
            .iter()
            .zip(&cfg.attack_cap)
            .all(|(&r, &cap)| r.is_finite() && r >= 0.0 && r <= cap)
        && attack.iter().sum::<f64>() <= cfg.attack_budget
}

/// Which bound on a single channel's attack flow feeds the big-M constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackBoundMode {
    /// `r̃ ≤ R̄`.
    ChannelCap,
    /// `r̃ ≤ min(R̄, R̃_Σ)`.
    CapAndBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BigMVar {
    WPrev,
    W,
    Attack,
    Z1,
    Z2,
    L,
}

const BIG_M_VARS: [BigMVar; 6] = [BigMVar::WPrev, BigMVar::W, BigMVar::Attack, BigMVar::Z1, BigMVar::Z2, BigMVar::L];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BigMSense {
    /// `expr < 0`, evaluated as `expr ≤ −ε`.
    StrictLess,
    LessEq,
    GreaterEq,
}

/// `Σ coeff·var + constant  (sense)  0` for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BigMRow {
    pub channel: usize,
    /// Coefficients in [`BigMVar`] order: w_prev, w, r̃, z₁, z₂, l.
    pub coeffs: [f64; 6],
    pub constant: f64,
    pub sense: BigMSense,
}

impl BigMRow {
    fn value(&self, v: [f64; 6]) -> f64 {
        self.coeffs.iter().zip(v).map(|(c, x)| c * x).sum::<f64>() + self.constant
    }

    pub fn coeff(&self, var: BigMVar) -> f64 {
        self.coeffs[BIG_M_VARS.iter().position(|&v| v == var).unwrap()]
    }
}

/// Binary assignment for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BigMBinaries {
    pub z1: bool,
    pub z2: bool,
    pub l: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigMEncoding {
    pub m: f64,
    /// `M₁..M₄` before taking the max.
    pub parts: [f64; 4],
    /// Slack used on strict rows.
    pub eps: f64,
    pub rows: Vec<BigMRow>,
    n: usize,
}

/// Seven rows per channel; `z₁` encodes the delay test, `z₂` the
/// allocation test and `l = z₁ ∧ z₂`.
pub fn encode_big_m(cfg: &NetworkConfig, mode: AttackBoundMode) -> BigMEncoding {
    let n = cfg.n();
    let cap = |j: usize| match mode {
        AttackBoundMode::ChannelCap => cfg.attack_cap[j],
        AttackBoundMode::CapAndBudget => cfg.attack_cap[j].min(cfg.attack_budget),
    };
    let max_over = |f: &dyn Fn(usize) -> f64| (0..n).map(f).fold(f64::NEG_INFINITY, f64::max);
    let tau = cfg.delay;
    let (r, s, w_sum) = (&cfg.normal_flow, &cfg.buffer, cfg.total_bandwidth);
    let parts = [
        max_over(&|j| (r[j] + cap(j)) * tau - s[j]),
        max_over(&|j| (w_sum - r[j]) * tau + s[j]),
        max_over(&|j| r[j] + cap(j)),
        max_over(&|j| w_sum - r[j]),
    ];
    let m = parts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-9 * m.abs().max(f64::MIN_POSITIVE);
    let mut rows = Vec::with_capacity(7 * n);
    for j in 0..n {
        let row = |coeffs: [f64; 6], constant: f64, sense| BigMRow {
            channel: j,
            coeffs,
            constant,
            sense,
        };
        // delay expression (R + r̃ − w_prev)τ − S = τ·r̃ − τ·w_prev + (Rτ − S)
        let d0 = r[j] * tau - s[j];
        rows.push(row([-tau, 0.0, tau, m, 0.0, 0.0], d0 - m, BigMSense::StrictLess));
        rows.push(row([-tau, 0.0, tau, m, 0.0, 0.0], d0, BigMSense::GreaterEq));
        // allocation expression w − R − r̃
        rows.push(row([0.0, 1.0, -1.0, 0.0, -m, 0.0], -r[j] + m, BigMSense::GreaterEq));
        rows.push(row([0.0, 1.0, -1.0, 0.0, -m, 0.0], -r[j], BigMSense::StrictLess));
        rows.push(row([0.0, 0.0, 0.0, -1.0, 0.0, 1.0], 0.0, BigMSense::LessEq));
        rows.push(row([0.0, 0.0, 0.0, 0.0, -1.0, 1.0], 0.0, BigMSense::LessEq));
        rows.push(row([0.0, 0.0, 0.0, -1.0, -1.0, 1.0], 1.0, BigMSense::GreaterEq));
    }
    BigMEncoding { m, parts, eps, rows, n }
}

impl BigMEncoding {
    pub fn n(&self) -> usize {
        self.n
    }

    fn row_holds(&self, row: &BigMRow, v: [f64; 6]) -> bool {
        let x = row.value(v);
        match row.sense {
            BigMSense::StrictLess => x <= -self.eps,
            BigMSense::LessEq => x <= 0.0,
            BigMSense::GreaterEq => x >= 0.0,
        }
    }

    /// Whether channel `j`'s rows hold at the given continuous inputs and binaries.
    pub fn satisfied(&self, j: usize, w_prev: f64, w: f64, attack: f64, b: BigMBinaries) -> bool {
        let f = |x: bool| if x { 1.0 } else { 0.0 };
        let v = [w_prev, w, attack, f(b.z1), f(b.z2), f(b.l)];
        self.rows
            .iter()
            .filter(|r| r.channel == j)
            .all(|r| self.row_holds(r, v))
    }

    /// Every binary assignment satisfying channel `j`'s rows.
    pub fn satisfying_assignments(&self, j: usize, w_prev: f64, w: f64, attack: f64) -> Vec<BigMBinaries> {
        (0..8u8)
            .map(|m| BigMBinaries {
                z1: m & 1 == 1,
                z2: m & 2 == 2,
                l: m & 4 == 4,
            })
            .filter(|&b| self.satisfied(j, w_prev, w, attack, b))
            .collect()
    }
}
