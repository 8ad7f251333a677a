//! Scenario files: one TOML document holding the plant, network, attack
//! model, design parameters and run options.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certificate::AttackBudget;
use crate::channel::NetworkConfig;
use crate::design::LyapunovDesign;
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, SymMatrix};
use crate::plant::{PplsSystem, Subsystem};
use crate::sim::TracePolicy;
use crate::worst_case::BoundaryMode;

const BUNDLED: &[(&str, &str)] = &[("paper_example", include_str!("../scenarios/paper_example.toml"))];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: SystemBlock,
    pub network: NetworkBlock,
    pub attack: AttackBlock,
    pub design: DesignBlock,
    #[serde(default)]
    pub options: OptionsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub dwell_times: Vec<usize>,
    pub subsystems: Vec<SubsystemBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkBlock {
    pub normal_flow: Vec<f64>,
    pub buffer: Vec<f64>,
    pub delay: f64,
    pub total_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub budget: f64,
    pub caps: Vec<f64>,
    pub duration_caps: Vec<usize>,
    pub trace: TraceBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    UniformSplit,
    ForceOneChannel,
    RandomAdmissible,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitStep {
    pub k: usize,
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceBlock {
    pub policy: TraceKind,
    #[serde(default)]
    pub seed: u64,
    pub horizon: usize,
    /// Flow on attacked steps for `uniform-split`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<Vec<f64>>,
    /// Target channel (0-based) for `force-one-channel`; the last one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
    /// Attacked phases inside every dwell interval; defaults to `T̃_i` phases from 1
    /// (from 0 when the whole dwell is attacked).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<ExplicitStep>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBlock {
    pub alpha: Vec<f64>,
    pub gain_bound: f64,
    #[serde(default = "yes")]
    pub gain_box_online: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<Vec<Vec<f64>>>>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OptionsBlock {
    #[serde(default)]
    pub boundary: BoundaryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    /// `W(−1)`; equal split of the bandwidth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_allocation: Option<Vec<f64>>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Scenario::from_toml_str(text))
            .unwrap_or_else(|| Err(Error::InvalidInput(format!("no bundled scenario named `{name}`"))))
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// A file path if one exists, else a bundled scenario name.
    pub fn resolve(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.exists() {
            Scenario::load(path)
        } else {
            Scenario::bundled(arg).map_err(|_| {
                Error::InvalidInput(format!(
                    "`{arg}` is neither a scenario file nor a bundled scenario ({})",
                    Scenario::bundled_names().collect::<Vec<_>>().join(", ")
                ))
            })
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        let text = self.to_toml_string().unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn n(&self) -> usize {
        self.network.normal_flow.len()
    }

    pub fn system(&self) -> Result<PplsSystem> {
        let subs = self
            .system
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let a = matrix_from_rows(&s.a).map_err(|e| Error::validation(format!("system.subsystems[{i}].a"), e.to_string()))?;
                let b = matrix_from_rows(&s.b).map_err(|e| Error::validation(format!("system.subsystems[{i}].b"), e.to_string()))?;
                Ok(Subsystem { a, b })
            })
            .collect::<Result<Vec<_>>>()?;
        PplsSystem::new(subs, self.system.dwell_times.clone()).map_err(|e| Error::validation("system", e.to_string()))
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            normal_flow: self.network.normal_flow.clone(),
            buffer: self.network.buffer.clone(),
            delay: self.network.delay,
            total_bandwidth: self.network.total_bandwidth,
            attack_budget: self.attack.budget,
            attack_cap: self.attack.caps.clone(),
        }
    }

    pub fn budget(&self) -> AttackBudget {
        AttackBudget {
            duration_caps: self.attack.duration_caps.clone(),
            dwell: self.system.dwell_times.clone(),
        }
    }

    pub fn gain_box(&self) -> Option<f64> {
        self.design.gain_box_online.then_some(self.design.gain_bound)
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.options.initial_state.clone().unwrap_or_else(|| vec![1.0; self.n()])
    }

    /// The stored design, if the scenario carries one.
    pub fn given_design(&self, sys: &PplsSystem) -> Result<Option<LyapunovDesign>> {
        let (Some(p), Some(k)) = (&self.design.p, &self.design.k) else {
            return Ok(None);
        };
        let p = p
            .iter()
            .enumerate()
            .map(|(i, rows)| SymMatrix::from_rows(rows).map_err(|e| Error::validation(format!("design.p[{i}]"), e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let k = k
            .iter()
            .enumerate()
            .map(|(i, rows)| matrix_from_rows(rows).map_err(|e| Error::validation(format!("design.k[{i}]"), e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        LyapunovDesign::from_given(sys, self.design.alpha.clone(), p, k).map(Some)
    }

    pub fn trace_policy(&self) -> TracePolicy {
        let t = &self.attack.trace;
        match t.policy {
            TraceKind::UniformSplit => TracePolicy::UniformSplit {
                flow: t.flow.clone(),
                phases: t.phases.clone(),
            },
            TraceKind::ForceOneChannel => TracePolicy::ForceOneChannel {
                channel: t.channel,
                phases: t.phases.clone(),
            },
            TraceKind::RandomAdmissible => TracePolicy::RandomAdmissible,
            TraceKind::Explicit => TracePolicy::Explicit(
                t.steps
                    .iter()
                    .flatten()
                    .map(|s| (s.k, s.flow.clone()))
                    .collect(),
            ),
        }
    }

    /// Cross-field checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let sys = self.system()?;
        let n = sys.n();
        let s = sys.num_modes();
        if self.n() != n {
            return Err(Error::validation(
                "network.normal_flow",
                format!("{} channels but the state has dimension {n}", self.n()),
            ));
        }
        self.network().validate()?;
        if self.attack.duration_caps.len() != s {
            return Err(Error::validation("attack.duration_caps", format!("expected {s} entries")));
        }
        for (i, (&cap, &t)) in self.attack.duration_caps.iter().zip(&self.system.dwell_times).enumerate() {
            if cap > t {
                return Err(Error::validation(
                    format!("attack.duration_caps[{i}]"),
                    format!("attack duration {cap} exceeds the dwell-time {t}"),
                ));
            }
        }
        if self.design.alpha.len() != s {
            return Err(Error::validation("design.alpha", format!("expected {s} entries")));
        }
        if let Some(i) = self.design.alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::validation(format!("design.alpha[{i}]"), "must be positive"));
        }
        if !(self.design.gain_bound.is_finite() && self.design.gain_bound > 0.0) {
            return Err(Error::validation("design.gain_bound", "must be positive"));
        }
        if self.design.p.is_some() != self.design.k.is_some() {
            return Err(Error::validation("design", "`p` and `k` must be given together"));
        }
        self.given_design(&sys)?;
        if let Some(x) = &self.options.initial_state {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation("options.initial_state", format!("expected {n} finite entries")));
            }
        }
        if let Some(w) = &self.options.initial_allocation {
            if w.len() != n || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation("options.initial_allocation", format!("expected {n} nonnegative entries")));
            }
            if w.iter().sum::<f64>() > self.network.total_bandwidth {
                return Err(Error::validation("options.initial_allocation", "exceeds the total bandwidth"));
            }
        }
        self.validate_trace(n)
    }

    fn validate_trace(&self, n: usize) -> Result<()> {
        let t = &self.attack.trace;
        let cfg = self.network();
        if t.horizon == 0 {
            return Err(Error::validation("attack.trace.horizon", "must be positive"));
        }
        if let Some(flow) = &t.flow {
            if !crate::channel::admissible(&cfg, flow) {
                return Err(Error::validation("attack.trace.flow", "violates the attack caps or budget"));
            }
        }
        if let Some(c) = t.channel {
            if c >= n {
                return Err(Error::validation("attack.trace.channel", format!("must be below {n}")));
            }
        }
        if let Some(phases) = &t.phases {
            let min_dwell = *self.system.dwell_times.iter().min().unwrap_or(&0);
            if phases.iter().any(|&p| p >= min_dwell) {
                return Err(Error::validation("attack.trace.phases", "every phase must be below every dwell-time"));
            }
        }
        match (t.policy, &t.steps) {
            (TraceKind::Explicit, None) => {
                return Err(Error::validation("attack.trace.steps", "required for the explicit policy"))
            }
            (_, Some(steps)) => {
                for (idx, st) in steps.iter().enumerate() {
                    if !crate::channel::admissible(&cfg, &st.flow) {
                        return Err(Error::validation(
                            format!("attack.trace.steps[{idx}].flow"),
                            "violates the attack caps or budget",
                        ));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}
