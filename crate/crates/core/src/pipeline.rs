//! End-to-end stages over a scenario: design, worst-case analysis with its
//! certificate, and closed-loop runs.

use crate::certificate::{certify, CertOutcome};
use crate::channel::BandwidthAlloc;
use crate::defense::OnlineSolver;
use crate::design::{self, validate, DesignReport, LyapunovDesign};
use crate::error::{Error, Result};
use crate::plant::PplsSystem;
use crate::scenario::Scenario;
use crate::sim::{self, AttackTrace, Comparison, SimResult, Strategy};
use crate::worst_case::{sea, BoundaryMode, StateBetaTable, WorstCaseResult};

/// Where the Lyapunov design came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignSource {
    Given,
    Synthesised,
}

impl DesignSource {
    pub fn name(&self) -> &'static str {
        match self {
            DesignSource::Given => "given",
            DesignSource::Synthesised => "synthesised",
        }
    }
}

pub struct Prepared {
    pub scenario: Scenario,
    pub system: PplsSystem,
    pub design: LyapunovDesign,
    pub source: DesignSource,
    pub report: DesignReport,
}

/// Loads the system and either the scenario's design or a fresh synthesis.
pub fn prepare(scenario: &Scenario, force_synthesis: bool) -> Result<Prepared> {
    let system = scenario.system()?;
    let given = if force_synthesis { None } else { scenario.given_design(&system)? };
    let (design, source) = match given {
        Some(d) => (d, DesignSource::Given),
        None => (design::design(&system, &scenario.design.alpha)?, DesignSource::Synthesised),
    };
    let report = validate(&design, &system);
    if !report.passed() {
        return Err(Error::Validation {
            field: "design".into(),
            message: format!("the {} design fails its checks:\n{report}", source.name()),
        });
    }
    Ok(Prepared {
        scenario: scenario.clone(),
        system,
        design,
        source,
        report,
    })
}

impl Prepared {
    pub fn solver(&self) -> Result<OnlineSolver> {
        OnlineSolver::new(&self.system, &self.design, self.scenario.gain_box())
    }

    pub fn initial_allocation(&self) -> BandwidthAlloc {
        match &self.scenario.options.initial_allocation {
            Some(w) => BandwidthAlloc(w.clone()),
            None => self.scenario.network().equal_split(),
        }
    }

    pub fn trace(&self, seed: u64) -> Result<AttackTrace> {
        sim::generate_trace(
            &self.scenario.network(),
            &self.scenario.budget(),
            &self.system,
            &self.scenario.trace_policy(),
            seed,
            self.scenario.attack.trace.horizon,
        )
    }

    pub fn simulate(&self, solver: &OnlineSolver, trace: &AttackTrace, strategy: Strategy) -> Result<SimResult> {
        sim::run(
            solver,
            &self.scenario.network(),
            &self.scenario.budget(),
            trace,
            strategy,
            &self.scenario.initial_state(),
            &self.initial_allocation(),
        )
    }

    pub fn compare(&self, solver: &OnlineSolver, trace: &AttackTrace) -> Result<Comparison> {
        sim::compare(
            solver,
            &self.scenario.network(),
            &self.scenario.budget(),
            trace,
            &self.scenario.initial_state(),
            &self.initial_allocation(),
        )
    }
}

pub struct Analysis {
    pub tables: Vec<StateBetaTable>,
    pub worst: Vec<WorstCaseResult>,
    pub beta_bar: Vec<f64>,
    pub certificate: CertOutcome,
}

/// Rate tables, worst cases per mode and the stability certificate.
pub fn analyze(prep: &Prepared, solver: &OnlineSolver, boundary: BoundaryMode) -> Result<Analysis> {
    let cfg = prep.scenario.network();
    let s = prep.system.num_modes();
    let tables = (1..=s).map(|i| solver.beta_table(i)).collect::<Result<Vec<_>>>()?;
    let worst = tables
        .iter()
        .map(|t| sea(&cfg, t, boundary))
        .collect::<Result<Vec<_>>>()?;
    let beta_bar: Vec<f64> = worst.iter().map(|w| w.beta_bar).collect();
    let certificate = certify(&prep.design.alpha, &beta_bar, &prep.scenario.budget(), &prep.design)?;
    Ok(Analysis {
        tables,
        worst,
        beta_bar,
        certificate,
    })
}
