//! Exponential-stability certificate from the per-mode rates: the
//! unattacked rate `α_i` holds for `(1 − δ_i)T_i` steps of each dwell and
//! the worst attacked rate `β̄_i` for the remaining `δ_i T_i`.

use serde::{Deserialize, Serialize};

use crate::design::LyapunovDesign;
use crate::error::{Error, Result};
use crate::linalg::eig_extrema;

/// Per-mode caps on the number of attacked steps within one dwell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackBudget {
    pub duration_caps: Vec<usize>,
    pub dwell: Vec<usize>,
}

impl AttackBudget {
    pub fn attack_free(dwell: &[usize]) -> Self {
        AttackBudget {
            duration_caps: vec![0; dwell.len()],
            dwell: dwell.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_caps.len() != self.dwell.len() {
            return Err(Error::validation(
                "attack.duration_caps",
                format!("expected {} entries", self.dwell.len()),
            ));
        }
        for (i, (&c, &t)) in self.duration_caps.iter().zip(&self.dwell).enumerate() {
            if t == 0 {
                return Err(Error::validation(format!("system.dwell_times[{i}]"), "must be positive"));
            }
            if c > t {
                return Err(Error::validation(
                    format!("attack.duration_caps[{i}]"),
                    format!("attack duration {c} exceeds the dwell-time {t}"),
                ));
            }
        }
        Ok(())
    }

    /// Attacked fraction `δ_i = T̃_i / T_i` of each dwell.
    pub fn delta(&self) -> Vec<f64> {
        self.duration_caps
            .iter()
            .zip(&self.dwell)
            .map(|(&c, &t)| c as f64 / t as f64)
            .collect()
    }

    pub fn period(&self) -> usize {
        self.dwell.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub chi: f64,
    pub c: f64,
    pub theta: Vec<f64>,
    /// `Π α_i^{(1−δ_i)T_i} β̄_i^{δ_i T_i}`, equal to `χ^{2T}`.
    pub lhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CertOutcome {
    Certified(Certificate),
    NotCertified { lhs: f64, chi: f64 },
}

impl CertOutcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            CertOutcome::Certified(c) => Some(c),
            CertOutcome::NotCertified { .. } => None,
        }
    }

    pub fn chi(&self) -> f64 {
        match self {
            CertOutcome::Certified(c) => c.chi,
            CertOutcome::NotCertified { chi, .. } => *chi,
        }
    }
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        Some(i) => Err(Error::InvalidInput(format!("{name}[{i}] must be positive, got {}", v[i]))),
        None => Ok(()),
    }
}

/// Period product and its `2T`-th root. Worked in logs so long periods do
/// not under- or overflow.
pub fn chi_of(alpha: &[f64], beta_bar: &[f64], budget: &AttackBudget) -> Result<(f64, f64)> {
    check_positive("alpha", alpha)?;
    check_positive("beta_bar", beta_bar)?;
    budget.validate()?;
    if alpha.len() != budget.dwell.len() || beta_bar.len() != budget.dwell.len() {
        return Err(Error::Dimension(format!(
            "{} modes but {} rates and {} worst-case rates",
            budget.dwell.len(),
            alpha.len(),
            beta_bar.len()
        )));
    }
    let log_lhs: f64 = alpha
        .iter()
        .zip(beta_bar)
        .zip(budget.dwell.iter().zip(&budget.duration_caps))
        .map(|((&a, &b), (&t, &c))| (t - c) as f64 * a.ln() + c as f64 * b.ln())
        .sum();
    let t = budget.period() as f64;
    Ok((log_lhs.exp(), (log_lhs / (2.0 * t)).exp()))
}

/// Certifies `χ`-exponential stability; the envelope constant needs the
/// Lyapunov matrices.
pub fn certify(alpha: &[f64], beta_bar: &[f64], budget: &AttackBudget, design: &LyapunovDesign) -> Result<CertOutcome> {
    let (lhs, chi) = chi_of(alpha, beta_bar, budget)?;
    if chi >= 1.0 {
        return Ok(CertOutcome::NotCertified { lhs, chi });
    }
    let s = budget.dwell.len();
    if design.num_modes() != s {
        return Err(Error::Dimension(format!("design has {} modes, budget {s}", design.num_modes())));
    }
    let mut theta = Vec::with_capacity(s);
    for i in 1..=s {
        let (lo_prev, hi_prev) = eig_extrema(design.p_prev(i))?;
        let (lo_cur, hi_cur) = eig_extrema(design.p(i))?;
        let ratio = hi_prev.max(hi_cur) / lo_prev.min(lo_cur);
        let rate = beta_bar[i - 1].max(alpha[i - 1]);
        theta.push((rate * ratio).powf(budget.dwell[i - 1] as f64 / 2.0).max(1.0));
    }
    let (lo_s, hi_s) = eig_extrema(design.p(0))?;
    let c = theta.iter().product::<f64>() * (hi_s / lo_s).sqrt() / chi.powi(budget.period() as i32);
    Ok(CertOutcome::Certified(Certificate { chi, c, theta, lhs }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    /// `max_k ‖x(k)‖ / (c χᵏ ‖x(0)‖)`.
    pub max_ratio: f64,
    pub worst_k: usize,
    pub passed: bool,
    /// False when the trace broke the duration caps, in which case the
    /// envelope is not guaranteed.
    pub budget_respected: bool,
}

/// Compares a trajectory of state norms against `c χᵏ ‖x(0)‖`.
pub fn check_envelope(norms: &[f64], cert: &Certificate, budget_respected: bool) -> EnvelopeReport {
    let x0 = norms.first().copied().unwrap_or(0.0);
    let mut report = EnvelopeReport {
        max_ratio: 0.0,
        worst_k: 0,
        passed: true,
        budget_respected,
    };
    if x0 == 0.0 {
        return report;
    }
    for (k, &nk) in norms.iter().enumerate() {
        let r = nk / (cert.c * cert.chi.powi(k as i32) * x0);
        if r > report.max_ratio {
            report.max_ratio = r;
            report.worst_k = k;
        }
    }
    report.passed = report.max_ratio <= 1.0 + 1e-6;
    report
}
