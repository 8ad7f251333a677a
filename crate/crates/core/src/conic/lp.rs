//! Linear feasibility with strict rows, backed by `minilp`.
//!
//! Strict rows are not relaxed by a fixed epsilon before solving. Instead a
//! common slack `t` is maximised over every strict row and the system is
//! declared feasible iff `t* ≥ strict_eps`. This is the same set as
//! "`a·x ≥ b + strict_eps`", but the decision is made on a computed optimum
//! rather than on the simplex's own feasibility tolerance, which matters
//! for instances that sit exactly on a boundary.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpOp {
    Le,
    Ge,
    Eq,
    /// strict `<`
    Lt,
    /// strict `>`
    Gt,
}

impl LpOp {
    pub fn is_strict(self) -> bool {
        matches!(self, LpOp::Lt | LpOp::Gt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub op: LpOp,
    pub rhs: f64,
}

impl LpRow {
    pub fn new(coeffs: Vec<(usize, f64)>, op: LpOp, rhs: f64) -> Self {
        LpRow { coeffs, op, rhs }
    }

    fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum()
    }

    fn scale(&self) -> f64 {
        self.coeffs
            .iter()
            .fold(self.rhs.abs(), |m, &(_, c)| m.max(c.abs()))
            .max(1.0)
    }
}

/// Box-bounded variables plus affine rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LpProblem {
    pub bounds: Vec<(f64, f64)>,
    pub rows: Vec<LpRow>,
    /// Minimised when present.
    pub objective: Option<Vec<f64>>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self, lower: f64, upper: f64) -> usize {
        self.bounds.push((lower, upper));
        self.bounds.len() - 1
    }

    pub fn row(&mut self, coeffs: Vec<(usize, f64)>, op: LpOp, rhs: f64) {
        self.rows.push(LpRow::new(coeffs, op, rhs));
    }

    fn validate(&self) -> Result<()> {
        for (i, &(l, u)) in self.bounds.iter().enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidInput(format!("LP variable {i} has a non-finite bound")));
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(Error::InvalidInput("LP row with non-finite right side".into()));
            }
            for &(i, c) in &row.coeffs {
                if i >= self.bounds.len() || !c.is_finite() {
                    return Err(Error::InvalidInput(format!("LP row references bad variable {i}")));
                }
            }
        }
        if let Some(obj) = &self.objective {
            if obj.len() != self.bounds.len() {
                return Err(Error::InvalidInput("LP objective length mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Feasible(Vec<f64>),
    Infeasible,
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LpOutcome::Feasible(_))
    }
}

const NONSTRICT_TOL: f64 = 1e-9;

pub fn lp_feasible(p: &LpProblem, strict_eps: f64) -> Result<LpOutcome> {
    if !(strict_eps > 0.0) {
        return Err(Error::InvalidInput("strict_eps must be positive".into()));
    }
    p.validate()?;
    let has_strict = p.rows.iter().any(|r| r.op.is_strict());

    let witness = if has_strict {
        // Phase 1: max t over strict rows.
        let t_cap = (1e3 * strict_eps).max(1.0);
        match solve_with_slack(p, SlackMode::Maximise { cap: t_cap }, None)? {
            None => return Ok(LpOutcome::Infeasible),
            Some((x, t)) => {
                if t < strict_eps * (1.0 - 1e-9) {
                    return Ok(LpOutcome::Infeasible);
                }
                match &p.objective {
                    None => x,
                    Some(obj) => match solve_with_slack(p, SlackMode::Fixed(strict_eps), Some(obj))? {
                        Some((x, _)) => x,
                        None => x,
                    },
                }
            }
        }
    } else {
        match solve_with_slack(p, SlackMode::Fixed(0.0), p.objective.as_deref())? {
            None => return Ok(LpOutcome::Infeasible),
            Some((x, _)) => x,
        }
    };

    check_witness(p, &witness, strict_eps)?;
    Ok(LpOutcome::Feasible(witness))
}

enum SlackMode {
    Maximise { cap: f64 },
    Fixed(f64),
}

fn solve_with_slack(p: &LpProblem, mode: SlackMode, objective: Option<&[f64]>) -> Result<Option<(Vec<f64>, f64)>> {
    let maximise_slack = matches!(mode, SlackMode::Maximise { .. });
    let dir = if maximise_slack {
        OptimizationDirection::Maximize
    } else {
        OptimizationDirection::Minimize
    };
    let mut lp = Problem::new(dir);
    let vars: Vec<_> = p
        .bounds
        .iter()
        .enumerate()
        .map(|(i, &(l, u))| {
            let c = if maximise_slack { 0.0 } else { objective.map_or(0.0, |o| o[i]) };
            lp.add_var(c, (l, u))
        })
        .collect();
    let (t_var, fixed_t) = match mode {
        SlackMode::Maximise { cap } => (Some(lp.add_var(1.0, (0.0, cap))), 0.0),
        SlackMode::Fixed(t) => (None, t),
    };
    for row in &p.rows {
        let mut terms: Vec<_> = row.coeffs.iter().map(|&(i, c)| (vars[i], c)).collect();
        let (op, rhs) = match row.op {
            LpOp::Le => (ComparisonOp::Le, row.rhs),
            LpOp::Ge => (ComparisonOp::Ge, row.rhs),
            LpOp::Eq => (ComparisonOp::Eq, row.rhs),
            LpOp::Lt => {
                if let Some(t) = t_var {
                    terms.push((t, 1.0));
                    (ComparisonOp::Le, row.rhs)
                } else {
                    (ComparisonOp::Le, row.rhs - fixed_t)
                }
            }
            LpOp::Gt => {
                if let Some(t) = t_var {
                    terms.push((t, -1.0));
                    (ComparisonOp::Ge, row.rhs)
                } else {
                    (ComparisonOp::Ge, row.rhs + fixed_t)
                }
            }
        };
        lp.add_constraint(terms.as_slice(), op, rhs);
    }
    match lp.solve() {
        Ok(sol) => {
            let x: Vec<f64> = vars.iter().map(|&v| sol[v]).collect();
            let t = t_var.map_or(fixed_t, |t| sol[t]);
            Ok(Some((x, t)))
        }
        Err(minilp::Error::Infeasible) => Ok(None),
        Err(minilp::Error::Unbounded) => Err(Error::Solver("LP unexpectedly unbounded".into())),
    }
}

fn check_witness(p: &LpProblem, x: &[f64], strict_eps: f64) -> Result<()> {
    for (i, &(l, u)) in p.bounds.iter().enumerate() {
        let tol = NONSTRICT_TOL * l.abs().max(u.abs()).max(1.0);
        if x[i] < l - tol || x[i] > u + tol {
            return Err(Error::Solver(format!("LP witness violates bound of variable {i}")));
        }
    }
    for row in &p.rows {
        let v = row.lhs(x);
        let tol = NONSTRICT_TOL * row.scale();
        let ok = match row.op {
            LpOp::Le => v <= row.rhs + tol,
            LpOp::Ge => v >= row.rhs - tol,
            LpOp::Eq => (v - row.rhs).abs() <= tol,
            LpOp::Lt => v <= row.rhs - strict_eps + tol,
            LpOp::Gt => v >= row.rhs + strict_eps - tol,
        };
        if !ok {
            return Err(Error::Solver(format!(
                "LP witness failed re-verification on a {:?} row ({v} vs {})",
                row.op, row.rhs
            )));
        }
    }
    Ok(())
}
