//! Semidefinite programs in LMI form, solved through `clarabel`.
//!
//! Every LMI is stored as an affine symmetric matrix `F(x)` that must be
//! negative semidefinite, or `⪯ −margin·I` for strict inequalities. The
//! conic form handed to the solver is `s = svec(−F₀ − margin·I) − Σ xᵥ svec(Fᵥ)`
//! with `s` in the PSD triangle cone.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::expr::{Affine, AffineMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SymMatrix};

/// Slack (relative to the constraint magnitude) tolerated on LMIs when a
/// solution is re-verified.
pub const LMI_VERIFY_SLACK: f64 = 1e-6;
/// Slack tolerated on linear rows when a solution is re-verified.
pub const LINEAR_VERIFY_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVar {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// A named matrix of scalar decision variables. Symmetric variables share
/// ids across the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    ids: Vec<usize>,
}

impl MatrixVar {
    pub fn id(&self, i: usize, j: usize) -> usize {
        self.ids[i * self.cols + j]
    }

    pub fn expr(&self) -> AffineMatrix {
        AffineMatrix::from_ids(self.rows, self.cols, &self.ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// `expr ≤ 0`
    Le,
    /// `expr = 0`
    Eq,
    /// `expr ≥ 0`
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub expr: Affine,
    pub kind: RowKind,
}

/// `expr ⪯ −margin·I`; `margin == 0` is the non-strict form.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineMatrix,
    pub margin: f64,
}

/// Container for an LMI-constrained problem with a linear objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LmiProblem {
    vars: Vec<ScalarVar>,
    matrix_vars: Vec<MatrixVar>,
    lmis: Vec<LmiConstraint>,
    linear: Vec<LinearConstraint>,
    objective: Option<Affine>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scalar(&mut self, name: impl Into<String>, lower: Option<f64>, upper: Option<f64>) -> usize {
        self.vars.push(ScalarVar {
            name: name.into(),
            lower,
            upper,
        });
        self.vars.len() - 1
    }

    /// Full `rows × cols` matrix variable, each entry boxed by `bound` if given.
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize, bound: Option<(f64, f64)>) -> MatrixVar {
        let mut ids = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let (lo, hi) = bound.map_or((None, None), |(l, h)| (Some(l), Some(h)));
                ids.push(self.scalar(format!("{name}[{i},{j}]"), lo, hi));
            }
        }
        self.push_matrix_var(name, rows, cols, false, ids)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> MatrixVar {
        let mut ids = vec![0; n * n];
        for i in 0..n {
            for j in i..n {
                let id = self.scalar(format!("{name}[{i},{j}]"), None, None);
                ids[i * n + j] = id;
                ids[j * n + i] = id;
            }
        }
        self.push_matrix_var(name, n, n, true, ids)
    }

    fn push_matrix_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool, ids: Vec<usize>) -> MatrixVar {
        let mv = MatrixVar {
            name: name.to_string(),
            rows,
            cols,
            symmetric,
            ids,
        };
        self.matrix_vars.push(mv.clone());
        mv
    }

    /// `expr ⪯ 0`.
    pub fn add_lmi_nsd(&mut self, name: impl Into<String>, expr: AffineMatrix) {
        self.add_lmi(name, expr, 0.0);
    }

    /// `expr ⪯ −margin·I` with `margin > 0` standing in for `expr ≺ 0`.
    pub fn add_lmi(&mut self, name: impl Into<String>, expr: AffineMatrix, margin: f64) {
        self.lmis.push(LmiConstraint {
            name: name.into(),
            expr,
            margin,
        });
    }

    pub fn add_linear(&mut self, name: impl Into<String>, expr: Affine, kind: RowKind) {
        self.linear.push(LinearConstraint {
            name: name.into(),
            expr,
            kind,
        });
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = Some(objective);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[ScalarVar] {
        &self.vars
    }

    pub fn matrix_vars(&self) -> &[MatrixVar] {
        &self.matrix_vars
    }

    pub fn lmis(&self) -> &[LmiConstraint] {
        &self.lmis
    }

    pub fn linear(&self) -> &[LinearConstraint] {
        &self.linear
    }

    /// Multiplies every strict margin by `factor`.
    pub fn scale_margins(&mut self, factor: f64) {
        for lmi in &mut self.lmis {
            lmi.margin *= factor;
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        let check = |a: &Affine, what: &str| -> Result<()> {
            match a.max_var() {
                Some(v) if v >= n => Err(Error::InvalidInput(format!(
                    "{what} references undeclared variable {v}"
                ))),
                _ => Ok(()),
            }
        };
        for lmi in &self.lmis {
            if !lmi.expr.is_symmetric(1e-12) {
                return Err(Error::InvalidInput(format!("LMI `{}` is not symmetric", lmi.name)));
            }
            if lmi.margin < 0.0 || !lmi.margin.is_finite() {
                return Err(Error::InvalidInput(format!("LMI `{}` has invalid margin", lmi.name)));
            }
            for a in lmi.expr.entries() {
                check(a, &format!("LMI `{}`", lmi.name))?;
            }
        }
        for row in &self.linear {
            check(&row.expr, &format!("row `{}`", row.name))?;
        }
        if let Some(obj) = &self.objective {
            check(obj, "objective")?;
        }
        for v in &self.vars {
            if let (Some(l), Some(u)) = (v.lower, v.upper) {
                if l > u {
                    return Err(Error::InvalidInput(format!("variable `{}` has empty box", v.name)));
                }
            }
        }
        Ok(())
    }
}

/// Values of all scalar variables at a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiSolution {
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LmiSolution {
    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn matrix(&self, var: &MatrixVar) -> Matrix {
        Matrix::from_fn(var.rows, var.cols, |i, j| self.values[var.id(i, j)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmiOutcome {
    Optimal(LmiSolution),
    Infeasible,
    NumericalFailure(String),
}

#[derive(Debug, Clone)]
pub struct SolveSettings {
    pub max_iter: u32,
    pub tol: f64,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

struct ConicRows {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl ConicRows {
    fn push_row(&mut self, a: &Affine, b: f64) {
        let r = self.b.len();
        for (&id, &c) in &a.terms {
            self.rows.push(r);
            self.cols.push(id);
            self.vals.push(c);
        }
        self.b.push(b);
    }
}

/// Solves `p` and re-verifies any optimum against the original constraints.
pub fn solve_lmi(p: &LmiProblem) -> Result<LmiOutcome> {
    solve_lmi_with(p, &SolveSettings::default())
}

pub fn solve_lmi_with(p: &LmiProblem, settings: &SolveSettings) -> Result<LmiOutcome> {
    p.validate()?;
    let n = p.vars.len();
    let mut rows = ConicRows {
        rows: vec![],
        cols: vec![],
        vals: vec![],
        b: vec![],
    };
    let mut cones = Vec::new();

    // Equalities: a·x + c = 0  ->  s = -c - a·x = 0
    let eqs: Vec<_> = p.linear.iter().filter(|r| r.kind == RowKind::Eq).collect();
    for r in &eqs {
        rows.push_row(&r.expr, -r.expr.constant);
    }
    if !eqs.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(eqs.len()));
    }

    // Inequalities and variable boxes as `a·x + c ≤ 0`.
    let mut nonneg = 0;
    for r in p.linear.iter().filter(|r| r.kind != RowKind::Eq) {
        let e = if r.kind == RowKind::Ge { r.expr.scaled(-1.0) } else { r.expr.clone() };
        rows.push_row(&e, -e.constant);
        nonneg += 1;
    }
    for (id, v) in p.vars.iter().enumerate() {
        if let Some(u) = v.upper {
            rows.push_row(&Affine::var(id), u);
            nonneg += 1;
        }
        if let Some(l) = v.lower {
            rows.push_row(&Affine::term(id, -1.0), -l);
            nonneg += 1;
        }
    }
    if nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg));
    }

    // LMIs: s = svec(-F(x) - margin I), upper triangle column-major.
    let sqrt2 = std::f64::consts::SQRT_2;
    for lmi in &p.lmis {
        let d = lmi.expr.rows();
        for j in 0..d {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { sqrt2 };
                let entry = lmi.expr.get(i, j);
                let mut b = -entry.constant;
                if i == j {
                    b -= lmi.margin;
                }
                rows.push_row(&entry.scaled(scale), b * scale);
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(d));
    }

    let m = rows.b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows.rows, rows.cols, rows.vals);
    let pmat = CscMatrix::<f64>::zeros((n, n));
    let mut q = vec![0.0; n];
    let obj_const = match &p.objective {
        Some(obj) => {
            for (&id, &c) in &obj.terms {
                q[id] = c;
            }
            obj.constant
        }
        None => 0.0,
    };

    let s = DefaultSettings::<f64> {
        verbose: false,
        max_iter: settings.max_iter,
        tol_gap_abs: settings.tol,
        tol_gap_rel: settings.tol,
        tol_feas: settings.tol,
        ..Default::default()
    };

    let mut solver = match DefaultSolver::new(&pmat, &q, &a, &rows.b, &cones, s) {
        Ok(solver) => solver,
        Err(e) => return Ok(LmiOutcome::NumericalFailure(format!("solver setup: {e:?}"))),
    };
    solver.solve();
    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let values = solver.solution.x.clone();
            let objective = p.objective.as_ref().map_or(0.0, |o| o.eval(&values));
            debug_assert!((objective - (solver.solution.obj_val + obj_const)).abs() < 1e-3 * (1.0 + objective.abs()));
            let sol = LmiSolution { values, objective };
            match verify(p, &sol) {
                Ok(()) => Ok(LmiOutcome::Optimal(sol)),
                Err(detail) => Ok(LmiOutcome::NumericalFailure(format!(
                    "{status:?} but post-solve verification failed: {detail}"
                ))),
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Ok(LmiOutcome::Infeasible),
        other => Ok(LmiOutcome::NumericalFailure(format!("solver status {other:?}"))),
    }
}

/// Independent constraint evaluation of a candidate solution.
pub fn verify(p: &LmiProblem, sol: &LmiSolution) -> std::result::Result<(), String> {
    let x = &sol.values;
    if x.len() != p.vars.len() || x.iter().any(|v| !v.is_finite()) {
        return Err("non-finite or wrongly sized solution".into());
    }
    for lmi in &p.lmis {
        let f = lmi.expr.eval(x);
        let neg = SymMatrix::symmetrized(&(-f)).map_err(|e| e.to_string())?;
        let slack = LMI_VERIFY_SLACK * neg.max_abs().max(1.0);
        if !linalg::is_psd(&neg, slack) {
            let (lo, _) = linalg::eig_extrema(&neg).map_err(|e| e.to_string())?;
            return Err(format!("LMI `{}` violated: max eigenvalue {:.3e}", lmi.name, -lo));
        }
    }
    for row in &p.linear {
        let v = row.expr.eval(x);
        let slack = LINEAR_VERIFY_SLACK * row.expr.magnitude().max(1.0);
        let ok = match row.kind {
            RowKind::Le => v <= slack,
            RowKind::Ge => v >= -slack,
            RowKind::Eq => v.abs() <= slack,
        };
        if !ok {
            return Err(format!("row `{}` violated by {v:.3e}", row.name));
        }
    }
    for (id, var) in p.vars.iter().enumerate() {
        let v = x[id];
        if let Some(u) = var.upper {
            if v > u + LINEAR_VERIFY_SLACK * u.abs().max(1.0) {
                return Err(format!("`{}` above its bound", var.name));
            }
        }
        if let Some(l) = var.lower {
            if v < l - LINEAR_VERIFY_SLACK * l.abs().max(1.0) {
                return Err(format!("`{}` below its bound", var.name));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_eigenvalue_as_sdp() {
        // min t  s.t.  diag(1,2) - t I ⪯ 0
        let mut p = LmiProblem::new();
        let t = p.scalar("t", None, None);
        let mut f = AffineMatrix::constant(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])));
        for i in 0..2 {
            f.get_mut(i, i).add_term(t, -1.0);
        }
        p.add_lmi_nsd("eig", f);
        p.minimize(Affine::var(t));
        match solve_lmi(&p).unwrap() {
            LmiOutcome::Optimal(sol) => assert!((sol.value(t) - 2.0).abs() < 1e-6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn infeasible_lmi_detected() {
        // x ⪯ -1 and x ≥ 0
        let mut p = LmiProblem::new();
        let x = p.scalar("x", Some(0.0), None);
        p.add_lmi("neg", AffineMatrix::from_ids(1, 1, &[x]), 1.0);
        assert_eq!(solve_lmi(&p).unwrap(), LmiOutcome::Infeasible);
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut p = LmiProblem::new();
        p.add_linear("bad", Affine::var(4), RowKind::Le);
        assert!(solve_lmi(&p).is_err());
    }

    #[test]
    fn asymmetric_lmi_rejected() {
        let mut p = LmiProblem::new();
        let x = p.scalar("x", None, None);
        let mut f = AffineMatrix::zeros(2, 2);
        f.get_mut(0, 1).add_term(x, 1.0);
        p.add_lmi_nsd("asym", f);
        assert!(matches!(solve_lmi(&p), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn linear_rows_and_equalities() {
        // min x + y  s.t. x + y >= 1, x - y = 0.5, x,y in [0, 10]
        let mut p = LmiProblem::new();
        let x = p.scalar("x", Some(0.0), Some(10.0));
        let y = p.scalar("y", Some(0.0), Some(10.0));
        p.add_linear("sum", Affine::var(x) + Affine::var(y) - Affine::constant(1.0), RowKind::Ge);
        p.add_linear("diff", Affine::var(x) - Affine::var(y) - Affine::constant(0.5), RowKind::Eq);
        p.minimize(Affine::var(x) + Affine::var(y));
        match solve_lmi(&p).unwrap() {
            LmiOutcome::Optimal(sol) => {
                assert!((sol.value(x) - 0.75).abs() < 1e-6);
                assert!((sol.value(y) - 0.25).abs() < 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_solves_agree() {
        let build = || {
            let mut p = LmiProblem::new();
            let t = p.scalar("t", None, None);
            let m = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
            let mut f = AffineMatrix::constant(&m);
            for i in 0..2 {
                f.get_mut(i, i).add_term(t, -1.0);
            }
            p.add_lmi_nsd("eig", f);
            p.minimize(Affine::var(t));
            p
        };
        let a = solve_lmi(&build()).unwrap();
        let b = solve_lmi(&build()).unwrap();
        match (a, b) {
            (LmiOutcome::Optimal(x), LmiOutcome::Optimal(y)) => {
                assert!((x.objective - y.objective).abs() < 1e-7);
                assert!((x.objective - (1.5 + 0.5f64.sqrt())).abs() < 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
