//! Dense symmetric-matrix helpers shared by the solver layers.
//!
//! Everything here is a thin layer over `nalgebra`; the only policy
//! decisions are that inputs are symmetrised as `(M + Mᵀ)/2` before any
//! eigen-decomposition and that PSD checks take an explicit slack.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// General dense real matrix.
pub type Matrix = DMatrix<f64>;

/// Symmetry tolerance accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative PSD slack, scaled by the matrix max-abs entry.
pub const DEFAULT_PSD_SLACK: f64 = 1e-8;

/// A finite, square, symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, non-finite or asymmetric input.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let n = m.nrows();
        for p in 0..n {
            for q in (p + 1)..n {
                if (m[(p, q)] - m[(q, p)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({p},{q}): {} vs {}",
                        m[(p, q)],
                        m[(q, p)]
                    )));
                }
            }
        }
        Ok(SymMatrix(symmetrize(&m)))
    }

    /// Wraps `(m + mᵀ)/2`. Use for solver output carrying round-off asymmetry.
    pub fn symmetrized(m: &Matrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "cannot symmetrise a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(m)?;
        Ok(SymMatrix(symmetrize(m)))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        SymMatrix::new(Matrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SymMatrix::new(matrix_from_rows(rows)?)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// `a·self + b·other`, staying symmetric.
    pub fn lin_comb(&self, a: f64, other: &SymMatrix, b: f64) -> SymMatrix {
        SymMatrix(&self.0 * a + &other.0 * b)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Smallest and largest eigenvalue.
pub fn eig_extrema(m: &SymMatrix) -> Result<(f64, f64)> {
    check_finite(m)?;
    let eig = SymmetricEigen::new(m.0.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    Ok((min, max))
}

/// Inverse of a positive definite matrix.
///
/// Fails with [`Error::Conditioning`] when the smallest eigenvalue is below
/// `1e-9 × max|entry|`.
pub fn invert(m: &SymMatrix) -> Result<SymMatrix> {
    let (min, max) = eig_extrema(m)?;
    let scale = m.max_abs();
    if scale == 0.0 || min <= 1e-9 * scale {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::Conditioning { condition });
    }
    let chol = m
        .0
        .clone()
        .cholesky()
        .ok_or(Error::Conditioning { condition: max / min })?;
    SymMatrix::symmetrized(&chol.inverse())
}

/// True iff the smallest eigenvalue is at least `-slack`.
pub fn is_psd(m: &SymMatrix, slack: f64) -> bool {
    match eig_extrema(m) {
        Ok((min, _)) => min >= -slack,
        Err(_) => false,
    }
}

/// [`is_psd`] with the default slack scaled by the max-abs entry.
pub fn is_psd_default(m: &SymMatrix) -> bool {
    is_psd(m, DEFAULT_PSD_SLACK * m.max_abs())
}

/// Largest generalized eigenvalue of `(a, b)` with `b` positive definite:
/// the smallest `t` with `a ⪯ t·b`.
pub fn max_generalized_eig(a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "generalized eigenproblem with {}x{} and {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    let chol = b.0.clone().cholesky().ok_or_else(|| {
        Error::InvalidInput("generalized eigenproblem needs a positive definite right side".into())
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or(Error::Conditioning { condition: f64::INFINITY })?;
    let reduced = SymMatrix::symmetrized(&(&l_inv * &a.0 * l_inv.transpose()))?;
    Ok(eig_extrema(&reduced)?.1)
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Dimension("matrix with no rows".into()));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged or empty matrix rows".into()));
    }
    let m = Matrix::from_fn(r, c, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extrema_of_identity_and_diagonal() {
        assert_eq!(eig_extrema(&SymMatrix::identity(3)).unwrap(), (1.0, 1.0));
        let d = SymMatrix::from_diagonal(&[2.0, -1.0]).unwrap();
        let (lo, hi) = eig_extrema(&d).unwrap();
        assert!((lo + 1.0).abs() < 1e-14 && (hi - 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = Matrix::identity(2, 2);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(SymMatrix::new(m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn asymmetric_rejected_but_symmetrized_accepted() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0 + 1e-9, 1.0]);
        assert!(SymMatrix::new(m.clone()).is_err());
        let s = SymMatrix::symmetrized(&m).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
    }

    #[test]
    fn invert_simple_cases() {
        let id = SymMatrix::identity(4);
        assert_eq!(invert(&id).unwrap(), id);
        let d = invert(&SymMatrix::from_diagonal(&[2.0, 4.0]).unwrap()).unwrap();
        assert!((d[(0, 0)] - 0.5).abs() < 1e-15 && (d[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn invert_near_singular_reports_condition() {
        let d = SymMatrix::from_diagonal(&[1.0, 1e-12]).unwrap();
        match invert(&d) {
            Err(Error::Conditioning { condition }) => assert!(condition > 1e11),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn psd_checks() {
        assert!(is_psd(&SymMatrix::zeros(3), 0.0));
        assert!(is_psd(&SymMatrix::from_diagonal(&[-1e-12, 1.0]).unwrap(), 1e-8));
        assert!(!is_psd(&SymMatrix::from_diagonal(&[-1.0, 1.0]).unwrap(), 1e-8));
    }

    #[test]
    fn generalized_eig_matches_scaled_identity() {
        let a = SymMatrix::from_diagonal(&[2.0, 6.0]).unwrap();
        let b = SymMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        assert!((max_generalized_eig(&a, &b).unwrap() - 3.0).abs() < 1e-12);
    }

    fn sym_strategy(n: usize) -> impl Strategy<Value = SymMatrix> {
        prop::collection::vec(-5.0f64..5.0, n * n).prop_map(move |v| {
            SymMatrix::symmetrized(&Matrix::from_row_slice(n, n, &v)).unwrap()
        })
    }

    fn spd_strategy(n: usize) -> impl Strategy<Value = SymMatrix> {
        prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let a = Matrix::from_row_slice(n, n, &v);
            SymMatrix::symmetrized(&(&a * a.transpose() + Matrix::identity(n, n))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn rayleigh_quotient_within_extrema(m in sym_strategy(4), seeds in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 100)) {
            let (lo, hi) = eig_extrema(&m).unwrap();
            prop_assert!(lo <= hi);
            for v in seeds {
                let v = DVector::from_vec(v);
                let nv = v.norm_squared();
                if nv < 1e-6 { continue; }
                let r = m.quad_form(&v) / nv;
                prop_assert!(r >= lo - 1e-9 && r <= hi + 1e-9);
            }
        }

        #[test]
        fn invert_is_an_involution(m in spd_strategy(4)) {
            let back = invert(&invert(&m).unwrap()).unwrap();
            let rel = (back.as_matrix() - m.as_matrix()).norm() / m.as_matrix().norm();
            prop_assert!(rel < 1e-8);
            let residual = (m.as_matrix() * invert(&m).unwrap().as_matrix() - Matrix::identity(4, 4)).norm();
            prop_assert!(residual < 1e-8);
        }
    }
}
