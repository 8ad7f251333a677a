//! Affine scalar and matrix expressions over a flat vector of decision
//! variables.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::linalg::Matrix;

/// `constant + Σ coeff·x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub constant: f64,
    pub terms: BTreeMap<usize, f64>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    pub fn var(id: usize) -> Self {
        Affine::term(id, 1.0)
    }

    pub fn term(id: usize, coeff: f64) -> Self {
        let mut terms = BTreeMap::new();
        if coeff != 0.0 {
            terms.insert(id, coeff);
        }
        Affine {
            constant: 0.0,
            terms,
        }
    }

    pub fn add_term(&mut self, id: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let e = self.terms.entry(id).or_insert(0.0);
        *e += coeff;
        if *e == 0.0 {
            self.terms.remove(&id);
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        if s == 0.0 {
            return;
        }
        self.constant += s * other.constant;
        for (&id, &c) in &other.terms {
            self.add_term(id, s * c);
        }
    }

    pub fn scaled(&self, s: f64) -> Affine {
        let mut out = Affine::default();
        out.add_scaled(self, s);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&i, &c)| c * x[i]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    /// Max-abs over the constant and all coefficients.
    pub fn magnitude(&self) -> f64 {
        self.terms
            .values()
            .fold(self.constant.abs(), |m, c| m.max(c.abs()))
    }

    fn approx_eq(&self, other: &Affine, tol: f64) -> bool {
        if (self.constant - other.constant).abs() > tol {
            return false;
        }
        let keys = self.terms.keys().chain(other.terms.keys());
        for k in keys {
            let a = self.terms.get(k).copied().unwrap_or(0.0);
            let b = other.terms.get(k).copied().unwrap_or(0.0);
            if (a - b).abs() > tol {
                return false;
            }
        }
        true
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(self, rhs: f64) -> Affine {
        self.scaled(rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scaled(-1.0)
    }
}

/// A matrix whose entries are affine in the decision variables (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Affine>,
}

impl AffineMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineMatrix {
            rows,
            cols,
            data: vec![Affine::default(); rows * cols],
        }
    }

    pub fn constant(m: &Matrix) -> Self {
        let mut out = AffineMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.data[i * m.ncols() + j].constant = m[(i, j)];
            }
        }
        out
    }

    /// Builds from per-entry variable ids (row-major).
    pub fn from_ids(rows: usize, cols: usize, ids: &[usize]) -> Self {
        assert_eq!(ids.len(), rows * cols);
        AffineMatrix {
            rows,
            cols,
            data: ids.iter().map(|&id| Affine::var(id)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Affine {
        &self.data[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Affine {
        &mut self.data[i * self.cols + j]
    }

    pub fn entries(&self) -> impl Iterator<Item = &Affine> {
        self.data.iter()
    }

    pub fn transpose(&self) -> AffineMatrix {
        let mut out = AffineMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.get_mut(j, i) = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> AffineMatrix {
        AffineMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a.scaled(s)).collect(),
        }
    }

    /// `c · self` for a constant matrix `c`.
    pub fn left_mul(&self, c: &Matrix) -> AffineMatrix {
        assert_eq!(c.ncols(), self.rows, "left_mul dimension mismatch");
        let mut out = AffineMatrix::zeros(c.nrows(), self.cols);
        for i in 0..c.nrows() {
            for k in 0..self.rows {
                let ck = c[(i, k)];
                if ck == 0.0 {
                    continue;
                }
                for j in 0..self.cols {
                    let src = self.get(k, j).clone();
                    out.get_mut(i, j).add_scaled(&src, ck);
                }
            }
        }
        out
    }

    /// `self · c` for a constant matrix `c`.
    pub fn right_mul(&self, c: &Matrix) -> AffineMatrix {
        self.transpose().left_mul(&c.transpose()).transpose()
    }

    /// Block assembly. `None` blocks are zero; every block row must contain
    /// at least one `Some` to fix its height (likewise for columns).
    pub fn blocks(grid: Vec<Vec<Option<AffineMatrix>>>) -> AffineMatrix {
        let br = grid.len();
        let bc = grid[0].len();
        let heights: Vec<usize> = (0..br)
            .map(|i| {
                grid[i]
                    .iter()
                    .flatten()
                    .map(|b| b.rows)
                    .next()
                    .expect("block row without a sized block")
            })
            .collect();
        let widths: Vec<usize> = (0..bc)
            .map(|j| {
                grid.iter()
                    .filter_map(|row| row[j].as_ref())
                    .map(|b| b.cols)
                    .next()
                    .expect("block column without a sized block")
            })
            .collect();
        let rows = heights.iter().sum();
        let cols = widths.iter().sum();
        let mut out = AffineMatrix::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.into_iter().enumerate() {
            let mut c0 = 0;
            for (bj, block) in row.into_iter().enumerate() {
                if let Some(b) = block {
                    assert!(
                        b.rows == heights[bi] && b.cols == widths[bj],
                        "inconsistent block sizes"
                    );
                    for i in 0..b.rows {
                        for j in 0..b.cols {
                            *out.get_mut(r0 + i, c0 + j) = b.get(i, j).clone();
                        }
                    }
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if !self.get(i, j).approx_eq(self.get(j, i), tol) {
                    return false;
                }
            }
        }
        true
    }

    pub fn magnitude(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.magnitude()))
    }
}

impl Add for AffineMatrix {
    type Output = AffineMatrix;
    fn add(mut self, rhs: AffineMatrix) -> AffineMatrix {
        assert!(self.rows == rhs.rows && self.cols == rhs.cols, "add dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            a.add_scaled(b, 1.0);
        }
        self
    }
}

impl Sub for AffineMatrix {
    type Output = AffineMatrix;
    fn sub(self, rhs: AffineMatrix) -> AffineMatrix {
        self + rhs.scale(-1.0)
    }
}

impl Neg for AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self.scale(-1.0)
    }
}
