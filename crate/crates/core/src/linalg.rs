//! Dense small-matrix primitives: sign-based splits, diagonally weighted
//! infinity norms and matrix measures, and Perron data via power iteration.
//!
//! Everything here works on row-major `f64` storage. Dimensions in this crate
//! are small (hidden widths up to a few hundred), so no attempt is made at
//! sparse or blocked kernels.

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} does not equal {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from a slice of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f` to every entry, returning a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Entrywise absolute value.
    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Unweighted infinity operator norm: max absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A x` without allocating.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.rows, "matvec output dimension mismatch");
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += row[j] * x[j];
            }
            y[i] = acc;
        }
    }

    /// `A^T x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_transpose dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..self.cols {
                y[j] += row[j] * x[i];
            }
        }
        y
    }

    /// `A B`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Elementwise `max(B, 0)`.
    pub fn positive_part(&self) -> Matrix {
        self.map(|v| v.max(0.0))
    }

    /// Elementwise `min(B, 0)`; `positive_part + negative_part == B` exactly.
    pub fn negative_part(&self) -> Matrix {
        self.map(|v| v.min(0.0))
    }

    /// Metzler part: keeps the diagonal and nonnegative off-diagonal entries,
    /// zeroes negative off-diagonal entries.
    pub fn metzler_part(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.get(i, j) < 0.0 {
                    out.set(i, j, 0.0);
                }
            }
        }
        Ok(out)
    }

    /// Non-Metzler remainder: `A - metzler_part(A)`. Zero diagonal, entries <= 0.
    pub fn nonmetzler_part(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && self.get(i, j) < 0.0 {
                    out.set(i, j, self.get(i, j));
                }
            }
        }
        Ok(out)
    }

    /// Metzler majorant: diagonal kept as-is, off-diagonal replaced by its
    /// absolute value. Its dominant eigenvalue is the smallest achievable
    /// weighted measure of `self` over all positive weight vectors.
    pub fn metzler_majorant(&self) -> Result<Matrix> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = self.get(i, j);
                out.set(i, j, if i == j { v } else { v.abs() });
            }
        }
        Ok(out)
    }
}

/// Strictly positive weight vector for diagonally weighted norms.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveWeight(Vec<f64>);

impl PositiveWeight {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NonPositiveWeight);
        }
        Ok(Self(entries))
    }

    pub fn ones(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Elementwise reciprocal, still a valid positive weight.
    pub fn recip(&self) -> Self {
        Self(self.0.iter().map(|v| 1.0 / v).collect())
    }
}

/// Diagonally weighted infinity norm `max_i |x_i| / eta_i`.
pub fn weighted_inf_norm(x: &[f64], eta: &PositiveWeight) -> f64 {
    assert_eq!(x.len(), eta.dim(), "weighted norm dimension mismatch");
    x.iter()
        .zip(eta.as_slice())
        .fold(0.0, |m, (v, w)| m.max(v.abs() / w))
}

/// Diagonally weighted infinity matrix measure
/// `max_i ( A_ii + sum_{j != i} (eta_j / eta_i) |A_ij| )`.
///
/// Invariant under uniform scaling of `eta`; with all-ones weights it reduces
/// to the plain infinity measure.
pub fn weighted_matrix_measure(a: &Matrix, eta: &PositiveWeight) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if a.rows() != eta.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measure of {}x{} matrix with weight of dim {}",
            a.rows(),
            a.cols(),
            eta.dim()
        )));
    }
    let n = a.rows();
    let w = eta.as_slice();
    let mut mu = f64::NEG_INFINITY;
    for i in 0..n {
        let row = a.row(i);
        let mut acc = row[i];
        for j in 0..n {
            if j != i {
                acc += (w[j] / w[i]) * row[j].abs();
            }
        }
        mu = mu.max(acc);
    }
    Ok(mu)
}

/// Outcome of one power-iteration run on a nonnegative matrix.
struct PowerIterate {
    vector: Vec<f64>,
    lambda: f64,
    converged: bool,
}

/// Power iteration on a (shifted) nonnegative matrix `b`, normalizing so the
/// largest entry is 1. Convergence requires the relative change of both the
/// eigenvalue estimate and the vector to fall below `tol`.
fn power_iteration(b: &Matrix, tol: f64, max_iter: usize) -> PowerIterate {
    let n = b.rows();
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        b.matvec_into(&x, &mut y);
        let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            // Annihilated by a nilpotent matrix; restart from a perturbed point.
            return PowerIterate {
                vector: x,
                lambda: 0.0,
                converged: false,
            };
        }
        // Rayleigh-style estimate: dominant ratio over the largest coordinates.
        let mut new_lambda = 0.0f64;
        for i in 0..n {
            if x[i] >= 0.5 {
                new_lambda = new_lambda.max(y[i] / x[i]);
            }
        }
        let mut delta_vec = 0.0f64;
        for i in 0..n {
            let xi = y[i] / peak;
            delta_vec = delta_vec.max((xi - x[i]).abs());
            x[i] = xi;
        }
        let delta_lam = (new_lambda - lambda).abs();
        lambda = new_lambda;
        if it > 1 && delta_lam <= tol * (1.0 + lambda.abs()) && delta_vec <= tol {
            return PowerIterate {
                vector: x,
                lambda,
                converged: true,
            };
        }
    }
    PowerIterate {
        vector: x,
        lambda,
        converged: false,
    }
}

/// Shift that makes power iteration on a nonnegative matrix well behaved:
/// a tiny epsilon for reducible/nilpotent inputs plus a spectral offset that
/// separates the dominant eigenvalue of imprimitive (periodic) matrices.
fn primitivity_shift(max_abs: f64) -> f64 {
    1e-12 * (1.0 + max_abs) + 0.5 * max_abs
}

/// Approximates the spectral radius of `|A|` by power iteration.
pub fn spectral_radius_abs(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let (_, lambda) = perron_vector_abs(a, tol, max_iter)?;
    Ok(lambda)
}

/// Right Perron pair of `|A|`: a strictly positive vector `eta` (normalized so
/// its largest entry is 1) and `lambda >= 0` with `|A| eta ~= lambda eta`.
///
/// The iteration actually runs on `|A| + tau I`; the shift keeps reducible
/// inputs positive and separates the dominant eigenvalue of periodic ones, and
/// is subtracted from the returned eigenvalue. A zero matrix yields
/// `(all-ones, 0)`.
pub fn perron_vector_abs(a: &Matrix, tol: f64, max_iter: usize) -> Result<(PositiveWeight, f64)> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let b = a.abs();
    let max_abs = b.max_abs();
    if max_abs == 0.0 {
        return Ok((PositiveWeight::ones(a.rows()), 0.0));
    }
    let tau = primitivity_shift(max_abs);
    let mut shifted = b;
    for i in 0..a.rows() {
        let v = shifted.get(i, i);
        shifted.set(i, i, v + tau);
    }
    let run = power_iteration(&shifted, tol, max_iter);
    if !run.converged {
        return Err(Error::NonConvergence { max_iter });
    }
    let eta = PositiveWeight::new(run.vector).map_err(|_| Error::NonConvergence { max_iter })?;
    Ok((eta, (run.lambda - tau).max(0.0)))
}

/// One step of max-normalized power iteration, exposed for specialized loops
/// (the well-posedness search interleaves its own stopping rule).
pub(crate) fn power_step(b: &Matrix, x: &mut [f64], scratch: &mut [f64]) -> (f64, f64) {
    let n = b.rows();
    b.matvec_into(x, scratch);
    let peak = scratch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return (0.0, 0.0);
    }
    let mut lambda = 0.0f64;
    for i in 0..n {
        if x[i] >= 0.5 {
            lambda = lambda.max(scratch[i] / x[i]);
        }
    }
    let mut delta = 0.0f64;
    for i in 0..n {
        let xi = scratch[i] / peak;
        delta = delta.max((xi - x[i]).abs());
        x[i] = xi;
    }
    (lambda, delta)
}

/// Shift used by the well-posedness search to make a Metzler matrix
/// nonnegative and its power iteration well behaved.
pub(crate) fn metzler_power_shift(m: &Matrix) -> f64 {
    let n = m.rows();
    let min_diag = (0..n).map(|i| m.get(i, i)).fold(f64::INFINITY, f64::min);
    primitivity_shift(m.max_abs()) + (-min_diag).max(0.0)
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve_linear: {}x{} matrix with rhs of dim {}",
            n,
            n,
            b.len()
        )));
    }
    let mut lu = a.data.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        // Pivot.
        let mut piv = col;
        let mut best = lu[col * n + col].abs();
        for r in col + 1..n {
            let v = lu[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::SingularSystem);
        }
        if piv != col {
            for j in 0..n {
                lu.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = lu[col * n + col];
        for r in col + 1..n {
            let factor = lu[r * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            lu[r * n + col] = 0.0;
            for j in col + 1..n {
                lu[r * n + j] -= factor * lu[col * n + j];
            }
            x[r] -= factor * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= lu[col * n + j] * x[j];
        }
        x[col] = acc / lu[col * n + col];
        if !x[col].is_finite() {
            return Err(Error::SingularSystem);
        }
    }
    Ok(x)
}
