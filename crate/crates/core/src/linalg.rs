//! Dense row-major linear algebra.
//!
//! Just enough for the rest of the crate: products (with transposed
//! variants so callers never materialize a transpose in hot loops), norms,
//! power iteration for the spectral norm, Householder QR for sampling Haar
//! orthogonal matrices, and a polar retraction onto `O(N)`.
//!
//! Dimension mismatches are programming errors and panic. Numerical failures
//! (non-convergence, singular input) are returned as [`Error`]s.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seeded_rng;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// A dense matrix stored in row-major order: `data[i * cols + j]` is `M[i, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidData {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// # Panics
    /// Panics on ragged or empty input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty(), "need at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "row {i} has {} entries, expected {cols}", r.len());
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Stacks equally sized vectors as the columns of a matrix.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        assert!(!columns.is_empty(), "need at least one column");
        let rows = columns[0].len();
        let cols = columns.len();
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, c);
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Fills a matrix with i.i.d. standard normal entries.
    pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        assert!(j < self.cols, "column {j} out of range for {} columns", self.cols);
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows, "column length mismatch");
        for (i, &v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = v;
        }
    }

    /// New matrix made of the given columns, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, indices.len());
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = &mut out.data[i * indices.len()..(i + 1) * indices.len()];
            for (d, &j) in dst.iter_mut().zip(indices) {
                *d = src[j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        let n = rhs.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs` without forming the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, rhs.rows,
            "t_matmul: ({}x{})ᵀ times {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        let n = rhs.cols;
        for k in 0..self.rows {
            let b_row = &rhs.data[k * n..(k + 1) * n];
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * rhsᵀ` without forming the transpose.
    pub fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_t: {}x{} times ({}x{})ᵀ",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a_row, rhs.row(j));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ * x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &v) in sq.iter_mut().zip(self.row(i)) {
                *s += v * v;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// Spectral norm with the default tolerance and iteration cap.
    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm(self, DEFAULT_TOL, DEFAULT_MAX_ITERS)
    }

    /// `‖MᵀM − I‖_F`.
    pub fn orthogonality_deviation(&self) -> f64 {
        let mut g = self.t_matmul(self);
        for i in 0..g.rows {
            g.data[i * g.cols + i] -= 1.0;
        }
        g.frobenius_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add<&Matrix> for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub<&Matrix> for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<&Matrix> for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const POWER_SEED: u64 = 0x5eed_5eed_2024;

/// Largest singular value by power iteration on `MᵀM`.
///
/// The iteration stops once the eigen-residual `‖MᵀMv − ρv‖` falls below
/// `tol · ρ`, where `ρ` is the Rayleigh quotient; that bounds the relative
/// error of `ρ` (hence of `√ρ`) by `tol`. The start vector is the normalized
/// all-ones vector plus a small seeded perturbation, so results are
/// deterministic and the start is never orthogonal to the top singular
/// vector by construction.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    assert!(m.rows > 0 && m.cols > 0, "spectral_norm of an empty matrix");
    assert!(tol > 0.0, "tol must be positive");
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let n = m.cols;
    let mut rng = seeded_rng(POWER_SEED, 0);
    let mut v = perturbed_ones(n, &mut rng);
    let mut rho = 0.0;
    let mut restarts = 0;
    for _ in 0..max_iters {
        let w = m.matvec(&v);
        let u = m.t_matvec(&w);
        rho = dot(&w, &w);
        let u_norm = norm2(&u);
        if u_norm == 0.0 {
            // Start landed in the null space.
            restarts += 1;
            if restarts > 8 {
                return Ok(0.0);
            }
            v = perturbed_ones(n, &mut rng);
            continue;
        }
        let residual = u
            .iter()
            .zip(&v)
            .map(|(ui, vi)| (ui - rho * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * rho {
            return Ok(rho.sqrt());
        }
        v = u.into_iter().map(|x| x / u_norm).collect();
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        estimate: rho.sqrt(),
    })
}

fn perturbed_ones<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let base = 1.0 / (n as f64).sqrt();
    let mut v: Vec<f64> = (0..n)
        .map(|_| base + 0.1 * base * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let nrm = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nrm);
    v
}

/// Haar-distributed orthogonal matrix: Householder QR of a seeded Gaussian
/// matrix, with the columns of `Q` sign-corrected so that `R` has a positive
/// diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    assert!(n >= 1, "dimension must be positive");
    let mut rng = seeded_rng(seed, 0);
    let g = Matrix::gaussian(n, n, &mut rng);
    let (q, r_diag) = householder_qr(&g);
    let mut q = q;
    for (j, &d) in r_diag.iter().enumerate() {
        if d < 0.0 {
            for i in 0..n {
                q.data[i * n + j] = -q.data[i * n + j];
            }
        }
    }
    q
}

/// Householder QR of a square matrix. Returns the explicit `Q` and the
/// diagonal of `R`.
fn householder_qr(a: &Matrix) -> (Matrix, Vec<f64>) {
    assert!(a.is_square());
    let n = a.rows;
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x: Vec<f64> = (k..n).map(|i| r[(i, k)]).collect();
        let alpha = norm2(&x);
        let mut v = x;
        if alpha == 0.0 {
            reflectors.push(vec![0.0; n - k]);
            continue;
        }
        let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += sign * alpha;
        let vn = norm2(&v);
        v.iter_mut().for_each(|t| *t /= vn);
        // R[k.., k..] -= 2 v (vᵀ R[k.., k..])
        for j in k..n {
            let s: f64 = (k..n).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..n {
                r[(i, j)] -= 2.0 * v[i - k] * s;
            }
        }
        reflectors.push(v);
    }
    let mut q = Matrix::identity(n);
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * q[(i, j)]).sum();
            if s != 0.0 {
                for i in k..n {
                    q[(i, j)] -= 2.0 * v[i - k] * s;
                }
            }
        }
    }
    let diag = (0..n).map(|i| r[(i, i)]).collect();
    (q, diag)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &Matrix) -> Result<Matrix> {
    assert!(m.is_square(), "invert needs a square matrix");
    let n = m.rows;
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let (pivot, pmax) = (col..n)
            .map(|i| (i, a[(i, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax == 0.0 {
            return Err(Error::NearSingular { sigma_min: 0.0 });
        }
        if pivot != col {
            for j in 0..n {
                a.data.swap(col * n + j, pivot * n + j);
                inv.data.swap(col * n + j, pivot * n + j);
            }
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a.data[i * n + j] -= f * a.data[col * n + j];
                inv.data[i * n + j] -= f * inv.data[col * n + j];
            }
        }
    }
    if !inv.is_finite() {
        return Err(Error::NearSingular { sigma_min: 0.0 });
    }
    Ok(inv)
}

const SINGULAR_FLOOR: f64 = 1e-12;
const NEWTON_SCHULZ_RADIUS: f64 = 0.5;

/// Nearest orthogonal matrix in Frobenius norm (the orthogonal polar factor).
///
/// Inputs within `0.5` of orthogonal (`‖MᵀM − I‖_F`) go straight to
/// Newton-Schulz steps `X ← X(3I − XᵀX)/2`, which converge quadratically
/// there. Others first run the scaled Newton iteration
/// `X ← (γX + X⁻ᵀ/γ)/2`. Inputs whose smallest singular value is at most
/// `1e-12` are rejected.
pub fn polar_retraction(m: &Matrix) -> Result<Matrix> {
    assert!(m.is_square(), "polar_retraction needs a square matrix");
    let n = m.rows;
    let mut x = m.clone();
    if m.orthogonality_deviation() >= NEWTON_SCHULZ_RADIUS {
        let inv = invert(m)?;
        let inv_norm = match spectral_norm(&inv, 1e-8, DEFAULT_MAX_ITERS) {
            Ok(v) => v,
            Err(Error::NoConvergence { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
        let sigma_min = 1.0 / inv_norm;
        if !(sigma_min > SINGULAR_FLOOR) {
            return Err(Error::NearSingular { sigma_min });
        }
        let mut x_inv = inv;
        let mut scaled = true;
        for _ in 0..100 {
            let gamma = if scaled {
                (x_inv.frobenius_norm() / x.frobenius_norm()).sqrt()
            } else {
                1.0
            };
            let mut next = x.scale(0.5 * gamma);
            next.axpy(0.5 / gamma, &x_inv.transpose());
            let step = (&next - &x).frobenius_norm();
            x = next;
            if step < 1e-2 {
                scaled = false;
            }
            if x.orthogonality_deviation() < NEWTON_SCHULZ_RADIUS.min(step) {
                break;
            }
            x_inv = invert(&x)?;
        }
    }
    let mut dev = x.orthogonality_deviation();
    for _ in 0..50 {
        if dev <= 1e-15 * n as f64 {
            break;
        }
        let mut g = x.t_matmul(&x).scale(-1.0);
        for i in 0..n {
            g[(i, i)] += 3.0;
        }
        let next = x.matmul(&g).scale(0.5);
        let next_dev = next.orthogonality_deviation();
        if next_dev >= dev {
            // Rounding floor reached.
            break;
        }
        x = next;
        dev = next_dev;
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    assert!(m.is_square(), "symmetric_eigenvalues needs a square matrix");
    let n = m.rows;
    let mut a = m.clone();
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    eig
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::InvalidData { expected: 4, got: 3 })
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0, 2.0, f64::NAN, 0.0]),
            Err(Error::NonFinite { row: 1, col: 0 })
        ));
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(Matrix::zeros(3, 2).frobenius_norm(), 0.0);
        assert!(close(Matrix::identity(3).frobenius_norm(), 3f64.sqrt(), 1e-15));
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(close(m.frobenius_norm(), 30f64.sqrt(), 1e-15));
    }

    #[test]
    fn spectral_norm_simple_cases() {
        let i4 = Matrix::identity(4);
        assert!(close(i4.spectral_norm().unwrap(), 1.0, 1e-12));
        let d = Matrix::diag(&[3.0, 1.0]);
        assert!(close(d.spectral_norm().unwrap(), 3.0, 1e-9));
        assert_eq!(Matrix::zeros(2, 3).spectral_norm().unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_rank_one_null_start() {
        // ones is in the null space of [1, -1]
        let m = Matrix::from_rows(&[&[1.0, -1.0]]);
        assert!(close(m.spectral_norm().unwrap(), 2f64.sqrt(), 1e-9));
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let mut rng = seeded_rng(3, 0);
        let m = Matrix::gaussian(30, 30, &mut rng);
        match spectral_norm(&m, 1e-15, 2) {
            Err(Error::NoConvergence { iterations, estimate }) => {
                assert_eq!(iterations, 2);
                assert!(estimate > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn products_agree_with_transpose() {
        let mut rng = seeded_rng(1, 0);
        let a = Matrix::gaussian(4, 3, &mut rng);
        let b = Matrix::gaussian(4, 5, &mut rng);
        let c = Matrix::gaussian(6, 3, &mut rng);
        let d1 = a.t_matmul(&b);
        let d2 = a.transpose().matmul(&b);
        assert!((&d1 - &d2).max_abs() < 1e-14);
        let e1 = a.matmul_t(&c);
        let e2 = a.matmul(&c.transpose());
        assert!((&e1 - &e2).max_abs() < 1e-14);
        let x = vec![1.0, -2.0, 0.5];
        let y1 = a.matvec(&x);
        let y2 = a.matmul(&Matrix::from_columns(std::slice::from_ref(&x))).column(0);
        assert_eq!(y1.len(), 4);
        for (p, q) in y1.iter().zip(&y2) {
            assert!(close(*p, *q, 1e-14));
        }
    }

    #[test]
    fn random_orthogonal_properties() {
        let q1 = random_orthogonal(1, 5);
        assert!(close(q1[(0, 0)].abs(), 1.0, 1e-15));
        for seed in 0..5 {
            let q = random_orthogonal(8, seed);
            assert!(q.orthogonality_deviation() <= 1e-10);
        }
        assert_eq!(random_orthogonal(6, 11), random_orthogonal(6, 11));
        assert_ne!(random_orthogonal(6, 11), random_orthogonal(6, 12));
    }

    #[test]
    fn polar_of_scaled_identity() {
        let m = Matrix::identity(3).scale(2.0);
        let p = polar_retraction(&m).unwrap();
        assert!((&p - &Matrix::identity(3)).max_abs() < 1e-12);
    }

    #[test]
    fn polar_fixed_point_on_orthogonal() {
        let q = random_orthogonal(7, 2);
        let p = polar_retraction(&q).unwrap();
        assert!((&p - &q).frobenius_norm() < 1e-10);
    }

    #[test]
    fn polar_rejects_singular() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(polar_retraction(&m), Err(Error::NearSingular { .. })));
        let tiny = Matrix::diag(&[1.0, 1e-14]);
        assert!(matches!(polar_retraction(&tiny), Err(Error::NearSingular { .. })));
    }

    #[test]
    fn invert_roundtrip() {
        let mut rng = seeded_rng(9, 0);
        let a = Matrix::gaussian(5, 5, &mut rng);
        let inv = invert(&a).unwrap();
        assert!((&a.matmul(&inv) - &Matrix::identity(5)).max_abs() < 1e-10);
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let e = symmetric_eigenvalues(&m);
        assert!(close(e[0], 1.0, 1e-12) && close(e[1], 3.0, 1e-12));
    }
}
