//! Classical iterative soft-thresholding for `min ½‖Ax − y‖² + λ‖x‖₁`.

use rayon::prelude::*;

use crate::data::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Slack allowed on `τ‖A‖² ≤ 1`, since `‖A‖` is itself computed iteratively.
pub const STEP_SIZE_SLACK: f64 = 1e-9;

/// `sign(x) · max(0, |x| − λ)`.
#[inline]
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Entrywise soft-thresholding, in place.
pub fn soft_threshold_in_place(m: &mut Matrix, lambda: f64) {
    m.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = soft_threshold(*v, lambda));
}

/// Checks `τ‖A‖² ≤ 1` (up to [`STEP_SIZE_SLACK`]).
pub fn check_step_size(tau: f64, spec_norm: f64) -> Result<()> {
    if !(tau > 0.0) || tau * spec_norm * spec_norm > 1.0 + STEP_SIZE_SLACK {
        return Err(Error::StepSize {
            tau,
            norm: spec_norm,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct IstaProblem {
    a: MeasurementMatrix,
    y: Vec<f64>,
    lambda: f64,
    tau: f64,
}

impl IstaProblem {
    pub fn new(a: MeasurementMatrix, y: Vec<f64>, lambda: f64, tau: f64) -> Result<Self> {
        assert_eq!(a.rows(), y.len(), "measurement dimension mismatch");
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        check_step_size(tau, a.spec_norm())?;
        Ok(Self { a, y, lambda, tau })
    }

    pub fn a(&self) -> &MeasurementMatrix {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        objective(self.a.matrix(), &self.y, self.lambda, x)
    }
}

#[derive(Debug, Clone)]
pub struct IstaOutput {
    pub x: Vec<f64>,
    /// `F(x^k)` for `k = 0..=iters`, starting from `x⁰ = 0`.
    pub objective_trace: Vec<f64>,
}

/// `½‖Ax − y‖² + λ‖x‖₁`.
pub fn objective(a: &Matrix, y: &[f64], lambda: f64, x: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let fit: f64 = ax.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum();
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    0.5 * fit + lambda * l1
}

/// The argument `X + τAᵀ(Y − AX)` of the thresholding in one ISTA step.
///
/// The unfolded network evaluates its layers (after the first) with this
/// exact expression, so with an identity dictionary both produce
/// bit-identical iterates.
pub fn step_preactivation(a: &Matrix, y: &Matrix, x: &Matrix, tau: f64) -> Matrix {
    let residual = y - &a.matmul(x);
    let mut pre = a.t_matmul(&residual);
    pre.as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .for_each(|(g, &xi)| *g = xi + tau * *g);
    pre
}

/// One step `S_{τλ}[X + τAᵀ(Y − AX)]`, applied to every column of `X`.
pub fn ista_step(a: &Matrix, y: &Matrix, x: &Matrix, tau: f64, threshold: f64) -> Matrix {
    let mut next = step_preactivation(a, y, x, tau);
    soft_threshold_in_place(&mut next, threshold);
    next
}

pub fn ista_run(p: &IstaProblem, iters: usize) -> IstaOutput {
    let a = p.a.matrix();
    let y = Matrix::from_columns(std::slice::from_ref(&p.y));
    let mut x = Matrix::zeros(a.cols(), 1);
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(p.objective(x.as_slice()));
    for _ in 0..iters {
        x = ista_step(a, &y, &x, p.tau, p.tau * p.lambda);
        trace.push(p.objective(x.as_slice()));
    }
    IstaOutput {
        x: x.into_vec(),
        objective_trace: trace,
    }
}

/// Runs ISTA independently on every column of `Y`. Returns the final iterates.
///
/// Columns are processed in parallel chunks; each column's iterates do not
/// depend on the chunking.
pub fn ista_batch(a: &MeasurementMatrix, y: &Matrix, lambda: f64, tau: f64, iters: usize) -> Result<Matrix> {
    check_step_size(tau, a.spec_norm())?;
    const CHUNK: usize = 16;
    let starts: Vec<usize> = (0..y.cols()).step_by(CHUNK).collect();
    let chunks: Vec<Matrix> = starts
        .par_iter()
        .map(|&start| {
            let cols: Vec<usize> = (start..(start + CHUNK).min(y.cols())).collect();
            let yc = y.select_columns(&cols);
            let mut x = Matrix::zeros(a.cols(), cols.len());
            for _ in 0..iters {
                x = ista_step(a.matrix(), &yc, &x, tau, tau * lambda);
            }
            x
        })
        .collect();
    let mut x = Matrix::zeros(a.cols(), y.cols());
    for (&start, chunk) in starts.iter().zip(&chunks) {
        for j in 0..chunk.cols() {
            x.set_column(start + j, &chunk.column(j));
        }
    }
    Ok(x)
}
