//! The `L`-layer unfolded thresholding network with a shared dictionary.
//!
//! Layer one computes `z₁ = S_{τλ}(τWᵀy)` and every further layer
//! `z ← S_{τλ}(z + τWᵀ(y − Wz))` with `W = AΦ`. The output is
//! `σ(D z_L)` where `D = Φ` (class H1) or an independent `Ψ` (class H2) and
//! `σ` clips to the ball of radius `B_out`.

use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::data::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::ista::{check_step_size, soft_threshold_in_place, step_preactivation};
use crate::linalg::{norm2, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypothesisClass {
    /// Decoder is the dictionary `Φ` itself.
    H1,
    /// Decoder is a separate orthogonal `Ψ`.
    H2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub layers: usize,
    pub tau: f64,
    pub lambda: f64,
    pub b_out: f64,
    pub class: HypothesisClass,
}

impl NetConfig {
    pub fn threshold(&self) -> f64 {
        self.tau * self.lambda
    }

    /// Checks the scalar parameters and the step-size condition against `A`.
    pub fn validate(&self, a: &MeasurementMatrix) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::InvalidParameter("layers must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.b_out > 0.0) || !self.b_out.is_finite() {
            return Err(Error::InvalidParameter(format!("b_out must be positive, got {}", self.b_out)));
        }
        check_step_size(self.tau, a.spec_norm())
    }
}

/// Trainable parameters: `Φ`, and `Ψ` for class H2.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub phi: Matrix,
    pub psi: Option<Matrix>,
}

impl NetParams {
    pub fn h1(phi: Matrix) -> Self {
        assert!(phi.is_square(), "dictionary must be square");
        Self { phi, psi: None }
    }

    pub fn h2(phi: Matrix, psi: Matrix) -> Self {
        assert!(phi.is_square(), "dictionary must be square");
        assert_eq!(phi.shape(), psi.shape(), "Φ and Ψ must have the same shape");
        Self { phi, psi: Some(psi) }
    }

    pub fn class(&self) -> HypothesisClass {
        match self.psi {
            None => HypothesisClass::H1,
            Some(_) => HypothesisClass::H2,
        }
    }

    pub fn dim(&self) -> usize {
        self.phi.rows()
    }

    /// The matrix applied after the last layer.
    pub fn decoder(&self) -> &Matrix {
        self.psi.as_ref().unwrap_or(&self.phi)
    }

    /// Largest `‖DᵀD − I‖_F` over the dictionaries held.
    pub fn ortho_deviation(&self) -> f64 {
        let d = self.phi.orthogonality_deviation();
        match &self.psi {
            Some(psi) => d.max(psi.orthogonality_deviation()),
            None => d,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.phi.is_finite() && self.psi.as_ref().is_none_or(Matrix::is_finite)
    }
}

/// Intermediates of a forward pass, enough for exact reverse mode.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `W = AΦ`.
    pub w: Matrix,
    /// Argument of the thresholding at each layer.
    pub preactivations: Vec<Matrix>,
    /// Layer outputs `z_l`.
    pub postactivations: Vec<Matrix>,
    /// `D z_L` before clipping.
    pub decoded: Matrix,
    pub clipped: Vec<bool>,
    /// `B_out / ‖u‖` for clipped columns, `1` otherwise.
    pub clip_scale: Vec<f64>,
}

impl ForwardTape {
    /// Output of the last layer, `f_Φᴸ(Y)`.
    pub fn features(&self) -> &Matrix {
        self.postactivations.last().expect("network has at least one layer")
    }

    /// Whether two tapes took the same branch at every threshold and clip.
    pub fn same_pattern(&self, other: &ForwardTape, threshold: f64) -> bool {
        self.clipped == other.clipped
            && self
                .preactivations
                .iter()
                .zip(&other.preactivations)
                .all(|(p, q)| {
                    p.as_slice()
                        .iter()
                        .zip(q.as_slice())
                        .all(|(a, b)| (a.abs() > threshold) == (b.abs() > threshold))
                })
    }
}

fn check_dims(a: &MeasurementMatrix, params: &NetParams, y: &Matrix) {
    assert_eq!(params.dim(), a.cols(), "dictionary size must match the signal dimension");
    assert_eq!(y.rows(), a.rows(), "measurement dimension mismatch");
}

/// Runs the `L` thresholding layers and returns every intermediate.
fn layers(a: &MeasurementMatrix, phi: &Matrix, cfg: &NetConfig, y: &Matrix) -> (Matrix, Vec<Matrix>, Vec<Matrix>) {
    let w = a.matrix().matmul(phi);
    let threshold = cfg.threshold();
    let mut pre = Vec::with_capacity(cfg.layers);
    let mut post: Vec<Matrix> = Vec::with_capacity(cfg.layers);

    let first = w.t_matmul(y).scale(cfg.tau);
    for l in 0..cfg.layers {
        let p = match post.last() {
            None => first.clone(),
            Some(z) => step_preactivation(&w, y, z, cfg.tau),
        };
        let mut z = p.clone();
        soft_threshold_in_place(&mut z, threshold);
        debug_assert_eq!(pre.len(), l);
        pre.push(p);
        post.push(z);
    }
    (w, pre, post)
}

/// `f_Φᴸ(Y)`, the output of the last thresholding layer for every column.
pub fn features(a: &MeasurementMatrix, phi: &Matrix, cfg: &NetConfig, y: &Matrix) -> Matrix {
    assert_eq!(phi.rows(), a.cols(), "dictionary size must match the signal dimension");
    assert_eq!(y.rows(), a.rows(), "measurement dimension mismatch");
    let (_, _, mut post) = layers(a, phi, cfg, y);
    post.pop().expect("network has at least one layer")
}

/// Reconstructions `X̂ = σ(D f_Φᴸ(Y))` for every column of `Y`.
pub fn forward(a: &MeasurementMatrix, params: &NetParams, cfg: &NetConfig, y: &Matrix) -> (Matrix, ForwardTape) {
    check_dims(a, params, y);
    let (w, preactivations, postactivations) = layers(a, &params.phi, cfg, y);
    let decoded = params.decoder().matmul(postactivations.last().expect("network has at least one layer"));

    let mut out = decoded.clone();
    let mut clipped = Vec::with_capacity(y.cols());
    let mut clip_scale = Vec::with_capacity(y.cols());
    for (j, norm) in decoded.column_norms().into_iter().enumerate() {
        if norm > cfg.b_out {
            let s = cfg.b_out / norm;
            for i in 0..out.rows() {
                out[(i, j)] *= s;
            }
            clipped.push(true);
            clip_scale.push(s);
        } else {
            clipped.push(false);
            clip_scale.push(1.0);
        }
    }
    let tape = ForwardTape {
        w,
        preactivations,
        postactivations,
        decoded,
        clipped,
        clip_scale,
    };
    (out, tape)
}

pub fn predict(a: &MeasurementMatrix, params: &NetParams, cfg: &NetConfig, y: &Matrix) -> Matrix {
    forward(a, params, cfg, y).0
}

/// `σ(x)`: the identity inside the ball of radius `b_out`, radial projection
/// onto it outside.
pub fn clip_ball(x: &[f64], b_out: f64) -> Vec<f64> {
    assert!(b_out > 0.0, "b_out must be positive");
    let norm = norm2(x);
    if norm > b_out {
        let s = b_out / norm;
        x.iter().map(|v| v * s).collect()
    } else {
        x.to_vec()
    }
}

/// Upper bound `τ‖A‖‖Y‖_F Σ_{k<L} ‖I − τAᵀA‖ᵏ` on `‖f_Φᴸ(Y)‖_F`, valid for
/// every orthogonal `Φ`.
pub fn output_norm_bound(a: &MeasurementMatrix, cfg: &NetConfig, y: &Matrix) -> Result<f64> {
    let contraction = bounds::contraction_factor(a.matrix(), cfg.tau)?;
    Ok(cfg.tau * a.spec_norm() * y.frobenius_norm() * bounds::geometric_sum(contraction, cfg.layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ista::{ista_run, soft_threshold, IstaProblem};
    use crate::linalg::random_orthogonal;

    fn cfg(layers: usize, lambda: f64, b_out: f64) -> NetConfig {
        NetConfig {
            layers,
            tau: 1.0,
            lambda,
            b_out,
            class: HypothesisClass::H1,
        }
    }

    #[test]
    fn clip_ball_examples() {
        assert_eq!(clip_ball(&[3.0, 4.0], 2.5), vec![1.5, 2.0]);
        assert_eq!(clip_ball(&[0.3, -0.4], 0.5), vec![0.3, -0.4]);
        assert_eq!(clip_ball(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn huge_threshold_kills_everything() {
        let a = MeasurementMatrix::gaussian(3, 5, 1).unwrap();
        let y = Matrix::from_fn(3, 4, |i, j| (i as f64) - (j as f64) * 0.5);
        let params = NetParams::h1(random_orthogonal(5, 2));
        let (x, tape) = forward(&a, &params, &cfg(4, 1e6, 1.0), &y);
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
        assert!(tape.clipped.iter().all(|c| !c));
    }

    #[test]
    fn single_layer_by_hand() {
        // A is 2x3, Φ a signed permutation, one measurement column.
        let a = MeasurementMatrix::new(Matrix::from_rows(&[&[0.5, 0.0, 0.3], &[0.1, -0.4, 0.0]])).unwrap();
        let phi = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let y = [1.0, 2.0];
        let c = NetConfig {
            layers: 1,
            tau: 0.8,
            lambda: 0.1,
            b_out: 10.0,
            class: HypothesisClass::H1,
        };
        // W = AΦ, entry by entry.
        let mut w = [[0.0; 3]; 2];
        for (i, row) in w.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                for k in 0..3 {
                    *entry += a.matrix()[(i, k)] * phi[(k, j)];
                }
            }
        }
        let mut z = [0.0; 3];
        for j in 0..3 {
            let p = c.tau * (w[0][j] * y[0] + w[1][j] * y[1]);
            z[j] = soft_threshold(p, c.tau * c.lambda);
        }
        let mut expect = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                expect[i] += phi[(i, j)] * z[j];
            }
        }
        let got = predict(&a, &NetParams::h1(phi), &c, &Matrix::from_columns(&[y.to_vec()]));
        for i in 0..3 {
            assert!((got[(i, 0)] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_dictionary_reproduces_ista() {
        let a = MeasurementMatrix::gaussian(6, 10, 7).unwrap();
        let y: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        for layers in [1, 2, 7] {
            let c = cfg(layers, 0.05, 1e6);
            let p = IstaProblem::new(a.clone(), y.clone(), 0.05, 1.0).unwrap();
            let z = features(&a, &Matrix::identity(10), &c, &Matrix::from_columns(std::slice::from_ref(&y)));
            assert_eq!(z.as_slice(), ista_run(&p, layers).x.as_slice());
        }
    }

    #[test]
    fn h1_equals_h2_with_same_decoder() {
        let a = MeasurementMatrix::gaussian(4, 6, 3).unwrap();
        let phi = random_orthogonal(6, 9);
        let y = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).cos());
        let c = cfg(3, 0.02, 0.5);
        let x1 = predict(&a, &NetParams::h1(phi.clone()), &c, &y);
        let x2 = predict(&a, &NetParams::h2(phi.clone(), phi), &c, &y);
        assert_eq!(x1, x2);
    }

    #[test]
    fn column_permutation_commutes() {
        let a = MeasurementMatrix::gaussian(4, 6, 5).unwrap();
        let params = NetParams::h1(random_orthogonal(6, 4));
        let y = Matrix::from_fn(4, 5, |i, j| ((i + 2 * j) as f64).sin());
        let c = cfg(4, 0.01, 0.8);
        let perm = [3, 0, 4, 1, 2];
        let x = predict(&a, &params, &c, &y);
        let xp = predict(&a, &params, &c, &y.select_columns(&perm));
        assert_eq!(xp, x.select_columns(&perm));
    }

    #[test]
    fn step_size_checked() {
        let a = MeasurementMatrix::new(Matrix::diag(&[2.0, 1.0])).unwrap();
        let mut c = cfg(2, 0.1, 1.0);
        assert!(matches!(c.validate(&a), Err(Error::StepSize { .. })));
        c.tau = 0.25;
        assert!(c.validate(&a).is_ok());
        c.layers = 0;
        assert!(c.validate(&a).is_err());
    }

    #[test]
    fn output_norm_bound_compressive() {
        let a = MeasurementMatrix::gaussian(5, 9, 11).unwrap();
        let y = Matrix::from_fn(5, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let c = cfg(6, 0.01, 1.0);
        let bound = output_norm_bound(&a, &c, &y).unwrap();
        assert!((bound - 6.0 * y.frobenius_norm()).abs() < 1e-7 * bound);
        assert_eq!(output_norm_bound(&a, &c, &Matrix::zeros(5, 3)).unwrap(), 0.0);
    }
}
