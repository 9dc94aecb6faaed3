//! Generalization bounds for the unfolded network.
//!
//! The chain runs from the perturbation constants `K_L` (change of the
//! features under a change of `AΦ`) and `M_L` (a bound on the feature norm),
//! through covering numbers of the set of output matrices, to Dudley's
//! entropy integral, which is evaluated with the closed-form upper bound
//! `∫₀^α √log(1 + β/t) dt ≤ α √log(e(1 + β/α))`.
//!
//! All bounds assume the unsquared loss `‖h(y) − x‖₂`, which is bounded by
//! `B_in + B_out`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::MeasurementMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::network::{features, NetConfig};
use crate::seeded_rng;

/// Below this distance from 1 the geometric sum is added term by term.
const GEOMETRIC_CLOSED_FORM_GAP: f64 = 1e-3;

/// Everything the bound depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Signal dimension `N`.
    pub signal_dim: usize,
    /// Number of measurements `n`.
    pub measurements: usize,
    /// Number of training samples `m`.
    pub samples: usize,
    pub layers: usize,
    pub tau: f64,
    /// `‖A‖₂`.
    pub spec_norm_a: f64,
    /// `‖Y‖_F` of the training measurements.
    pub frob_y: f64,
    /// `‖I − τAᵀA‖₂`.
    pub contraction: f64,
    pub b_in: f64,
    pub b_out: f64,
    pub delta: f64,
}

impl BoundInputs {
    /// Inputs for a network trained on measurements `y`. The contraction
    /// factor is computed from `A`.
    pub fn from_data(a: &MeasurementMatrix, cfg: &NetConfig, y: &Matrix, b_in: f64, delta: f64) -> Result<Self> {
        assert_eq!(y.rows(), a.rows(), "measurement dimension mismatch");
        let inputs = Self {
            signal_dim: a.cols(),
            measurements: a.rows(),
            samples: y.cols(),
            layers: cfg.layers,
            tau: cfg.tau,
            spec_norm_a: a.spec_norm(),
            frob_y: y.frobenius_norm(),
            contraction: contraction_factor(a.matrix(), cfg.tau)?,
            b_in,
            b_out: cfg.b_out,
            delta,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.signal_dim == 0 || self.measurements == 0 || self.samples == 0 || self.layers == 0 {
            return bad("dimensions, sample count and layer count must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return bad("tau must be positive");
        }
        if !(self.b_out > 0.0) || !self.b_out.is_finite() {
            return bad("b_out must be positive");
        }
        for (name, v) in [
            ("spec_norm_a", self.spec_norm_a),
            ("frob_y", self.frob_y),
            ("contraction", self.contraction),
            ("b_in", self.b_in),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// `τ‖A‖² ≤ 1`, the regime in which the simplified constants apply.
    pub fn step_size_ok(&self) -> bool {
        self.tau * self.spec_norm_a * self.spec_norm_a <= 1.0 + crate::ista::STEP_SIZE_SLACK
    }
}

/// All intermediate quantities of the bound.
///
/// `term1` comes from covering `{AΦ}`, `term2` from covering the decoder,
/// `term3` is the confidence term; `total = term1 + term2 + term3` bounds
/// `ℒ(h) − ℒ̂(h)` with probability `1 − δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    /// Loss the bound refers to.
    pub loss: String,
    #[serde(rename = "k_L")]
    pub k_l: f64,
    #[serde(rename = "m_L")]
    pub m_l: f64,
    /// Radius `√m B_out` of the set of output matrices.
    pub radius: f64,
    /// Upper limit `√m B_out / 2` of the entropy integral.
    pub dudley_alpha: f64,
    pub dudley_w: f64,
    pub dudley_dict: f64,
    /// Bound on the Rademacher complexity of the output matrices.
    pub rademacher_bound: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub total: f64,
    /// The same bound with `K_L` and `M_L` replaced by their closed-form
    /// estimates in `L`, valid when `τ‖A‖² ≤ 1`.
    pub closed_form_total: f64,
    /// Dimension-only form assuming `B_in = B_out` and `τ‖A‖² ≤ 1`.
    pub simplified_total: f64,
}

/// `‖I − τAᵀA‖₂`, by power iteration with a symmetric eigensolver as
/// fallback when the top of the spectrum is too clustered to converge.
pub fn contraction_factor(a: &Matrix, tau: f64) -> Result<f64> {
    let big_n = a.cols();
    let mut m = a.t_matmul(a).scale(-tau);
    for i in 0..big_n {
        m[(i, i)] += 1.0;
    }
    match linalg::spectral_norm(&m, linalg::DEFAULT_TOL, linalg::DEFAULT_MAX_ITERS) {
        Ok(v) => Ok(v),
        Err(Error::NoConvergence { .. }) => {
            let eig = linalg::symmetric_eigenvalues(&m);
            Ok(eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs())))
        }
        Err(e) => Err(e),
    }
}

/// `Σ_{k=0}^{l−1} cᵏ`.
pub fn geometric_sum(c: f64, l: usize) -> f64 {
    if (1.0 - c).abs() > GEOMETRIC_CLOSED_FORM_GAP {
        (1.0 - c.powi(l as i32)) / (1.0 - c)
    } else {
        let mut sum = 0.0;
        let mut p = 1.0;
        for _ in 0..l {
            sum += p;
            p *= c;
        }
        sum
    }
}

/// Perturbation constant `K_L`, via `K₁ = B₁`, `K_{l+1} = c K_l + B_{l+1}`
/// with `B_l = τ‖Y‖_F (2 + 2τ‖A‖² Z_{l−1})` and `Z_l = Σ_{k<l} cᵏ`.
pub fn k_constant(inputs: &BoundInputs, l: usize) -> f64 {
    assert!(l >= 1, "K_L needs at least one layer");
    let c = inputs.contraction;
    let t = inputs.tau * inputs.frob_y;
    let ta2 = inputs.tau * inputs.spec_norm_a * inputs.spec_norm_a;
    let mut k = 0.0;
    let mut z = 0.0;
    for _ in 0..l {
        k = c * k + t * (2.0 + 2.0 * ta2 * z);
        z = c * z + 1.0;
    }
    k
}

/// `M_L = τ‖A‖‖Y‖_F Σ_{k<L} cᵏ`, the bound on `‖f_Φᴸ(Y)‖_F`.
pub fn m_constant(inputs: &BoundInputs, l: usize) -> f64 {
    assert!(l >= 1, "M_L needs at least one layer");
    inputs.tau * inputs.spec_norm_a * inputs.frob_y * geometric_sum(inputs.contraction, l)
}

/// Log of the `eps`-covering number of the unit ball in `dim` dimensions,
/// `dim · log(1 + 2/eps)`.
pub fn covering_log_ball(dim: usize, eps: f64) -> f64 {
    assert!(eps > 0.0);
    dim as f64 * (2.0 / eps).ln_1p()
}

/// Log of the `eps`-covering number of the set of output matrices:
/// `N² log(1 + 4M_L/ε) + nN log(1 + 4‖A‖K_L/ε)`.
pub fn covering_log_m2(inputs: &BoundInputs, k_l: f64, m_l: f64, eps: f64) -> f64 {
    assert!(eps > 0.0);
    let big_n = inputs.signal_dim as f64;
    let n = inputs.measurements as f64;
    big_n * big_n * (4.0 * m_l / eps).ln_1p() + n * big_n * (4.0 * inputs.spec_norm_a * k_l / eps).ln_1p()
}

/// `α √log(e(1 + β/α))`, an upper bound on `∫₀^α √log(1 + β/t) dt`.
pub fn dudley_closed_form(alpha: f64, beta: f64) -> f64 {
    assert!(alpha > 0.0 && beta >= 0.0);
    alpha * (1.0 + (beta / alpha).ln_1p()).sqrt()
}

pub fn generalization_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let big_n = inputs.signal_dim as f64;
    let n = inputs.measurements as f64;
    let m = inputs.samples as f64;
    let l = inputs.layers as f64;
    let b = inputs.b_out;
    let sqrt_m = m.sqrt();

    let k_l = k_constant(inputs, inputs.layers);
    let m_l = m_constant(inputs, inputs.layers);
    let radius = sqrt_m * b;
    let alpha = radius / 2.0;
    let dudley_w = dudley_closed_form(alpha, 4.0 * inputs.spec_norm_a * k_l);
    let dudley_dict = dudley_closed_form(alpha, 4.0 * m_l);
    let rademacher_bound = 4.0 * 2f64.sqrt() / m * ((n * big_n).sqrt() * dudley_w + big_n * dudley_dict);

    // GE ≤ 2·√2·(Rademacher bound) + 4c√(2 log(4/δ)/m), c = B_in + B_out.
    let term1 = 16.0 / m * (n * big_n).sqrt() * dudley_w;
    let term2 = 16.0 / m * big_n * dudley_dict;
    let log_conf = (4.0 / inputs.delta).ln();
    let term3 = 4.0 * (inputs.b_in + b) * (2.0 * log_conf / m).sqrt();
    let total = term1 + term2 + term3;

    let r = inputs.tau * inputs.frob_y * inputs.spec_norm_a / (sqrt_m * b);
    let closed_form_total = 8.0 * b * (big_n * n / m).sqrt() * (1.0 + (2.0 + 8.0 * l * (l + 3.0) * r).ln()).sqrt()
        + 8.0 * b * big_n / sqrt_m * (1.0 + (8.0 * l * r).ln_1p()).sqrt()
        + term3;

    let e = std::f64::consts::E;
    let simplified_total = 8.0 * b * (big_n * n * (2.0 + 8.0 * l * (l + 3.0)).ln() / m).sqrt()
        + 8.0 * b * big_n * (e + 8.0 * e * l).ln().sqrt() / sqrt_m
        + b * (128.0 * log_conf / m).sqrt();

    Ok(BoundReport {
        inputs: inputs.clone(),
        loss: "l2".into(),
        k_l,
        m_l,
        radius,
        dudley_alpha: alpha,
        dudley_w,
        dudley_dict,
        rademacher_bound,
        term1,
        term2,
        term3,
        total,
        closed_form_total,
        simplified_total,
    })
}

/// Result of the Monte-Carlo Rademacher check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRademacher {
    pub estimate: f64,
    pub std_error: f64,
    /// The Dudley-based bound it must stay below.
    pub bound: f64,
    pub slack: f64,
    pub trials: usize,
    pub grid: usize,
}

/// Largest sample count `m` the toy oracle accepts.
pub const MC_MAX_SAMPLES: usize = 20;

/// Monte-Carlo estimate of `E sup (1/m) Σ_{ik} ε_ik M_ik` over output
/// matrices `M` of the class H2 for `N = 2`.
///
/// `Φ` runs over `grid` rotation angles, each with and without reflection.
/// For fixed `Φ` the supremum over `Ψ ∈ O(2)` is attained in closed form: it
/// equals the nuclear norm of `G εᵀ`, where `G` holds the clipped features.
pub fn mc_rademacher_toy(
    a: &MeasurementMatrix,
    cfg: &NetConfig,
    y: &Matrix,
    trials: usize,
    grid: usize,
    seed: u64,
) -> Result<McRademacher> {
    if a.cols() != 2 {
        return Err(Error::Unsupported(format!(
            "Monte-Carlo Rademacher oracle needs signal dimension 2, got {}",
            a.cols()
        )));
    }
    let m = y.cols();
    if m == 0 || m > MC_MAX_SAMPLES {
        return Err(Error::Unsupported(format!(
            "Monte-Carlo Rademacher oracle needs 1..={MC_MAX_SAMPLES} samples, got {m}"
        )));
    }
    if trials == 0 || grid == 0 {
        return Err(Error::InvalidParameter("trials and grid must be positive".into()));
    }
    cfg.validate(a)?;

    let mut candidates = Vec::with_capacity(2 * grid);
    for g in 0..grid {
        let theta = 2.0 * std::f64::consts::PI * g as f64 / grid as f64;
        let (s, c) = theta.sin_cos();
        for phi in [
            Matrix::from_rows(&[&[c, -s], &[s, c]]),
            Matrix::from_rows(&[&[c, s], &[s, -c]]),
        ] {
            let mut f = features(a, &phi, cfg, y);
            for (j, norm) in f.column_norms().into_iter().enumerate() {
                if norm > cfg.b_out {
                    let scale = cfg.b_out / norm;
                    f[(0, j)] *= scale;
                    f[(1, j)] *= scale;
                }
            }
            candidates.push(f);
        }
    }

    let sups: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded_rng(seed, t as u64);
            let eps: Vec<[f64; 2]> = (0..m)
                .map(|_| [sign(rng.random()), sign(rng.random())])
                .collect();
            candidates
                .iter()
                .map(|g| {
                    // C = G εᵀ, 2x2.
                    let mut c = [[0.0; 2]; 2];
                    for (j, e) in eps.iter().enumerate() {
                        for r in 0..2 {
                            c[r][0] += g[(r, j)] * e[0];
                            c[r][1] += g[(r, j)] * e[1];
                        }
                    }
                    let frob2 = c[0][0].powi(2) + c[0][1].powi(2) + c[1][0].powi(2) + c[1][1].powi(2);
                    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
                    (frob2 + 2.0 * det.abs()).sqrt() / m as f64
                })
                .fold(0.0, f64::max)
        })
        .collect();

    let n = trials as f64;
    let estimate = sups.iter().sum::<f64>() / n;
    let var = if trials > 1 {
        sups.iter().map(|s| (s - estimate).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let inputs = BoundInputs {
        signal_dim: 2,
        measurements: a.rows(),
        samples: m,
        layers: cfg.layers,
        tau: cfg.tau,
        spec_norm_a: a.spec_norm(),
        frob_y: y.frobenius_norm(),
        contraction: contraction_factor(a.matrix(), cfg.tau)?,
        b_in: cfg.b_out,
        b_out: cfg.b_out,
        delta: 0.5,
    };
    let bound = generalization_bound(&inputs)?.rademacher_bound;
    Ok(McRademacher {
        estimate,
        std_error: (var / n).sqrt(),
        bound,
        slack: bound - estimate,
        trials,
        grid,
    })
}

fn sign(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::HypothesisClass;

    fn inputs() -> BoundInputs {
        BoundInputs {
            signal_dim: 120,
            measurements: 80,
            samples: 10_000,
            layers: 10,
            tau: 1.0,
            spec_norm_a: 1.0,
            frob_y: 100.0,
            contraction: 1.0,
            b_in: 1.0,
            b_out: 1.0,
            delta: 0.05,
        }
    }

    #[test]
    fn k_constant_examples() {
        let mut p = inputs();
        p.frob_y = 3.0;
        p.tau = 1.0;
        assert_eq!(k_constant(&p, 1), 6.0);
        assert_eq!(k_constant(&p, 2), 18.0);
        p.tau = 0.5;
        p.spec_norm_a = 0.3;
        assert_eq!(k_constant(&p, 1), 2.0 * 0.5 * 3.0);
    }

    #[test]
    fn m_constant_examples() {
        let mut p = inputs();
        p.frob_y = 0.0;
        assert_eq!(m_constant(&p, 7), 0.0);
        p.frob_y = 2.0;
        assert!((m_constant(&p, 7) - 14.0).abs() < 1e-12);
        p.contraction = 0.5;
        p.frob_y = 1.0;
        assert!((m_constant(&p, 3) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn geometric_sum_matches_direct_sum_on_both_branches() {
        for c in [0.0_f64, 0.3, 0.9989, 0.9995, 1.0, 1.0004, 1.5] {
            for l in [1, 2, 5, 30] {
                let direct: f64 = (0..l).map(|k| c.powi(k as i32)).sum();
                assert!((geometric_sum(c, l) - direct).abs() <= 1e-12 * direct);
            }
        }
    }

    #[test]
    fn covering_examples() {
        assert!((covering_log_ball(1, 2.0) - 2f64.ln()).abs() < 1e-15);
        let p = inputs();
        assert_eq!(covering_log_m2(&p, 0.0, 0.0, 0.1), 0.0);
        assert!(covering_log_m2(&p, 5.0, 5.0, 1e300) < 1e-290);
    }

    #[test]
    fn dudley_examples() {
        assert_eq!(dudley_closed_form(2.5, 0.0), 2.5);
        let e = std::f64::consts::E;
        assert!((dudley_closed_form(1.0, e - 1.0) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rademacher_bound_is_consistent_with_terms() {
        let r = generalization_bound(&inputs()).unwrap();
        let lhs = r.term1 + r.term2;
        assert!((lhs - 2.0 * 2f64.sqrt() * r.rademacher_bound).abs() < 1e-12 * lhs);
        assert_eq!(r.total, r.term1 + r.term2 + r.term3);
    }

    #[test]
    fn delta_must_be_a_probability() {
        for delta in [0.0, 1.0, -0.1, 2.0, f64::NAN] {
            let mut p = inputs();
            p.delta = delta;
            assert!(generalization_bound(&p).is_err());
        }
    }

    #[test]
    fn vanishes_for_huge_samples() {
        let mut p = inputs();
        p.samples = 1_000_000_000_000;
        let r = generalization_bound(&p).unwrap();
        assert!(r.total < 1e-3 * p.b_out * p.signal_dim as f64);
    }

    #[test]
    fn contraction_of_compressive_matrix_is_one() {
        let a = MeasurementMatrix::gaussian(6, 10, 4).unwrap();
        let c = contraction_factor(a.matrix(), 1.0).unwrap();
        assert!((c - 1.0).abs() < 1e-8);
        let square = MeasurementMatrix::new(Matrix::diag(&[1.0, 0.5])).unwrap();
        assert!((contraction_factor(square.matrix(), 1.0).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mc_rejects_other_dimensions() {
        let a = MeasurementMatrix::gaussian(2, 3, 1).unwrap();
        let cfg = NetConfig {
            layers: 2,
            tau: 1.0,
            lambda: 0.1,
            b_out: 1.0,
            class: HypothesisClass::H2,
        };
        let y = Matrix::zeros(2, 4);
        assert!(matches!(
            mc_rademacher_toy(&a, &cfg, &y, 10, 10, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mc_zero_measurements() {
        let a = MeasurementMatrix::gaussian(1, 2, 1).unwrap();
        let cfg = NetConfig {
            layers: 2,
            tau: 1.0,
            lambda: 0.1,
            b_out: 1.0,
            class: HypothesisClass::H2,
        };
        let r = mc_rademacher_toy(&a, &cfg, &Matrix::zeros(1, 5), 50, 36, 3).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(r.slack > 0.0);
    }
}
