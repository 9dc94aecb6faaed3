//! Reference implementations used only by tests. None of them shares code
//! with the library beyond `Matrix` storage and `soft_threshold`.

#![allow(dead_code)]

use uista::data::MeasurementMatrix;
use uista::ista::soft_threshold;
use uista::linalg::Matrix;
use uista::network::{forward, NetConfig, NetParams};
use uista::train::{objective, LossKind};

/// Thin SVD `M = U diag(s) Vᵀ` by one-sided Jacobi rotations.
/// Requires `rows >= cols`. Singular values are returned unsorted.
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn jacobi_svd(m: &Matrix) -> Svd {
    let (rows, cols) = m.shape();
    assert!(rows >= cols, "jacobi_svd needs a tall or square matrix");
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..cols).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                let beta: f64 = a[q].iter().map(|x| x * x).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for cols_of in [&mut a, &mut v] {
                    let (lo, hi) = cols_of.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (xp, yq) = (*x, *y);
                        *x = c * xp - s * yq;
                        *y = s * xp + c * yq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s: Vec<f64> = a.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let u_cols: Vec<Vec<f64>> = a
        .iter()
        .zip(&s)
        .map(|(col, &sv)| {
            if sv > 0.0 {
                col.iter().map(|x| x / sv).collect()
            } else {
                col.clone()
            }
        })
        .collect();
    Svd {
        u: Matrix::from_columns(&u_cols),
        s,
        v: Matrix::from_columns(&v),
    }
}

pub fn svd_spectral_norm(m: &Matrix) -> f64 {
    let svd = if m.rows() >= m.cols() {
        jacobi_svd(m)
    } else {
        jacobi_svd(&m.transpose())
    };
    svd.s.into_iter().fold(0.0, f64::max)
}

/// Orthogonal polar factor `UVᵀ` of a square matrix.
pub fn svd_polar(m: &Matrix) -> Matrix {
    let svd = jacobi_svd(m);
    svd.u.matmul_t(&svd.v)
}

/// Accelerated proximal gradient for `½‖Ax − y‖² + λ‖x‖₁` with fixed step
/// `tau`, starting from zero.
pub fn fista(a: &Matrix, y: &[f64], lambda: f64, tau: f64, iters: usize) -> Vec<f64> {
    let (n, big_n) = a.shape();
    let at: Vec<Vec<f64>> = (0..big_n).map(|j| a.column(j)).collect();
    let mut x = vec![0.0; big_n];
    let mut z = x.clone();
    let mut t = 1.0_f64;
    let mut r = vec![0.0; n];
    for _ in 0..iters {
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = a.row(i).iter().zip(&z).map(|(p, q)| p * q).sum::<f64>() - y[i];
        }
        let mut next = vec![0.0; big_n];
        for j in 0..big_n {
            let g: f64 = at[j].iter().zip(&r).map(|(p, q)| p * q).sum();
            next[j] = soft_threshold(z[j] - tau * g, tau * lambda);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let w = (t - 1.0) / t_next;
        for j in 0..big_n {
            z[j] = next[j] + w * (next[j] - x[j]);
        }
        x = next;
        t = t_next;
    }
    x
}

/// Central-difference gradient of the full objective with respect to `Φ`
/// (and `Ψ`). Entries whose perturbed evaluations cross a threshold or clip
/// boundary are `None`.
pub struct FdGradient {
    pub phi: Vec<Option<f64>>,
    pub psi: Option<Vec<Option<f64>>>,
}

#[allow(clippy::too_many_arguments)]
pub fn fd_gradient(
    a: &MeasurementMatrix,
    params: &NetParams,
    cfg: &NetConfig,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    beta: f64,
    h: f64,
) -> FdGradient {
    let (_, base) = forward(a, params, cfg, y);
    let eval = |p: &NetParams| {
        let (_, tape) = forward(a, p, cfg, y);
        base.same_pattern(&tape, cfg.threshold())
            .then(|| objective(a, p, cfg, x, y, loss, beta))
    };
    let diff = |which_psi: bool| -> Vec<Option<f64>> {
        let len = params.dim() * params.dim();
        (0..len)
            .map(|k| {
                let shifted = |sign: f64| {
                    let mut p = params.clone();
                    let m = if which_psi { p.psi.as_mut().unwrap() } else { &mut p.phi };
                    m.as_mut_slice()[k] += sign * h;
                    eval(&p)
                };
                match (shifted(1.0), shifted(-1.0)) {
                    (Some(fp), Some(fm)) => Some((fp - fm) / (2.0 * h)),
                    _ => None,
                }
            })
            .collect()
    };
    FdGradient {
        phi: diff(false),
        psi: params.psi.as_ref().map(|_| diff(true)),
    }
}

/// Largest entry-wise relative error `|g − d| / max(|g|, |d|, floor)` over
/// the coordinates `fd` kept. Returns `(error, compared)`.
pub fn compare_gradient(analytic: &Matrix, fd: &[Option<f64>], floor: f64) -> (f64, usize) {
    let mut worst = 0.0_f64;
    let mut compared = 0;
    for (g, d) in analytic.as_slice().iter().zip(fd) {
        if let Some(d) = d {
            worst = worst.max((g - d).abs() / g.abs().max(d.abs()).max(floor));
            compared += 1;
        }
    }
    (worst, compared)
}

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` to absolute tolerance
/// `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(lo), f(hi));
    let (m, fm, whole) = simpson(f, lo, fa, hi, fb);
    recurse(f, lo, fa, hi, fb, whole, m, fm, tol, 50)
}

/// `∫₀^α √log(1 + β/t) dt` by quadrature after substituting `t = α e^{−u}`,
/// which removes the singularity at zero.
pub fn dudley_quadrature(alpha: f64, beta: f64) -> f64 {
    let g = |u: f64| {
        let t = alpha * (-u).exp();
        t * (beta / t).ln_1p().sqrt()
    };
    adaptive_simpson(&g, 0.0, 80.0, 1e-12)
}

/// Totals of the generalization bound recomputed from the explicit sums
/// `K_L = Σ_l c^{L−l} B_l` and `M_L = τ‖A‖‖Y‖ Σ_k cᵏ`, sharing no code with
/// the library. Returns `(total, closed_form_total, simplified_total)`.
pub fn bound_by_hand(i: &uista::bounds::BoundInputs) -> (f64, f64, f64) {
    let c = i.contraction;
    let l = i.layers;
    let z = |k: usize| (0..k).map(|j| c.powi(j as i32)).sum::<f64>();
    let b = |k: usize| i.tau * i.frob_y * (2.0 + 2.0 * i.tau * i.spec_norm_a.powi(2) * z(k - 1));
    let k_l: f64 = (1..=l).map(|k| c.powi((l - k) as i32) * b(k)).sum();
    let m_l = i.tau * i.spec_norm_a * i.frob_y * z(l);
    let (big_n, n, m) = (i.signal_dim as f64, i.measurements as f64, i.samples as f64);
    let alpha = m.sqrt() * i.b_out / 2.0;
    let dudley = |beta: f64| alpha * (1.0 + (1.0 + beta / alpha).ln()).sqrt();
    let conf = 4.0 * (i.b_in + i.b_out) * (2.0 * (4.0 / i.delta).ln() / m).sqrt();
    let total = 16.0 / m * ((n * big_n).sqrt() * dudley(4.0 * i.spec_norm_a * k_l) + big_n * dudley(4.0 * m_l)) + conf;

    // K_L and M_L replaced by τ‖Y‖L(L+3) and τ‖A‖‖Y‖L; the first logarithm
    // carries 2 instead of 1.
    let lf = l as f64;
    let r = i.tau * i.frob_y * i.spec_norm_a / (m.sqrt() * i.b_out);
    let closed_form = 8.0 * i.b_out * (big_n * n / m).sqrt() * (1.0 + (2.0 + 8.0 * lf * (lf + 3.0) * r).ln()).sqrt()
        + 8.0 * i.b_out * big_n / m.sqrt() * (1.0 + (8.0 * lf * r).ln_1p()).sqrt()
        + conf;

    let bo = i.b_out;
    let simplified = 8.0 * bo * (big_n * n * (2.0 + 8.0 * lf * (lf + 3.0)).ln() / m).sqrt()
        + 8.0 * bo * big_n * (std::f64::consts::E * (1.0 + 8.0 * lf)).ln().sqrt() / m.sqrt()
        + bo * (128.0 * (4.0 / i.delta).ln() / m).sqrt();
    (total, closed_form, simplified)
}
