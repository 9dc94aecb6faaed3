//! Empirical risk minimization over the dictionaries.
//!
//! Gradients are computed by hand-written reverse mode through the shared
//! layers. The objective is the mean reconstruction loss plus
//! `β‖I − DᵀD‖_F` for each dictionary `D`.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MeasurementMatrix};
use crate::error::{Error, Result};
use crate::io::format_float;
use crate::linalg::{polar_retraction, Matrix};
use crate::network::{forward, ForwardTape, HypothesisClass, NetConfig, NetParams};
use crate::{derive_seed, seeded_rng};

/// Training aborts once the loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

const TAG_SHUFFLE: u64 = 0x5f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retraction {
    PenaltyOnly,
    RetractEachStep,
    RetractAtEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `‖x̂ − x‖²`
    Mse,
    /// `‖x̂ − x‖`
    L2,
}

impl LossKind {
    fn sample_loss(self, sq_norm: f64) -> f64 {
        match self {
            LossKind::Mse => sq_norm,
            LossKind::L2 => sq_norm.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Weight `β` of the orthogonality penalty.
    pub ortho_weight: f64,
    pub retraction: Retraction,
    /// Shuffling seed. Experiment files do not set it; runs take it from
    /// the experiment seed.
    #[serde(skip)]
    pub seed: u64,
    pub loss: LossKind,
    /// Fill the `seconds` column with wall-clock times. Off by default so
    /// that records are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            ortho_weight: 0.1,
            retraction: Retraction::PenaltyOnly,
            seed: 0,
            loss: LossKind::Mse,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m_train: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > m_train {
            return Err(Error::InvalidParameter(format!(
                "batch_size must be in 1..={m_train}, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.ortho_weight >= 0.0) || !self.ortho_weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ortho_weight must be nonnegative, got {}",
                self.ortho_weight
            )));
        }
        Ok(())
    }
}

/// Objective value and its gradient with respect to the dictionaries.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub loss: f64,
    pub grad_phi: Matrix,
    pub grad_psi: Option<Matrix>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        let p = self.grad_phi.frobenius_norm();
        let q = self.grad_psi.as_ref().map_or(0.0, Matrix::frobenius_norm);
        p.hypot(q)
    }
}

/// `‖DᵀD − I‖_F` and its gradient `2D(DᵀD − I)/‖DᵀD − I‖_F` (zero at an
/// orthogonal `D`).
fn penalty(d: &Matrix) -> (f64, Matrix) {
    let mut e = d.t_matmul(d);
    for i in 0..e.rows() {
        e[(i, i)] -= 1.0;
    }
    let norm = e.frobenius_norm();
    if norm == 0.0 {
        return (0.0, Matrix::zeros(d.rows(), d.cols()));
    }
    (norm, d.matmul(&e).scale(2.0 / norm))
}

/// Mean per-sample loss of `x_hat` against `x`.
fn data_loss(x_hat: &Matrix, x: &Matrix, loss: LossKind) -> f64 {
    let diff = x_hat - x;
    let total: f64 = diff
        .column_norms()
        .into_iter()
        .map(|n| loss.sample_loss(n * n))
        .sum();
    total / x.cols() as f64
}

/// Full objective: mean loss plus `β` times the orthogonality defects.
pub fn objective(
    a: &MeasurementMatrix,
    params: &NetParams,
    cfg: &NetConfig,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    beta: f64,
) -> f64 {
    let (x_hat, _) = forward(a, params, cfg, y);
    let mut f = data_loss(&x_hat, x, loss);
    if beta != 0.0 {
        f += beta * penalty(&params.phi).0;
        if let Some(psi) = &params.psi {
            f += beta * penalty(psi).0;
        }
    }
    f
}

/// Gradient of the objective on `(x, y)` by reverse mode through the tape.
pub fn objective_and_grad(
    a: &MeasurementMatrix,
    params: &NetParams,
    cfg: &NetConfig,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    beta: f64,
) -> Gradient {
    assert_eq!(x.cols(), y.cols(), "signal and measurement counts differ");
    assert!(x.cols() > 0, "empty batch");
    let (x_hat, tape) = forward(a, params, cfg, y);
    let b = x.cols() as f64;

    // d loss / d x_hat
    let mut g = &x_hat - x;
    let mut total = 0.0;
    for (j, norm) in g.column_norms().into_iter().enumerate() {
        total += loss.sample_loss(norm * norm);
        let s = match loss {
            LossKind::Mse => 2.0 / b,
            LossKind::L2 if norm > 0.0 => 1.0 / (norm * b),
            LossKind::L2 => 0.0,
        };
        for i in 0..g.rows() {
            g[(i, j)] *= s;
        }
    }
    let mut value = total / b;

    let gu = clip_backward(&tape, g);
    let (g_w, g_dec) = layers_backward(params, cfg, &tape, y, &gu);
    let mut grad_phi = a.matrix().t_matmul(&g_w);
    let mut grad_psi = None;
    match params.class() {
        HypothesisClass::H1 => grad_phi.axpy(1.0, &g_dec),
        HypothesisClass::H2 => grad_psi = Some(g_dec),
    }

    if beta != 0.0 {
        let (p, gp) = penalty(&params.phi);
        value += beta * p;
        grad_phi.axpy(beta, &gp);
        if let (Some(psi), Some(g_psi)) = (&params.psi, grad_psi.as_mut()) {
            let (p, gp) = penalty(psi);
            value += beta * p;
            g_psi.axpy(beta, &gp);
        }
    }
    Gradient {
        loss: value,
        grad_phi,
        grad_psi,
    }
}

/// Pulls a gradient back through `σ`. On a clipped column `x = s u` with
/// `s = B/‖u‖`, the Jacobian is `s (I − ûûᵀ)`; on the boundary the identity
/// branch is taken.
fn clip_backward(tape: &ForwardTape, mut g: Matrix) -> Matrix {
    let u = &tape.decoded;
    for j in 0..g.cols() {
        if !tape.clipped[j] {
            continue;
        }
        let s = tape.clip_scale[j];
        let col = u.column(j);
        let norm = crate::linalg::norm2(&col);
        let proj: f64 = col.iter().enumerate().map(|(i, ui)| ui * g[(i, j)]).sum::<f64>() / (norm * norm);
        for (i, ui) in col.iter().enumerate() {
            g[(i, j)] = s * (g[(i, j)] - ui * proj);
        }
    }
    g
}

/// Returns the gradients with respect to `W = AΦ` and to the decoder.
fn layers_backward(params: &NetParams, cfg: &NetConfig, tape: &ForwardTape, y: &Matrix, gu: &Matrix) -> (Matrix, Matrix) {
    let w = &tape.w;
    let z_last = tape.features();
    let g_dec = gu.matmul_t(z_last);
    let mut gz = params.decoder().t_matmul(gu);
    let mut g_w = Matrix::zeros(w.rows(), w.cols());
    let threshold = cfg.threshold();
    let tau = cfg.tau;

    for l in (0..cfg.layers).rev() {
        let mut gp = gz;
        gp.as_mut_slice()
            .iter_mut()
            .zip(tape.preactivations[l].as_slice())
            .for_each(|(g, p)| {
                if p.abs() <= threshold {
                    *g = 0.0;
                }
            });
        if l == 0 {
            g_w.axpy(tau, &y.matmul_t(&gp));
            break;
        }
        // p = z + τWᵀ(y − Wz)
        let z_prev = &tape.postactivations[l - 1];
        let residual = y - &w.matmul(z_prev);
        let wg = w.matmul(&gp);
        g_w.axpy(tau, &residual.matmul_t(&gp));
        g_w.axpy(-tau, &wg.matmul_t(z_prev));
        let mut next = w.t_matmul(&wg);
        next.as_mut_slice()
            .iter_mut()
            .zip(gp.as_slice())
            .for_each(|(n, g)| *n = g - tau * *n);
        gz = next;
    }
    (g_w, g_dec)
}

/// Objective and gradient on a mini-batch, with the penalty weight and loss
/// taken from `tcfg`.
pub fn loss_and_grad(
    a: &MeasurementMatrix,
    params: &NetParams,
    cfg: &NetConfig,
    batch: &Dataset,
    tcfg: &TrainConfig,
) -> Gradient {
    objective_and_grad(
        a,
        params,
        cfg,
        batch.signals(),
        batch.measurements(),
        tcfg.loss,
        tcfg.ortho_weight,
    )
}

/// Mean per-sample loss on `data`, without penalty.
pub fn evaluate(a: &MeasurementMatrix, params: &NetParams, cfg: &NetConfig, data: &Dataset, loss: LossKind) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let (x_hat, _) = forward(a, params, cfg, data.measurements());
    data_loss(&x_hat, data.signals(), loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gen_gap: f64,
    pub ortho_dev: f64,
    /// Mean mini-batch gradient norm over the epoch.
    pub grad_norm: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub initial_train_loss: f64,
    pub initial_test_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

pub const TRAIN_CSV_HEADER: &str = "epoch,train_loss,test_loss,gen_gap,ortho_dev,grad_norm,seconds";

impl TrainRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_CSV_HEADER);
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.epoch,
                format_float(r.train_loss),
                format_float(r.test_loss),
                format_float(r.gen_gap),
                format_float(r.ortho_dev),
                format_float(r.grad_norm),
                format_float(r.seconds),
            ));
        }
        out
    }
}

fn retract(params: &mut NetParams) -> Result<()> {
    params.phi = polar_retraction(&params.phi)?;
    if let Some(psi) = params.psi.as_mut() {
        *psi = polar_retraction(psi)?;
    }
    Ok(())
}

/// Mini-batch SGD with heavy-ball momentum, `v ← μv + g`, `D ← D − ηv`.
pub fn train(
    a: &MeasurementMatrix,
    init: NetParams,
    cfg: &NetConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(NetParams, TrainRecord)> {
    cfg.validate(a)?;
    tcfg.validate(train_set.len())?;
    assert_eq!(init.class(), cfg.class, "parameters do not match the hypothesis class");
    assert_eq!(init.dim(), a.cols(), "dictionary size must match the signal dimension");

    let mut params = init;
    let mut vel_phi = Matrix::zeros(params.dim(), params.dim());
    let mut vel_psi = params.psi.as_ref().map(|p| Matrix::zeros(p.rows(), p.cols()));

    let initial_train_loss = evaluate(a, &params, cfg, train_set, tcfg.loss);
    let initial_test_loss = evaluate(a, &params, cfg, test_set, tcfg.loss);
    let reference = initial_train_loss.max(1e-12);
    let mut record = TrainRecord {
        initial_train_loss,
        initial_test_loss,
        epochs: Vec::with_capacity(tcfg.epochs),
    };

    let mut rng = seeded_rng(derive_seed(tcfg.seed, TAG_SHUFFLE), 0);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tcfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut grad_norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch = train_set.subset(chunk);
            let g = loss_and_grad(a, &params, cfg, &batch, tcfg);
            if !g.loss.is_finite() || !g.grad_phi.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: g.loss,
                    initial: initial_train_loss,
                });
            }
            grad_norm_sum += g.norm();
            batches += 1;

            vel_phi = vel_phi.scale(tcfg.momentum);
            vel_phi.axpy(1.0, &g.grad_phi);
            params.phi.axpy(-tcfg.learning_rate, &vel_phi);
            if let (Some(v), Some(gpsi), Some(psi)) = (vel_psi.as_mut(), g.grad_psi.as_ref(), params.psi.as_mut()) {
                *v = v.scale(tcfg.momentum);
                v.axpy(1.0, gpsi);
                psi.axpy(-tcfg.learning_rate, v);
            }
            if tcfg.retraction == Retraction::RetractEachStep {
                retract(&mut params)?;
            }
        }
        if epoch == tcfg.epochs && tcfg.retraction == Retraction::RetractAtEnd {
            retract(&mut params)?;
        }

        let train_loss = evaluate(a, &params, cfg, train_set, tcfg.loss);
        let test_loss = evaluate(a, &params, cfg, test_set, tcfg.loss);
        if !train_loss.is_finite() || train_loss > DIVERGENCE_FACTOR * reference {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
                initial: initial_train_loss,
            });
        }
        record.epochs.push(EpochRecord {
            epoch,
            train_loss,
            test_loss,
            gen_gap: (test_loss - train_loss).abs(),
            ortho_dev: params.ortho_deviation(),
            grad_norm: grad_norm_sum / batches as f64,
            seconds: if tcfg.record_timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok((params, record))
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation changed a threshold or clip branch.
    pub skipped: usize,
}

/// Denominators below this are replaced by it, so that entries which are
/// zero up to rounding are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Compares every gradient entry with `(f(D + hE) − f(D − hE)) / 2h`.
///
/// Entry-wise relative error is `|g − d| / max(|g|, |d|, GRADCHECK_FLOOR)`.
/// Coordinates where either perturbed evaluation takes a different branch of
/// a threshold or of the clip than the unperturbed one are skipped.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    a: &MeasurementMatrix,
    params: &NetParams,
    cfg: &NetConfig,
    x: &Matrix,
    y: &Matrix,
    loss: LossKind,
    beta: f64,
    step: f64,
) -> GradCheck {
    let analytic = objective_and_grad(a, params, cfg, x, y, loss, beta);
    let (_, base_tape) = forward(a, params, cfg, y);
    let threshold = cfg.threshold();
    let mut result = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };

    let mut targets: Vec<(bool, &Matrix)> = vec![(false, &analytic.grad_phi)];
    if let Some(gpsi) = analytic.grad_psi.as_ref() {
        targets.push((true, gpsi));
    }
    for (is_psi, grad) in targets {
        for i in 0..grad.rows() {
            for j in 0..grad.cols() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    let d = if is_psi { p.psi.as_mut().expect("psi present") } else { &mut p.phi };
                    d[(i, j)] += delta;
                    let (_, tape) = forward(a, &p, cfg, y);
                    (objective(a, &p, cfg, x, y, loss, beta), tape)
                };
                let (f_plus, t_plus) = eval(step);
                let (f_minus, t_minus) = eval(-step);
                if !t_plus.same_pattern(&base_tape, threshold) || !t_minus.same_pattern(&base_tape, threshold) {
                    result.skipped += 1;
                    continue;
                }
                let fd = (f_plus - f_minus) / (2.0 * step);
                let g = grad[(i, j)];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(GRADCHECK_FLOOR);
                result.max_rel_error = result.max_rel_error.max(rel);
                result.checked += 1;
            }
        }
    }
    result
}
