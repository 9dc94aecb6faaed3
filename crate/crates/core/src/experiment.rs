//! Reproducible experiment runs: configuration, data preparation, training
//! runs with their bound reports, and parameter sweeps.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{generalization_bound, BoundInputs, BoundReport};
use crate::data::{generate_synthetic, load_idx_images, take_measurements, Dataset, MeasurementMatrix, SynthConfig};
use crate::error::{Error, Result};
use crate::io::{format_float, save_network, write_atomic, write_json};
use crate::ista::ista_batch;
use crate::linalg::{random_orthogonal, Matrix};
use crate::network::{HypothesisClass, NetConfig, NetParams};
use crate::train::{evaluate, gradient_check, train, GradCheck, LossKind, TrainConfig, TrainRecord};
use crate::{derive_seed, seeded_rng};

const TAG_MNIST_A: u64 = 1;
const TAG_INIT_PHI: u64 = 11;
const TAG_INIT_PSI: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Synthetic {
        #[serde(default = "default_signal_dim")]
        signal_dim: usize,
        #[serde(default = "default_measurements")]
        measurements: usize,
        #[serde(default = "default_sparsity")]
        sparsity: usize,
        #[serde(default = "default_m")]
        m_train: usize,
        #[serde(default = "default_m")]
        m_test: usize,
    },
    /// IDX image file; the first `m_train` images train, the next `m_test`
    /// test.
    Mnist {
        path: PathBuf,
        measurements: usize,
        m_train: usize,
        m_test: usize,
    },
}

fn default_signal_dim() -> usize {
    120
}
fn default_measurements() -> usize {
    80
}
fn default_sparsity() -> usize {
    10
}
fn default_m() -> usize {
    500
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection::Synthetic {
            signal_dim: default_signal_dim(),
            measurements: default_measurements(),
            sparsity: default_sparsity(),
            m_train: default_m(),
            m_test: default_m(),
        }
    }
}

/// Network settings; `b_out` defaults to `b_in` of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub layers: usize,
    pub tau: f64,
    pub lambda: f64,
    pub b_out: Option<f64>,
    pub class: HypothesisClass,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            layers: 10,
            tau: 1.0,
            lambda: 0.05,
            b_out: None,
            class: HypothesisClass::H1,
        }
    }
}

impl NetSection {
    pub fn resolve(&self, b_in: f64) -> Result<NetConfig> {
        let b_out = self.b_out.unwrap_or(b_in);
        if !(b_out > 0.0) {
            return Err(Error::Config(
                "b_out defaults to the largest training signal norm, which is 0; set net.b_out".into(),
            ));
        }
        Ok(NetConfig {
            layers: self.layers,
            tau: self.tau,
            lambda: self.lambda,
            b_out,
            class: self.class,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub delta: f64,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self { delta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IstaSection {
    /// Iterations of the classical baseline; 0 disables it.
    pub iterations: usize,
}

impl Default for IstaSection {
    fn default() -> Self {
        Self { iterations: 5000 }
    }
}

/// One experiment. The top-level `seed` drives data generation,
/// initialization and shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub net: NetSection,
    pub train: TrainConfig,
    pub bound: BoundSection,
    pub ista: IstaSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            net: NetSection::default(),
            train: TrainConfig::default(),
            bound: BoundSection::default(),
            ista: IstaSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

/// Sensing matrix and the two datasets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub a: MeasurementMatrix,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    match &cfg.data {
        DataSection::Synthetic {
            signal_dim,
            measurements,
            sparsity,
            m_train,
            m_test,
        } => {
            let sc = SynthConfig {
                signal_dim: *signal_dim,
                measurements: *measurements,
                sparsity: *sparsity,
                m_train: *m_train,
                m_test: *m_test,
                seed: cfg.seed,
            };
            sc.validate().map_err(|e| Error::Config(e.to_string()))?;
            let p = generate_synthetic(&sc)?;
            Ok(Prepared {
                a: p.a,
                train: p.train,
                test: p.test,
            })
        }
        DataSection::Mnist {
            path,
            measurements,
            m_train,
            m_test,
        } => {
            if !path.is_file() {
                return Err(Error::Config(format!("MNIST image file not found: {}", path.display())));
            }
            if *m_train == 0 || *m_test == 0 {
                return Err(Error::Config("m_train and m_test must be positive".into()));
            }
            let images = load_idx_images(path, Some(m_train + m_test))?;
            if images.cols() < m_train + m_test {
                return Err(Error::Config(format!(
                    "{} holds {} images, fewer than m_train + m_test = {}",
                    path.display(),
                    images.cols(),
                    m_train + m_test
                )));
            }
            let big_n = images.rows();
            if *measurements == 0 || *measurements > big_n {
                return Err(Error::Config(format!("measurements must be in 1..={big_n}")));
            }
            let a = MeasurementMatrix::gaussian(*measurements, big_n, derive_seed(cfg.seed, TAG_MNIST_A))?;
            let train_idx: Vec<usize> = (0..*m_train).collect();
            let test_idx: Vec<usize> = (*m_train..m_train + m_test).collect();
            let train = take_measurements(&a, images.select_columns(&train_idx));
            let test = take_measurements(&a, images.select_columns(&test_idx));
            Ok(Prepared { a, train, test })
        }
    }
}

/// Random orthogonal start for the configured class.
pub fn initial_params(class: HypothesisClass, dim: usize, seed: u64) -> NetParams {
    let phi = random_orthogonal(dim, derive_seed(seed, TAG_INIT_PHI));
    match class {
        HypothesisClass::H1 => NetParams::h1(phi),
        HypothesisClass::H2 => NetParams::h2(phi, random_orthogonal(dim, derive_seed(seed, TAG_INIT_PSI))),
    }
}

/// Headline numbers of a run. Losses are unsquared (`‖x̂ − x‖`), matching the
/// bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gen_gap: f64,
    pub initial_test_loss: f64,
    pub bound_total: f64,
    pub simplified_total: f64,
    pub ortho_dev: f64,
    /// Mean `‖x_ista − x‖` of classical ISTA (identity dictionary) on the
    /// test set, if enabled.
    pub ista_test_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub net: NetConfig,
    pub params: NetParams,
    pub record: TrainRecord,
    pub bound: BoundReport,
    pub summary: RunSummary,
}

/// Data, training, evaluation and bound for one configuration.
pub fn run_training(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let data = prepare_data(cfg)?;
    run_on(cfg, &data, cfg.ista.iterations)
}

fn run_on(cfg: &ExperimentConfig, data: &Prepared, ista_iters: usize) -> Result<RunOutcome> {
    let net = cfg.net.resolve(data.train.b_in())?;
    net.validate(&data.a).map_err(|e| Error::Config(e.to_string()))?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    tcfg.validate(data.train.len()).map_err(|e| Error::Config(e.to_string()))?;
    let bound_inputs = BoundInputs::from_data(
        &data.a,
        &net,
        data.train.measurements(),
        data.train.b_in(),
        cfg.bound.delta,
    )
    .map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        e => e,
    })?;

    let init = initial_params(net.class, data.a.cols(), cfg.seed);
    let initial_test_loss = evaluate(&data.a, &init, &net, &data.test, LossKind::L2);
    let (params, record) = train(&data.a, init, &net, &data.train, &data.test, &tcfg)?;
    let train_loss = evaluate(&data.a, &params, &net, &data.train, LossKind::L2);
    let test_loss = evaluate(&data.a, &params, &net, &data.test, LossKind::L2);
    let bound = generalization_bound(&bound_inputs)?;

    let ista_test_error = if ista_iters > 0 {
        let x = ista_batch(&data.a, data.test.measurements(), net.lambda, net.tau, ista_iters)?;
        Some(mean_column_error(&x, data.test.signals()))
    } else {
        None
    };
    let summary = RunSummary {
        seed: cfg.seed,
        epochs: tcfg.epochs,
        train_loss,
        test_loss,
        gen_gap: (test_loss - train_loss).abs(),
        initial_test_loss,
        bound_total: bound.total,
        simplified_total: bound.simplified_total,
        ortho_dev: params.ortho_deviation(),
        ista_test_error,
    };
    Ok(RunOutcome {
        net,
        params,
        record,
        bound,
        summary,
    })
}

fn mean_column_error(x_hat: &Matrix, x: &Matrix) -> f64 {
    let norms = (x_hat - x).column_norms();
    norms.iter().sum::<f64>() / norms.len() as f64
}

/// Writes `train.csv`, the parameter blobs with `net.json`, `bound.json` and
/// `summary.json` into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("train.csv"), outcome.record.to_csv().as_bytes())?;
    save_network(dir, &outcome.params, &outcome.net)?;
    write_json(&dir.join("bound.json"), &outcome.bound)?;
    write_json(&dir.join("summary.json"), &outcome.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Number of layers `L`.
    Layers,
    /// Signal dimension `N`.
    SignalDim,
    /// Number of measurements `n`.
    Measurements,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Layers => "L",
            Axis::SignalDim => "N",
            Axis::Measurements => "n",
        })
    }
}

impl Axis {
    /// `cfg` with the axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: usize) -> Result<ExperimentConfig> {
        if value == 0 {
            return Err(Error::Config(format!("{self} must be positive")));
        }
        let mut c = cfg.clone();
        match (self, &mut c.data) {
            (Axis::Layers, _) => c.net.layers = value,
            (Axis::SignalDim, DataSection::Synthetic { signal_dim, .. }) => *signal_dim = value,
            (Axis::SignalDim, DataSection::Mnist { .. }) => {
                return Err(Error::Config("the N axis is fixed by the image size for MNIST".into()))
            }
            (Axis::Measurements, DataSection::Synthetic { measurements, .. })
            | (Axis::Measurements, DataSection::Mnist { measurements, .. }) => *measurements = value,
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: usize,
    pub seed: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gen_gap: f64,
    pub bound_total: f64,
    /// Why the run failed; the numeric columns are NaN then.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str = "axis_value,seed,train_loss,test_loss,gen_gap,bound_total";

impl SweepResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.axis_value,
                r.seed,
                format_float(r.train_loss),
                format_float(r.test_loss),
                format_float(r.gen_gap),
                format_float(r.bound_total),
            ));
        }
        out
    }

    /// Median gen_gap per axis value, in increasing axis order, over
    /// successful runs.
    pub fn median_gaps(&self) -> Vec<(usize, f64)> {
        let mut values: Vec<usize> = self.rows.iter().map(|r| r.axis_value).collect();
        values.dedup();
        values
            .into_iter()
            .filter_map(|v| {
                let mut gaps: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.axis_value == v && r.error.is_none())
                    .map(|r| r.gen_gap)
                    .collect();
                median(&mut gaps).map(|m| (v, m))
            })
            .collect()
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[k] } else { 0.5 * (v[k - 1] + v[k]) })
}

/// One training run per `(value, seed)` with seeds `cfg.seed + r` for
/// `r < repeats`. Failed runs are recorded, not propagated. The classical
/// ISTA baseline is skipped.
pub fn run_sweep(cfg: &ExperimentConfig, axis: Axis, values: &[usize], repeats: u32) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    let mut jobs = Vec::new();
    for &v in values {
        let c = axis.apply(cfg, v)?;
        for r in 0..repeats {
            jobs.push((v, c.with_seed(cfg.seed.wrapping_add(r as u64))));
        }
    }
    let mut rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(v, c)| match prepare_data(c).and_then(|d| run_on(c, &d, 0)) {
            Ok(o) => SweepRow {
                axis_value: *v,
                seed: c.seed,
                train_loss: o.summary.train_loss,
                test_loss: o.summary.test_loss,
                gen_gap: o.summary.gen_gap,
                bound_total: o.summary.bound_total,
                error: None,
            },
            Err(e) => SweepRow {
                axis_value: *v,
                seed: c.seed,
                train_loss: f64::NAN,
                test_loss: f64::NAN,
                gen_gap: f64::NAN,
                bound_total: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect();
    rows.sort_by_key(|r| (r.axis_value, r.seed));
    Ok(SweepResult { axis, rows })
}

/// A small random instance for checking gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckSpec {
    pub seed: u64,
    pub signal_dim: usize,
    pub measurements: usize,
    pub layers: usize,
    pub batch: usize,
    pub beta: f64,
    pub class: HypothesisClass,
    pub loss: LossKind,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            signal_dim: 6,
            measurements: 4,
            layers: 3,
            batch: 5,
            beta: 0.0,
            class: HypothesisClass::H1,
            loss: LossKind::Mse,
        }
    }
}

/// Finite-difference step for gradient checks.
pub const GRADCHECK_STEP: f64 = 1e-6;

/// Builds the instance and compares analytic and numerical gradients.
///
/// The dictionaries are orthogonal matrices plus a `0.1`-scaled Gaussian
/// perturbation, so the orthogonality penalty is differentiable; `B_out` is
/// set below the largest signal norm so that some outputs are clipped.
pub fn run_gradcheck(spec: &GradcheckSpec) -> Result<GradCheck> {
    if spec.signal_dim == 0 || spec.measurements == 0 || spec.layers == 0 || spec.batch == 0 {
        return Err(Error::Config("gradcheck dimensions must be positive".into()));
    }
    let big_n = spec.signal_dim;
    let a = MeasurementMatrix::gaussian(spec.measurements, big_n, derive_seed(spec.seed, 1))?;
    let mut rng = seeded_rng(spec.seed, 2);
    let x = Matrix::gaussian(big_n, spec.batch, &mut rng);
    let y = a.matrix().matmul(&x);
    let mut near = |tag| &random_orthogonal(big_n, derive_seed(spec.seed, tag)) + &Matrix::gaussian(big_n, big_n, &mut rng).scale(0.1);
    let phi = near(3);
    let params = match spec.class {
        HypothesisClass::H1 => NetParams::h1(phi),
        HypothesisClass::H2 => NetParams::h2(phi, near(4)),
    };
    let b_max = x.column_norms().into_iter().fold(0.0, f64::max);
    let cfg = NetConfig {
        layers: spec.layers,
        tau: 1.0,
        lambda: 0.05,
        b_out: 0.5 * b_max,
        class: spec.class,
    };
    Ok(gradient_check(&a, &params, &cfg, &x, &y, spec.loss, spec.beta, GRADCHECK_STEP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_minimal_toml() {
        let c = ExperimentConfig::from_toml("seed = 3\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.data, DataSection::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.bound.delta, 0.05);
    }

    #[test]
    fn full_toml() {
        let text = r#"
seed = 1
out = "runs/x"

[data]
source = "synthetic"
signal_dim = 20
measurements = 10
sparsity = 3
m_train = 40
m_test = 30

[net]
layers = 4
lambda = 0.1
class = "h2"

[train]
epochs = 2
batch_size = 8
retraction = "retract_at_end"
loss = "l2"

[bound]
delta = 0.1

[ista]
iterations = 0
"#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.net.class, HypothesisClass::H2);
        assert_eq!(c.train.loss, LossKind::L2);
        assert_eq!(c.ista.iterations, 0);
        let out = run_training(&c).unwrap();
        assert_eq!(out.record.epochs.len(), 2);
        assert!(out.summary.gen_gap <= out.summary.bound_total);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[net]\nlayer = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nsource = \"csv\"\n").is_err());
    }

    #[test]
    fn missing_mnist_is_a_config_error() {
        let c = ExperimentConfig::from_toml(
            "[data]\nsource = \"mnist\"\npath = \"/nonexistent/train-images\"\nmeasurements = 50\nm_train = 10\nm_test = 10\n",
        )
        .unwrap();
        match prepare_data(&c) {
            Err(Error::Config(msg)) => assert!(msg.contains("/nonexistent/train-images")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn axis_application() {
        let c = ExperimentConfig::default();
        assert_eq!(Axis::Layers.apply(&c, 7).unwrap().net.layers, 7);
        match Axis::SignalDim.apply(&c, 60).unwrap().data {
            DataSection::Synthetic { signal_dim, .. } => assert_eq!(signal_dim, 60),
            _ => unreachable!(),
        }
        assert!(Axis::Layers.apply(&c, 0).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut []), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn sweep_records_failures_and_sorts() {
        let c = ExperimentConfig::from_toml(
            "[data]\nsource = \"synthetic\"\nsignal_dim = 12\nmeasurements = 6\nsparsity = 2\nm_train = 20\nm_test = 10\n[train]\nepochs = 1\nbatch_size = 5\n",
        )
        .unwrap();
        // N = 1 is below the sparsity for every seed.
        let r = run_sweep(&c, Axis::SignalDim, &[12, 1], 2).unwrap();
        let keys: Vec<(usize, u64)> = r.rows.iter().map(|r| (r.axis_value, r.seed)).collect();
        assert_eq!(keys, vec![(1, 0), (1, 1), (12, 0), (12, 1)]);
        assert_eq!(r.failures(), 2);
        assert!(r.rows[0].gen_gap.is_nan());
        assert!(r.to_csv().lines().nth(1).unwrap().starts_with("1,0,NaN,"));
        assert!(r.rows[2].error.is_none());
    }
}
