//! Synthetic sparse signals, IDX image ingestion, and noiseless measurements.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix};
use crate::{derive_seed, seeded_rng};

/// The fixed sensing operator `A` together with its spectral norm, computed
/// once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    matrix: Matrix,
    spec_norm: f64,
}

impl MeasurementMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        let spec_norm = matrix.spectral_norm()?;
        Ok(Self { matrix, spec_norm })
    }

    /// I.i.d. Gaussian `n x N` matrix rescaled so that `‖A‖₂ = 1`.
    pub fn gaussian(n: usize, big_n: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed, 0);
        let g = Matrix::gaussian(n, big_n, &mut rng).scale(1.0 / (n as f64).sqrt());
        let norm = g.spectral_norm()?;
        Self::new(g.scale(1.0 / norm))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn spec_norm(&self) -> f64 {
        self.spec_norm
    }

    /// Number of measurements `n`.
    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    /// Signal dimension `N`.
    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Signals (columns of an `N x m` matrix) with their measurements `Y = AX`.
///
/// Only constructible through [`take_measurements`], so the measurements are
/// always the product of the signals with the sensing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    signals: Matrix,
    measurements: Matrix,
    b_in: f64,
}

impl Dataset {
    pub fn signals(&self) -> &Matrix {
        &self.signals
    }

    pub fn measurements(&self) -> &Matrix {
        &self.measurements
    }

    /// Largest column ℓ2-norm of the signals.
    pub fn b_in(&self) -> f64 {
        self.b_in
    }

    pub fn len(&self) -> usize {
        self.signals.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The columns at `indices`; the bound `b_in` is recomputed for the subset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let signals = self.signals.select_columns(indices);
        let measurements = self.measurements.select_columns(indices);
        let b_in = max_norm(&signals);
        Dataset {
            signals,
            measurements,
            b_in,
        }
    }
}

fn max_norm(m: &Matrix) -> f64 {
    m.column_norms().into_iter().fold(0.0, f64::max)
}

pub fn take_measurements(a: &MeasurementMatrix, signals: Matrix) -> Dataset {
    assert_eq!(
        a.cols(),
        signals.rows(),
        "A has {} columns but signals have dimension {}",
        a.cols(),
        signals.rows()
    );
    let measurements = a.matrix().matmul(&signals);
    let b_in = max_norm(&signals);
    Dataset {
        signals,
        measurements,
        b_in,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Signal dimension `N`.
    #[serde(default = "default_signal_dim")]
    pub signal_dim: usize,
    /// Number of measurements `n`; `n > N` gives an overdetermined system.
    #[serde(default = "default_measurements")]
    pub measurements: usize,
    #[serde(default = "default_sparsity")]
    pub sparsity: usize,
    pub m_train: usize,
    pub m_test: usize,
    #[serde(default)]
    pub seed: u64,
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

impl SynthConfig {
    pub fn new(m_train: usize, m_test: usize, seed: u64) -> Self {
        Self {
            signal_dim: default_signal_dim(),
            measurements: default_measurements(),
            sparsity: default_sparsity(),
            m_train,
            m_test,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_dim == 0 || self.measurements == 0 {
            return Err(Error::InvalidParameter(
                "signal_dim and measurements must be positive".into(),
            ));
        }
        if self.sparsity > self.signal_dim {
            return Err(Error::InvalidParameter(format!(
                "sparsity {} exceeds signal dimension {}",
                self.sparsity, self.signal_dim
            )));
        }
        if self.m_train == 0 || self.m_test == 0 {
            return Err(Error::InvalidParameter("m_train and m_test must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub a: MeasurementMatrix,
    pub phi_true: Matrix,
    pub train: Dataset,
    pub test: Dataset,
}

const TAG_A: u64 = 1;
const TAG_DICT: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_TEST: u64 = 4;

/// Draws `A`, a ground-truth dictionary, and independent train/test sets of
/// signals `x = Φ z` with `s`-sparse `z`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticProblem> {
    cfg.validate()?;
    let a = MeasurementMatrix::gaussian(cfg.measurements, cfg.signal_dim, derive_seed(cfg.seed, TAG_A))?;
    let phi_true = random_orthogonal(cfg.signal_dim, derive_seed(cfg.seed, TAG_DICT));

    let mut train_rng = seeded_rng(cfg.seed, TAG_TRAIN);
    let z_train = sparse_codes(cfg.signal_dim, cfg.sparsity, cfg.m_train, &mut train_rng);
    let mut test_rng = seeded_rng(cfg.seed, TAG_TEST);
    let z_test = sparse_codes(cfg.signal_dim, cfg.sparsity, cfg.m_test, &mut test_rng);

    let train = take_measurements(&a, phi_true.matmul(&z_train));
    let test = take_measurements(&a, phi_true.matmul(&z_test));
    Ok(SyntheticProblem {
        a,
        phi_true,
        train,
        test,
    })
}

/// `m` columns of dimension `dim`, each with a uniformly random support of
/// size `sparsity` and standard normal values on it.
pub fn sparse_codes<R: Rng + ?Sized>(dim: usize, sparsity: usize, m: usize, rng: &mut R) -> Matrix {
    let mut z = Matrix::zeros(dim, m);
    for j in 0..m {
        for i in index::sample(rng, dim, sparsity) {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// Loads an IDX image file into an `(rows*cols) x count` matrix with pixel
/// values scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, limit).map_err(|e| match e {
        Error::Truncated { expected, found, .. } => Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        },
        other => other,
    })
}

pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Matrix> {
    let header = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(Error::Truncated {
                path: Default::default(),
                expected: 16,
                found: bytes.len(),
            })
    };
    let magic = header(0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )));
    }
    let count = header(1)? as usize;
    let rows = header(2)? as usize;
    let cols = header(3)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: Default::default(),
            expected,
            found: bytes.len(),
        });
    }
    let m = limit.map_or(count, |l| l.min(count));
    let body = &bytes[16..];
    let mut out = Matrix::zeros(pixels, m);
    for j in 0..m {
        let image = &body[j * pixels..(j + 1) * pixels];
        for (i, &b) in image.iter().enumerate() {
            out[(i, j)] = f64::from(b) / 255.0;
        }
    }
    Ok(out)
}
