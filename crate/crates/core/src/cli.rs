//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when a run fails (divergence, numerical
//! failure, failed sweep runs, gradient check above tolerance), 2 for usage
//! and configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bounds::{generalization_bound, BoundInputs};
use crate::error::{Error, Result};
use crate::experiment::{
    prepare_data, run_gradcheck, run_sweep, run_training, write_run, Axis, ExperimentConfig, GradcheckSpec,
};
use crate::io::{format_float, write_atomic};
use crate::ista::{ista_batch, objective};
use crate::network::HypothesisClass;
use crate::train::LossKind;

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "uista", version, about = "Unfolded ISTA networks with a learned orthogonal dictionary")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its record, parameters and bound.
    Train(RunArgs),
    /// Train over a list of values of one axis and several seeds.
    Sweep(SweepArgs),
    /// Print the generalization bound for the given inputs as JSON.
    Bound(BoundArgs),
    /// Run classical ISTA on the test set.
    Ista(RunArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    #[value(name = "L")]
    Layers,
    #[value(name = "N")]
    SignalDim,
    #[value(name = "n")]
    Measurements,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Layers => Axis::Layers,
            AxisArg::SignalDim => Axis::SignalDim,
            AxisArg::Measurements => Axis::Measurements,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub axis: AxisArg,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    /// Seeds per value.
    #[arg(long, default_value_t = 5)]
    pub repeats: u32,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub signal_dim: usize,
    #[arg(long)]
    pub measurements: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub layers: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spec_norm_a: f64,
    #[arg(long)]
    pub frob_y: f64,
    /// `‖I − τAᵀA‖₂`; 1 for compressive `A` with `τ‖A‖² = 1`.
    #[arg(long, default_value_t = 1.0)]
    pub contraction: f64,
    #[arg(long)]
    pub b_in: f64,
    #[arg(long)]
    pub b_out: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    H1,
    H2,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Mse,
    L2,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub signal_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub measurements: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub batch: usize,
    /// Weight of the orthogonality penalty.
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, value_enum, default_value_t = ClassArg::H1)]
    pub class: ClassArg,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    pub loss: LossArg,
}

/// Largest signal dimension `gradcheck` accepts; the check costs
/// `O(N²)` forward passes.
pub const GRADCHECK_MAX_DIM: usize = 10;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli))
}

/// Runs a parsed command and returns its exit code.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Bound(args) => cmd_bound(&args),
        Command::Ista(args) => cmd_ista(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::StepSize { .. } | Error::Unsupported(_) => 2,
        _ => 1,
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Config(format!("config file not found: {}", path.display())));
            }
            ExperimentConfig::load(path)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    let outcome = run_training(&cfg)?;
    write_run(&cfg.out, &outcome)?;
    let s = &outcome.summary;
    println!("train_loss {}", format_float(s.train_loss));
    println!("test_loss {}", format_float(s.test_loss));
    println!("gen_gap {}", format_float(s.gen_gap));
    println!("bound_total {}", format_float(s.bound_total));
    if let Some(e) = s.ista_test_error {
        println!("ista_test_error {}", format_float(e));
    }
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let cfg = load_config(&args.run)?;
    let axis = Axis::from(args.axis);
    let result = run_sweep(&cfg, axis, &args.values, args.repeats)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(format!("sweep_{axis}.csv"));
    write_atomic(&path, result.to_csv().as_bytes())?;
    for (v, gap) in result.median_gaps() {
        println!("{axis}={v} median_gen_gap {}", format_float(gap));
    }
    for r in result.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "run {axis}={} seed={} failed: {}",
            r.axis_value,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(if result.failures() > 0 { 1 } else { 0 })
}

fn cmd_bound(args: &BoundArgs) -> Result<u8> {
    let inputs = BoundInputs {
        signal_dim: args.signal_dim,
        measurements: args.measurements,
        samples: args.samples,
        layers: args.layers,
        tau: args.tau,
        spec_norm_a: args.spec_norm_a,
        frob_y: args.frob_y,
        contraction: args.contraction,
        b_in: args.b_in,
        b_out: args.b_out,
        delta: args.delta,
    };
    let report = generalization_bound(&inputs)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    println!("{json}");
    Ok(0)
}

fn cmd_ista(args: &RunArgs) -> Result<u8> {
    let cfg = load_config(args)?;
    if cfg.ista.iterations == 0 {
        return Err(Error::Config("ista.iterations must be positive".into()));
    }
    let data = prepare_data(&cfg)?;
    let y = data.test.measurements();
    let x = ista_batch(&data.a, y, cfg.net.lambda, cfg.net.tau, cfg.ista.iterations)?;
    let truth = data.test.signals();
    let mut csv = String::from("sample,objective,error\n");
    let mut total = 0.0;
    for j in 0..x.cols() {
        let xj = x.column(j);
        let f = objective(data.a.matrix(), &y.column(j), cfg.net.lambda, &xj);
        let err = xj
            .iter()
            .zip(truth.column(j))
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        total += err;
        csv.push_str(&format!("{j},{},{}\n", format_float(f), format_float(err)));
    }
    create_dir(&cfg.out)?;
    write_atomic(&cfg.out.join("ista.csv"), csv.as_bytes())?;
    println!("ista_test_error {}", format_float(total / x.cols() as f64));
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<u8> {
    if args.signal_dim > GRADCHECK_MAX_DIM {
        return Err(Error::Config(format!(
            "gradcheck supports signal_dim <= {GRADCHECK_MAX_DIM}, got {}",
            args.signal_dim
        )));
    }
    let spec = GradcheckSpec {
        seed: args.seed,
        signal_dim: args.signal_dim,
        measurements: args.measurements,
        layers: args.layers,
        batch: args.batch,
        beta: args.beta,
        class: match args.class {
            ClassArg::H1 => HypothesisClass::H1,
            ClassArg::H2 => HypothesisClass::H2,
        },
        loss: match args.loss {
            LossArg::Mse => LossKind::Mse,
            LossArg::L2 => LossKind::L2,
        },
    };
    let r = run_gradcheck(&spec)?;
    println!("max_rel_error {}", format_float(r.max_rel_error));
    println!("checked {}", r.checked);
    println!("skipped {}", r.skipped);
    Ok(if r.max_rel_error <= GRADCHECK_TOLERANCE { 0 } else { 1 })
}
