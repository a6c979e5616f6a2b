//! Command-line front end. `main.rs` only forwards to [`run`].
//!
//! Exit codes: 0 success (for `verify`: certified), 2 a sound verdict other
//! than `certified_GES`, 1 usage or input error. Errors go to stderr as
//! `{"error": {"code": ..., "message": ...}}`.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::bench::{bench_report, render_table, BenchError};
use crate::linalg::{LinalgConfig, LinalgError};
use crate::lure::{verify_stability, VerifyError};
use crate::model::{load_model_with_hash, ModelError};
use crate::nn::NnError;
use crate::report::{
    BoundReport, RunSummary, SimulationSummary, VerdictReport, CONVERGENCE_THRESHOLD, TOOL_VERSION,
};
use crate::sim::{
    estimate_decay_rate, monitor_sector, norm1, sample_initial_conditions, simulate_from,
    SimConfig, SimError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CERTIFIED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lure-verify", version, about = "Stability certificates for positive plants under neural network feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the positive Aizerman test and print a verdict report.
    Verify(VerifyArgs),
    /// Print the network sector bound.
    Bound(BoundArgs),
    /// Simulate the closed loop from nonnegative initial conditions.
    Simulate(SimulateArgs),
    /// Compare the sector bound with the product-of-norms Lipschitz bound.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Tolerances {
    /// Off-diagonal entries >= -tol count as nonnegative.
    #[arg(long, default_value_t = 0.0)]
    pub tol_metzler: f64,
    /// Hurwitz iff the spectral abscissa is below -tol.
    #[arg(long, default_value_t = 1e-9)]
    pub tol_hurwitz: f64,
    /// Eigenvalue iteration deflation tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol_eig: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iter: usize,
}

impl Tolerances {
    fn config(&self) -> Result<LinalgConfig, CliError> {
        for (name, v) in [
            ("--tol-metzler", self.tol_metzler),
            ("--tol-hurwitz", self.tol_hurwitz),
            ("--tol-eig", self.tol_eig),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CliError::Usage(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(CliError::Usage("--max-iter must be >= 1".into()));
        }
        Ok(LinalgConfig {
            tol_metzler: self.tol_metzler,
            tol_hurwitz: self.tol_hurwitz,
            tol_eig: self.tol_eig,
            max_iter: self.max_iter,
            ..LinalgConfig::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub tol: Tolerances,
    /// JSON report (default).
    #[arg(long, conflicts_with = "text")]
    pub json: bool,
    /// Human-readable report.
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also print the bound after each hidden layer.
    #[arg(long)]
    pub per_layer: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for `traj_NNNN.csv` and `summary.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Initial conditions are uniform on [0, ic_max]^n.
    #[arg(long, default_value_t = 5.0)]
    pub ic_max: f64,
    /// Start every run from this state instead, e.g. `--x0 0,0`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-8)]
    pub positivity_tol: f64,
    /// Slack allowed when checking sector membership along trajectories.
    #[arg(long, default_value_t = 1e-9)]
    pub sector_tol: f64,
    /// Relative slack allowed when checking the decay envelope.
    #[arg(long, default_value_t = 1e-6)]
    pub envelope_tol: f64,
    #[arg(long, default_value_t = 1e12)]
    pub overflow_guard: f64,
    #[command(flatten)]
    pub tol: Tolerances,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 101)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

fn nn_code(e: &NnError) -> &'static str {
    match e {
        NnError::DegenerateSector { .. } => "degenerate_sector",
        NnError::Linalg(l) => linalg_code(l),
        _ => "controller",
    }
}

fn linalg_code(e: &LinalgError) -> &'static str {
    match e {
        LinalgError::NoConvergence { .. } => "no_convergence",
        LinalgError::TooLarge { .. } => "too_large",
        LinalgError::NonFinite { .. } => "non_finite",
        _ => "linalg",
    }
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Model(e) => e.code(),
            CliError::Verify(e) => match e {
                VerifyError::Hypothesis(_) => "hypothesis_violation",
                VerifyError::Nn(n) => nn_code(n),
                VerifyError::Linalg(l) => linalg_code(l),
                _ => "verify",
            },
            CliError::Sim(e) => match e {
                SimError::InvalidConfig(_) => "usage",
                SimError::StateLength { .. } | SimError::NegativeInitialState { .. } => {
                    "initial_state"
                }
                SimError::Verify(VerifyError::Nn(n)) => nn_code(n),
                _ => "simulation",
            },
            CliError::Bench(e) => match e {
                BenchError::InvalidArgument(_) => "usage",
                BenchError::Nn(n) => nn_code(n),
                BenchError::Linalg(l) => linalg_code(l),
                BenchError::NotOneLipschitz { .. } => "bench",
            },
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(shown.as_bytes());
                    EXIT_OK
                }
                _ => {
                    report_error(err, &CliError::Usage(shown.trim_end().to_owned()));
                    EXIT_ERROR
                }
            };
        }
    };
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(&a, out),
        Command::Bound(a) => cmd_bound(&a, out).map(|_| EXIT_OK),
        Command::Simulate(a) => cmd_simulate(&a, out).map(|_| EXIT_OK),
        Command::Compare(a) => cmd_compare(&a, out).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            report_error(err, &e);
            EXIT_ERROR
        }
    }
}

fn report_error(err: &mut dyn Write, e: &CliError) {
    let body = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
    let _ = writeln!(err, "{body}");
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let cfg = a.tol.config()?;
    let (model, hash) = load_model_with_hash(&a.model)?;
    let sys = model.lure_system()?;
    let cert = verify_stability(&sys, &cfg)?;
    let report = VerdictReport::new(&cert, sys.bound(), cfg, hash);
    if a.text {
        write_out(out, &report.to_text())?;
    } else {
        write_out(out, &(report.to_json() + "\n"))?;
    }
    Ok(if cert.is_certified() {
        EXIT_OK
    } else {
        EXIT_NOT_CERTIFIED
    })
}

pub fn cmd_bound(a: &BoundArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, hash) = load_model_with_hash(&a.model)?;
    let net = &model.controller;
    let bound = net.network_sector_bound().map_err(VerifyError::from)?;
    let per_layer = if a.per_layer {
        Some(net.layer_sector_bounds().map_err(VerifyError::from)?)
    } else {
        None
    };
    let report = BoundReport {
        architecture: net.architecture(),
        gamma_lower: bound.lower,
        gamma_upper: bound.upper,
        per_layer,
        tool_version: TOOL_VERSION.to_owned(),
        input_sha256: hash,
    };
    if a.json {
        write_out(out, &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))
    } else {
        write_out(out, &report.to_text())
    }
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = SimConfig {
        step: a.step,
        horizon: a.horizon,
        positivity_tol: a.positivity_tol,
        seed: a.seed,
        ic_max: a.ic_max,
        overflow_guard: a.overflow_guard,
    };
    cfg.validate()?;
    if a.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let lin = a.tol.config()?;
    let (model, hash) = load_model_with_hash(&a.model)?;
    let sys = model.lure_system()?;
    let n = sys.plant().state_dim();
    let initial = match &a.x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(SimError::StateLength {
                    expected: n,
                    got: x0.len(),
                }
                .into());
            }
            vec![x0.clone(); a.count]
        }
        None => sample_initial_conditions(n, a.count, cfg.seed, cfg.ic_max),
    };
    let cert = verify_stability(&sys, &lin).ok();

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let results = simulate_from(&sys, &initial, &cfg);
    let mut runs = Vec::with_capacity(results.len());
    for (index, (x0, result)) in initial.iter().zip(results).enumerate() {
        let (traj, diverged_at) = match result {
            Ok(t) => (t, None),
            Err(SimError::Diverged { time, partial, .. }) => (*partial, Some(time)),
            Err(e) => return Err(e.into()),
        };
        let name = format!("traj_{index:04}.csv");
        let path = a.out.join(&name);
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        traj.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&path, e))?;

        let final_norm = norm1(traj.final_state());
        let envelope_violations = match &cert {
            Some(c) if c.is_certified() => Some(traj.envelope_violations(c, a.envelope_tol)?),
            _ => None,
        };
        runs.push(RunSummary {
            index,
            csv: name,
            x0: x0.clone(),
            samples: traj.len(),
            diverged: diverged_at.is_some(),
            diverged_at,
            converged: diverged_at.is_none() && final_norm < CONVERGENCE_THRESHOLD,
            final_norm,
            decay_rate: estimate_decay_rate(&traj).ok(),
            min_state: traj.min_state(),
            positivity_violations: traj.positivity_violations(cfg.positivity_tol),
            sector: monitor_sector(&traj, sys.bound(), a.sector_tol),
            envelope_violations,
        });
    }
    let summary = SimulationSummary {
        config: cfg,
        count: a.count,
        verdict: cert.as_ref().map(|c| c.verdict),
        converged: runs.iter().filter(|r| r.converged).count(),
        diverged: runs.iter().filter(|r| r.diverged).count(),
        sector_violations: runs.iter().map(|r| r.sector.violations).sum(),
        positivity_violations: runs.iter().map(|r| r.positivity_violations).sum(),
        runs,
        tool_version: TOOL_VERSION.to_owned(),
        input_sha256: hash,
    };
    let path = a.out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("serializes") + "\n";
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    write_out(
        out,
        &format!(
            "runs: {}, converged: {}, diverged: {}, sector violations: {}, positivity violations: {}\nsummary: {}\n",
            summary.count,
            summary.converged,
            summary.diverged,
            summary.sector_violations,
            summary.positivity_violations,
            path.display()
        ),
    )
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model_with_hash(&a.model)?;
    let report = bench_report(&model.controller, a.samples, a.repeats, a.seed)?;
    let json = serde_json::to_string_pretty(&report).expect("serializes") + "\n";
    if let Some(path) = &a.json_out {
        fs::write(path, &json).map_err(|e| io_err(path, e))?;
    }
    if a.json {
        write_out(out, &json)
    } else {
        write_out(out, &render_table(std::slice::from_ref(&report)))
    }
}
