//! Command-line front end: simulate datasets, fit by EM or power iteration,
//! evaluate estimates, run experiment grids, and compute recovery bounds.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use tpca::diagnostics::{
    concentration_terms, one_step_bounds, tau_interval, ConcentrationInput, ConcentrationTerms,
    TauInterval,
};
use tpca::em::{fit_em, EmConfig, EmInit, EmStatus, Sigma2Init};
use tpca::eval::align_factors;
use tpca::harness::{
    emit, run_experiment, ExperimentSpec, GridSummary, OutputFormat as RecordFormat,
};
use tpca::io::{read_dataset, write_dataset, MatrixJson, ModelJson};
use tpca::power::{run_power, PowerConfig};
use tpca::{Result, TpcaError};

#[derive(Parser)]
#[command(name = "tpca", version, about = "Tensor probabilistic PCA toolkit")]
struct Cli {
    /// Worker threads for experiment replications (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a model and write it to a file
    Simulate(SimulateArgs),
    /// Fit a model to a dataset by expectation-maximization
    FitEm(FitEmArgs),
    /// Fit by power iteration on the sample covariance
    FitPower(FitPowerArgs),
    /// Procrustes-aligned per-mode errors of an estimate against a reference
    Eval(EvalArgs),
    /// Run a simulation grid and emit one record per replication
    Experiment(ExperimentArgs),
    /// Evaluate finite-sample concentration and recovery bounds
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON file; omit to draw a ground truth from --dims/--latent/--sigma2
    #[arg(long)]
    model: Option<PathBuf>,
    /// Ambient mode sizes, e.g. 5x5x5
    #[arg(long)]
    dims: Option<String>,
    /// Latent mode sizes, e.g. 2x2x2
    #[arg(long)]
    latent: Option<String>,
    /// Noise variance of the drawn ground truth
    #[arg(long)]
    sigma2: Option<f64>,
    /// Number of samples
    #[arg(long, short = 'n')]
    n_samples: usize,
    /// Master seed (drives both the truth draw and the sampling)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset path (a .json sidecar records the generating model)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitEmArgs {
    /// Dataset file
    data: PathBuf,
    /// Latent mode sizes, e.g. 2x2x2
    #[arg(long)]
    latent: String,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Relative log-likelihood change threshold
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Initial noise variance; omit to use the spectral residual
    #[arg(long)]
    sigma2_init: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitPowerArgs {
    /// Dataset file
    data: PathBuf,
    /// Latent mode sizes, e.g. 2x2x2
    #[arg(long)]
    latent: String,
    /// Number of power sweeps
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimates JSON produced by fit-em or fit-power
    #[arg(long)]
    estimates: PathBuf,
    /// Reference model JSON
    #[arg(long)]
    truth: PathBuf,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
enum CaseName {
    Case1,
    Case2,
    Case3,
}

#[derive(Copy, Clone, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Built-in simulation case
    #[arg(long, value_enum)]
    case: Option<CaseName>,
    /// Experiment spec JSON (alternative to --case)
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Replications per grid point (with --case)
    #[arg(long, default_value_t = 10)]
    replications: usize,
    /// Master seed (with --case)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output records path
    #[arg(long)]
    out: PathBuf,
    /// Suppress the per-grid-point summary on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Input JSON: {"concentration": {...}, "omega": <opt>, "tau": <opt>}
    input: PathBuf,
    /// Output JSON path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Estimates JSON shared by the two fitters; `eval` reads the union.
#[derive(Serialize, Deserialize)]
struct FitReport {
    estimator: String,
    /// Fitted factor matrices (EM: normalized model factors; power: Â_k).
    factors: Vec<MatrixJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelJson>,
    sigma2_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_negative: Option<bool>,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_likelihood: Option<f64>,
}

#[derive(Serialize)]
struct EvalReport {
    per_mode: Vec<f64>,
    average: f64,
}

#[derive(Deserialize)]
struct DiagnoseInput {
    concentration: ConcentrationInput,
    omega: Option<f64>,
    tau: Option<f64>,
}

#[derive(Serialize)]
struct DiagnoseReport {
    terms: ConcentrationTerms,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_interval: Option<TauInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f2: Option<f64>,
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(['x', ','])
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| TpcaError::validation(format!("bad dimension list {s:?}")))
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body =
        std::fs::read_to_string(path).map_err(|e| TpcaError::io(path.display().to_string(), e))?;
    serde_json::from_str(&body)
        .map_err(|e| TpcaError::validation(format!("{}: {e}", path.display())))
}

fn write_output<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .map_err(|e| TpcaError::validation(format!("encoding output: {e}")))?;
    body.push('\n');
    match out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| TpcaError::io(path.display().to_string(), e))
        }
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| TpcaError::io("<stdout>", e)),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let model = match (&args.model, &args.dims, &args.latent, args.sigma2) {
        (Some(path), None, None, None) => read_json::<ModelJson>(path)?.to_model()?,
        (None, Some(dims), Some(latent), Some(sigma2)) => {
            let truth_seed = args.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
            tpca::harness::generate_truth(&parse_dims(dims)?, &parse_dims(latent)?, sigma2, truth_seed)?
        }
        _ => {
            return Err(TpcaError::validation(
                "pass either --model, or all of --dims/--latent/--sigma2",
            ))
        }
    };
    let data = model.sample(args.n_samples, args.seed)?;
    write_dataset(&args.out, &data)
}

fn cmd_fit_em(args: &FitEmArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let config = EmConfig {
        max_iter: args.max_iter,
        tol: args.tol,
        init: EmInit::Hosvd(parse_dims(&args.latent)?),
        sigma2_init: match args.sigma2_init {
            Some(v) => Sigma2Init::Fixed(v),
            None => Sigma2Init::Residual,
        },
        seed: args.seed,
    };
    let fit = fit_em(&data, &config)?;
    let report = FitReport {
        estimator: "em".into(),
        factors: fit
            .model
            .factors()
            .factors()
            .iter()
            .map(MatrixJson::from_matrix)
            .collect(),
        model: Some(ModelJson::from_model(&fit.model)),
        sigma2_hat: fit.model.sigma2(),
        omega_hat: None,
        sigma2_negative: None,
        iterations: fit.iterations,
        converged: Some(fit.status == EmStatus::Converged),
        log_likelihood: fit.trace.last().copied(),
    };
    write_output(&report, args.out.as_deref())
}

fn cmd_fit_power(args: &FitPowerArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let config = PowerConfig::random(args.iterations, parse_dims(&args.latent)?, args.seed);
    let (_, est) = run_power(&data, &config, None)?;
    let report = FitReport {
        estimator: "power".into(),
        factors: est.a_hat.iter().map(MatrixJson::from_matrix).collect(),
        model: None,
        sigma2_hat: est.sigma2_hat,
        omega_hat: Some(est.omega_hat),
        sigma2_negative: Some(est.sigma2_negative),
        iterations: args.iterations,
        converged: None,
        log_likelihood: None,
    };
    write_output(&report, args.out.as_deref())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let estimates: FitReport = read_json(&args.estimates)?;
    let truth = read_json::<ModelJson>(&args.truth)?.to_model()?;
    let a_hat = estimates
        .factors
        .iter()
        .map(|f| f.to_matrix())
        .collect::<Result<Vec<_>>>()?;
    let report = align_factors(&a_hat, truth.factors().factors())?;
    write_output(
        &EvalReport {
            per_mode: report.per_mode,
            average: report.average,
        },
        args.out.as_deref(),
    )
}

fn print_summaries(summaries: &[GridSummary], spec: &ExperimentSpec) {
    for s in summaries {
        let p = &spec.grid[s.grid_index];
        match &s.err_mean {
            Some(sum) => println!(
                "grid {:>3} {:<5} dims {:?} m {:?} sigma2 {:<6} N {:<4} L {:<3} \
                 mean_err {:.4} ci [{:.4}, {:.4}] over {} reps",
                s.grid_index,
                s.estimator,
                p.dims,
                p.latent_dims,
                p.sigma2,
                p.n_samples,
                p.iterations,
                sum.mean,
                sum.ci_lower,
                sum.ci_upper,
                sum.count
            ),
            None => println!(
                "grid {:>3} {:<5}: fewer than two successful replications",
                s.grid_index, s.estimator
            ),
        }
    }
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let spec = match (&args.case, &args.spec) {
        (Some(case), None) => match case {
            CaseName::Case1 => ExperimentSpec::case1(args.replications, args.seed),
            CaseName::Case2 => ExperimentSpec::case2(args.replications, args.seed),
            CaseName::Case3 => ExperimentSpec::case3(args.replications, args.seed),
        },
        (None, Some(path)) => read_json(path)?,
        _ => {
            return Err(TpcaError::validation(
                "pass exactly one of --case or --spec",
            ))
        }
    };
    let outcome = run_experiment(&spec)?;
    let format = match args.format {
        FormatArg::Csv => RecordFormat::Csv,
        FormatArg::Json => RecordFormat::Json,
    };
    emit(&outcome.records, format, &args.out)?;
    if !args.quiet {
        print_summaries(&outcome.summaries, &spec);
    }
    let failures = outcome.records.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!(
            "{failures} of {} replications recorded an error",
            outcome.records.len()
        );
    }
    Ok(())
}

fn cmd_diagnose(args: &DiagnoseArgs) -> Result<()> {
    let input: DiagnoseInput = read_json(&args.input)?;
    let terms = concentration_terms(&input.concentration)?;
    let m: usize = input.concentration.latent_dims.iter().product();
    let r = input.concentration.dims.len();
    let mut report = DiagnoseReport {
        terms,
        tau_interval: None,
        f1: None,
        f2: None,
    };
    if let Some(omega) = input.omega {
        if !(omega > 0.0) {
            return Err(TpcaError::validation("omega must be positive"));
        }
        report.tau_interval = Some(tau_interval(terms.psi / omega, m, r, 1e-10)?);
        if let Some(tau) = input.tau {
            let (f1, f2) = one_step_bounds(terms.psi, omega, tau, m, r)?;
            report.f1 = Some(f1);
            report.f2 = Some(f2);
        }
    } else if input.tau.is_some() {
        return Err(TpcaError::validation("tau requires omega"));
    }
    write_output(&report, args.out.as_deref())
}

fn exit_code(e: &TpcaError) -> i32 {
    match e {
        TpcaError::Validation(_) => 1,
        TpcaError::Numerical(_) => 2,
        TpcaError::Io { .. } => 3,
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(TpcaError::validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| TpcaError::validation(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::FitEm(args) => cmd_fit_em(args),
        Command::FitPower(args) => cmd_fit_power(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
