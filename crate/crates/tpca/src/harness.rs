//! Seeded experiment harness: grid definitions for the three simulation
//! cases, a deterministic parallel runner, and CSV/JSON emission.
//!
//! Determinism contract: for a fixed [`ExperimentSpec`] the produced records
//! are byte-identical across runs and across worker counts. Every replication
//! derives its own seeds from a stable hash of (master seed, grid key,
//! replication index), and parallel results are collected in job order. Wall
//! times are the only nondeterministic field and are off by default.

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit_em, init_hosvd_orthonormal, EmConfig, EmInit, Sigma2Init};
use crate::error::{Result, TpcaError};
use crate::eval::{align_factors, summarize, ReplicationSummary};
use crate::model::{Dataset, TpcaModel};
use crate::power::{run_power, PowerConfig, PowerInit, PowerPath};
use crate::tensor::{DenseTensor, TuckerFactors};

/// Relative log-likelihood tolerance used by the EM estimator in experiment
/// runs; the iteration cap comes from the grid point.
pub const EM_TOL: f64 = 1e-3;

/// One cell of an experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub dims: Vec<usize>,
    pub latent_dims: Vec<usize>,
    pub sigma2: f64,
    pub n_samples: usize,
    /// EM iteration cap, or number of power sweeps.
    pub iterations: usize,
    /// Seed-derivation key. Grid points sharing a key see identical truth,
    /// data, and initialization per replication, so a sweep over `iterations`
    /// traces one run at increasing budgets. Defaults to the grid index.
    #[serde(default)]
    pub seed_group: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Em,
    Power,
    Both,
}

impl Estimator {
    fn labels(self) -> &'static [&'static str] {
        match self {
            Estimator::Em => &["em"],
            Estimator::Power => &["power"],
            Estimator::Both => &["em", "power"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub grid: Vec<GridPoint>,
    pub replications: usize,
    pub master_seed: u64,
    pub estimator: Estimator,
    /// Record wall times. They break byte-identical reproducibility, so the
    /// default is off.
    #[serde(default)]
    pub record_timings: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(TpcaError::validation("experiment grid is empty"));
        }
        if self.replications == 0 {
            return Err(TpcaError::validation("need at least one replication"));
        }
        for (i, p) in self.grid.iter().enumerate() {
            if p.dims.len() != p.latent_dims.len() || p.dims.is_empty() {
                return Err(TpcaError::validation(format!(
                    "grid point {i}: dims/latent_dims arity mismatch"
                )));
            }
            if p.dims.iter().zip(&p.latent_dims).any(|(&n, &m)| m > n || m == 0) {
                return Err(TpcaError::validation(format!(
                    "grid point {i}: latent dims must satisfy 1 <= m_k <= n_k"
                )));
            }
            if !(p.sigma2 > 0.0) {
                return Err(TpcaError::validation(format!(
                    "grid point {i}: sigma2 must be positive"
                )));
            }
            if p.n_samples == 0 || p.iterations == 0 {
                return Err(TpcaError::validation(format!(
                    "grid point {i}: n_samples and iterations must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Simulation case 1: cubic shapes (n,n,n)/(m,m,m) for
    /// (n,m) ∈ {(5,2),(5,3),(15,6),(15,9)} crossed with σ² ∈ {0.1, 1, 10},
    /// N = 15, EM with an orthonormal warm start capped at 100 iterations.
    pub fn case1(replications: usize, master_seed: u64) -> Self {
        let mut grid = Vec::new();
        for &(n, m) in &[(5usize, 2usize), (5, 3), (15, 6), (15, 9)] {
            for &sigma2 in &[0.1, 1.0, 10.0] {
                grid.push(GridPoint {
                    dims: vec![n, n, n],
                    latent_dims: vec![m, m, m],
                    sigma2,
                    n_samples: 15,
                    iterations: 100,
                    seed_group: None,
                });
            }
        }
        ExperimentSpec {
            name: "case1".into(),
            grid,
            replications,
            master_seed,
            estimator: Estimator::Em,
            record_timings: false,
        }
    }

    /// Simulation case 2: (15,15,15)/(3,3,3), σ² = 1, N = 400, power sweeps
    /// L ∈ {1,…,10}. All points share a seed group so each replication traces
    /// a single run at increasing iteration budgets.
    pub fn case2(replications: usize, master_seed: u64) -> Self {
        let grid = (1..=10)
            .map(|l| GridPoint {
                dims: vec![15, 15, 15],
                latent_dims: vec![3, 3, 3],
                sigma2: 1.0,
                n_samples: 400,
                iterations: l,
                seed_group: Some(0),
            })
            .collect();
        ExperimentSpec {
            name: "case2".into(),
            grid,
            replications,
            master_seed,
            estimator: Estimator::Power,
            record_timings: false,
        }
    }

    /// Simulation case 3: (40,60,80)/(2,3,4), power iteration over the full
    /// grid σ² ∈ {1,4,9,16,25} × N ∈ {100,…,500}.
    pub fn case3(replications: usize, master_seed: u64) -> Self {
        Self::case3_subset(replications, master_seed, &[1.0, 4.0, 9.0, 16.0, 25.0], &[100, 200, 300, 400, 500])
    }

    /// Case 3 restricted to the given σ² and N lists.
    pub fn case3_subset(
        replications: usize,
        master_seed: u64,
        sigma2_list: &[f64],
        n_list: &[usize],
    ) -> Self {
        let mut grid = Vec::new();
        for (row, &sigma2) in sigma2_list.iter().enumerate() {
            for &n_samples in n_list {
                // One seed group per σ² row: sampling uses per-sample
                // substreams, so the N values see nested datasets (common
                // random numbers) and the error-vs-N curves are comparable.
                grid.push(GridPoint {
                    dims: vec![40, 60, 80],
                    latent_dims: vec![2, 3, 4],
                    sigma2,
                    n_samples,
                    iterations: 5,
                    seed_group: Some(row),
                });
            }
        }
        ExperimentSpec {
            name: "case3".into(),
            grid,
            replications,
            master_seed,
            estimator: Estimator::Power,
            record_timings: false,
        }
    }
}

/// One row per (grid point, replication, estimator).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub case: String,
    pub grid_index: usize,
    pub replication: usize,
    pub estimator: String,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub latent_dims: Vec<usize>,
    pub sigma2: f64,
    pub n_samples: usize,
    pub iterations: usize,
    /// Procrustes-aligned size-normalized error per mode; empty on failure.
    pub err_modes: Vec<f64>,
    pub err_mean: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub omega_hat: Option<f64>,
    pub iterations_used: Option<usize>,
    pub wall_time_ms: Option<f64>,
    pub error: Option<String>,
}

/// Per grid point, mean-error summary over the successful replications of one
/// estimator. Absent when fewer than two replications succeeded.
#[derive(Clone, Debug)]
pub struct GridSummary {
    pub grid_index: usize,
    pub estimator: String,
    pub err_mean: Option<ReplicationSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summaries: Vec<GridSummary>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of (master seed, grid key, replication index). Each
/// replication owns its own RNG streams derived from this value.
pub fn child_seed(master_seed: u64, grid_key: usize, replication: usize) -> u64 {
    let mut h = splitmix64(master_seed);
    h = splitmix64(h ^ (grid_key as u64).wrapping_mul(0xD134_2543_DE82_EF95));
    h = splitmix64(h ^ (replication as u64).wrapping_mul(0xAF25_1AF3_B0F0_25B5));
    h
}

/// Draw the ground-truth model: A_raw with i.i.d. standard-normal entries,
/// A_k = U_k D_k from its SVD (so A_kᵀA_k is diagonal), rescaled to
/// ‖A_k‖_F = √(n_k m_k), with ν = 0.
pub fn generate_truth(
    dims: &[usize],
    latent_dims: &[usize],
    sigma2: f64,
    seed: u64,
) -> Result<TpcaModel> {
    if dims.len() != latent_dims.len() || dims.is_empty() {
        return Err(TpcaError::validation("dims/latent_dims arity mismatch"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = Vec::with_capacity(dims.len());
    for (&n, &m) in dims.iter().zip(latent_dims) {
        if m > n || m == 0 {
            return Err(TpcaError::validation(format!(
                "latent dim {m} out of range for ambient dim {n}"
            )));
        }
        let raw = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let svd = raw.svd(true, false);
        let u = svd
            .u
            .ok_or_else(|| TpcaError::numerical("svd failed in truth generation"))?;
        let mut a = u;
        for j in 0..m {
            let s = svd.singular_values[j];
            for i in 0..n {
                a[(i, j)] *= s;
            }
        }
        let norm = a.norm();
        if norm <= 0.0 {
            return Err(TpcaError::numerical("degenerate truth factor"));
        }
        a *= ((n * m) as f64).sqrt() / norm;
        factors.push(a);
    }
    let factors = TuckerFactors::new(factors)?;
    let nu = DenseTensor::zeros(factors.input_shape());
    TpcaModel::new(factors, nu, sigma2)
}

struct FitOutput {
    err_modes: Vec<f64>,
    sigma2_hat: f64,
    omega_hat: Option<f64>,
    iterations_used: usize,
}

fn fit_one(
    label: &str,
    point: &GridPoint,
    data: &Dataset,
    truth: &TpcaModel,
    algo_seed: u64,
) -> Result<FitOutput> {
    match label {
        "em" => {
            let init = init_hosvd_orthonormal(data, &point.latent_dims, point.sigma2)?;
            let config = EmConfig {
                max_iter: point.iterations,
                tol: EM_TOL,
                init: EmInit::Provided(init),
                sigma2_init: Sigma2Init::Fixed(point.sigma2),
                seed: algo_seed,
            };
            let fit = fit_em(data, &config)?;
            // Errors are computed under a common scale convention: the fitted
            // model is already normalized (equalized Gram norms), so the truth
            // is normalized the same way.
            let report = align_factors(
                fit.model.factors().factors(),
                truth.normalize()?.factors().factors(),
            )?;
            Ok(FitOutput {
                err_modes: report.per_mode,
                sigma2_hat: fit.model.sigma2(),
                omega_hat: None,
                iterations_used: fit.iterations,
            })
        }
        "power" => {
            let config = PowerConfig {
                iterations: point.iterations,
                latent_dims: point.latent_dims.clone(),
                init: PowerInit::RandomPsd,
                seed: algo_seed,
                path: PowerPath::Fast,
                gauss_seidel: false,
            };
            let (_, est) = run_power(data, &config, None)?;
            // Â_k already carries the equal-split scale ω̂^{1/r}; align it
            // against the truth under the same equalized-scale convention.
            let report = align_factors(&est.a_hat, truth.normalize()?.factors().factors())?;
            Ok(FitOutput {
                err_modes: report.per_mode,
                sigma2_hat: est.sigma2_hat,
                omega_hat: Some(est.omega_hat),
                iterations_used: point.iterations,
            })
        }
        other => Err(TpcaError::validation(format!("unknown estimator {other}"))),
    }
}

fn run_replication(spec: &ExperimentSpec, grid_index: usize, replication: usize) -> Vec<ExperimentRecord> {
    let point = &spec.grid[grid_index];
    let grid_key = point.seed_group.unwrap_or(grid_index);
    let seed = child_seed(spec.master_seed, grid_key, replication);
    let truth_seed = splitmix64(seed ^ 1);
    let data_seed = splitmix64(seed ^ 2);
    let algo_seed = splitmix64(seed ^ 3);

    let base = ExperimentRecord {
        case: spec.name.clone(),
        grid_index,
        replication,
        estimator: String::new(),
        seed,
        dims: point.dims.clone(),
        latent_dims: point.latent_dims.clone(),
        sigma2: point.sigma2,
        n_samples: point.n_samples,
        iterations: point.iterations,
        err_modes: Vec::new(),
        err_mean: None,
        sigma2_hat: None,
        omega_hat: None,
        iterations_used: None,
        wall_time_ms: None,
        error: None,
    };

    let prepared = generate_truth(&point.dims, &point.latent_dims, point.sigma2, truth_seed)
        .and_then(|truth| {
            let data = truth.sample(point.n_samples, data_seed)?;
            Ok((truth, data))
        });
    let (truth, data) = match prepared {
        Ok(pair) => pair,
        Err(e) => {
            // One error row per requested estimator so row counts stay fixed.
            return spec
                .estimator
                .labels()
                .iter()
                .map(|&label| {
                    let mut rec = base.clone();
                    rec.estimator = label.into();
                    rec.error = Some(e.to_string());
                    rec
                })
                .collect();
        }
    };

    spec.estimator
        .labels()
        .iter()
        .map(|&label| {
            let mut rec = base.clone();
            rec.estimator = label.into();
            let start = spec.record_timings.then(Instant::now);
            match fit_one(label, point, &data, &truth, algo_seed) {
                Ok(out) => {
                    rec.err_mean =
                        Some(out.err_modes.iter().sum::<f64>() / out.err_modes.len() as f64);
                    rec.err_modes = out.err_modes;
                    rec.sigma2_hat = Some(out.sigma2_hat);
                    rec.omega_hat = out.omega_hat;
                    rec.iterations_used = Some(out.iterations_used);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec.wall_time_ms = start.map(|t| t.elapsed().as_secs_f64() * 1e3);
            rec
        })
        .collect()
}

/// Run every (grid point, replication) job. Replications are distributed over
/// the current rayon pool; records come back in job order, so the output is
/// identical for any worker count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|g| (0..spec.replications).map(move |r| (g, r)))
        .collect();
    let records: Vec<ExperimentRecord> = jobs
        .par_iter()
        .map(|&(g, r)| run_replication(spec, g, r))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut summaries = Vec::new();
    for g in 0..spec.grid.len() {
        for &label in spec.estimator.labels() {
            let values: Vec<f64> = records
                .iter()
                .filter(|rec| rec.grid_index == g && rec.estimator == label)
                .filter_map(|rec| rec.err_mean)
                .collect();
            summaries.push(GridSummary {
                grid_index: g,
                estimator: label.into(),
                err_mean: if values.len() >= 2 {
                    Some(summarize("err_mean", &values)?)
                } else {
                    None
                },
            });
        }
    }
    Ok(ExperimentOutcome { records, summaries })
}

/// Fixed CSV column order. `dims` and `latent_dims` are `x`-separated,
/// `err_modes` is `;`-separated, optional fields serialize as empty cells.
pub const CSV_HEADER: &str = "case,grid_index,replication,estimator,seed,dims,latent_dims,sigma2,\
n_samples,iterations,err_modes,err_mean,sigma2_hat,omega_hat,iterations_used,wall_time_ms,error";

/// 17 significant digits: round-trips every finite f64 exactly.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = TpcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(TpcaError::validation(format!(
                "unknown output format {other:?} (expected csv or json)"
            ))),
        }
    }
}

/// Render records as RFC-4180 CSV with the fixed header.
pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(TpcaError::validation("no records to emit"));
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(CSV_HEADER.split(','))
        .map_err(|e| TpcaError::numerical(format!("csv encoding failed: {e}")))?;
    for rec in records {
        let err_modes = rec
            .err_modes
            .iter()
            .map(|&v| fmt17(v))
            .collect::<Vec<_>>()
            .join(";");
        let row = [
            rec.case.clone(),
            rec.grid_index.to_string(),
            rec.replication.to_string(),
            rec.estimator.clone(),
            rec.seed.to_string(),
            fmt_dims(&rec.dims),
            fmt_dims(&rec.latent_dims),
            fmt17(rec.sigma2),
            rec.n_samples.to_string(),
            rec.iterations.to_string(),
            err_modes,
            fmt_opt(rec.err_mean),
            fmt_opt(rec.sigma2_hat),
            fmt_opt(rec.omega_hat),
            rec.iterations_used
                .map(|i| i.to_string())
                .unwrap_or_default(),
            fmt_opt(rec.wall_time_ms),
            rec.error.clone().unwrap_or_default(),
        ];
        wtr.write_record(&row)
            .map_err(|e| TpcaError::numerical(format!("csv encoding failed: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| TpcaError::numerical(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| TpcaError::numerical(format!("csv encoding failed: {e}")))
}

/// Render records as pretty JSON mirroring the record schema.
pub fn records_to_json(records: &[ExperimentRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(TpcaError::validation("no records to emit"));
    }
    let mut s = serde_json::to_string_pretty(records)
        .map_err(|e| TpcaError::numerical(format!("json encoding failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn records_from_json(s: &str) -> Result<Vec<ExperimentRecord>> {
    serde_json::from_str(s).map_err(|e| TpcaError::validation(format!("bad records json: {e}")))
}

/// Write records to `path` in the requested format.
pub fn emit(records: &[ExperimentRecord], format: OutputFormat, path: &Path) -> Result<()> {
    let body = match format {
        OutputFormat::Csv => records_to_csv(records)?,
        OutputFormat::Json => records_to_json(records)?,
    };
    std::fs::write(path, body).map_err(|e| TpcaError::io(path.display().to_string(), e))
}
