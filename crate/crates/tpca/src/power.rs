//! Rank-one power iteration on the pair-flattened sample covariance.
//!
//! The sample covariance of zero-mean data with a Kronecker-structured
//! signal part splits, after pair flattening, into a rank-one term
//! ⊗_k vec(B_k)/‖B_k‖_F (weighted by ω = Π_k ‖B_k‖_F) plus a perturbation.
//! Each sweep contracts the flattening against the current unit iterates on
//! all modes but one, then projects the freed mode back onto the feasible
//! set (PSD, rank ≤ m_k, unit Frobenius norm). The fast path never
//! materializes the n×n covariance: contractions reduce to per-sample
//! adjoint Tucker applications with eigenvalue square roots of the iterates.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Result, TpcaError};
use crate::eval::sin_theta;
use crate::model::Dataset;
use crate::tensor::{contract_modes, sym_eig_desc, DenseTensor, OperatorTensor, TuckerFactors};

/// Relative eigenvalue cutoff when factoring an iterate B = CCᵀ.
const EIG_SQRT_CUTOFF: f64 = 1e-12;
/// Allowed negative slack when validating PSD iterates.
const PSD_TOL: f64 = 1e-10;

/// Starting point for the iteration.
#[derive(Debug, Clone)]
pub enum PowerInit {
    /// B_k⁰ = G_kG_kᵀ/‖G_kG_kᵀ‖_F with G_k an n_k×m_k standard-normal draw.
    RandomPsd,
    /// B_k⁰ = U_kU_kᵀ/√m_k from the leading mode-k Gram eigenvectors.
    Hosvd,
    /// Caller-supplied iterate matrices (validated).
    Provided(Vec<DMatrix<f64>>),
}

/// Which evaluation strategy to use for the contraction step.
#[derive(Debug, Clone, Copy)]
pub enum PowerPath {
    /// Per-sample adjoint Tucker applications; never materializes pair(S_N).
    Fast,
    /// Explicit pair(S_N) contraction; refused above the entry cap.
    Naive { cap: usize },
    /// Run both and fail if they disagree beyond 1e-10 relative.
    BothWithCheck { cap: usize },
}

#[derive(Debug, Clone)]
pub struct PowerConfig {
    /// Number of sweeps L ≥ 1.
    pub iterations: usize,
    pub latent_dims: Vec<usize>,
    pub init: PowerInit,
    pub seed: u64,
    pub path: PowerPath,
    /// Update modes in place within a sweep instead of from the previous
    /// iterate. Off by default; the analyzed scheme uses the previous iterate
    /// for every other mode.
    pub gauss_seidel: bool,
}

impl PowerConfig {
    /// Random start with the fast path.
    pub fn random(iterations: usize, latent_dims: Vec<usize>, seed: u64) -> Self {
        PowerConfig {
            iterations,
            latent_dims,
            init: PowerInit::RandomPsd,
            seed,
            path: PowerPath::Fast,
            gauss_seidel: false,
        }
    }
}

/// Current iterates: one unit-Frobenius PSD matrix of rank ≤ m_k per mode.
#[derive(Debug, Clone)]
pub struct PowerState {
    b: Vec<DMatrix<f64>>,
    latent_dims: Vec<usize>,
    iteration: usize,
    /// Per-iteration sine of the angle between vec(B_k) and the true
    /// direction, one row per sweep, when a reference was supplied.
    sin_trace: Vec<Vec<f64>>,
}

impl PowerState {
    pub fn iterates(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn sin_trace(&self) -> &[Vec<f64>] {
        &self.sin_trace
    }

    fn validate(&self) -> Result<()> {
        for (b, &m_k) in self.b.iter().zip(&self.latent_dims) {
            check_iterate(b, m_k)?;
        }
        Ok(())
    }
}

/// Final estimates from the last iterate.
#[derive(Debug, Clone)]
pub struct PowerEstimates {
    /// Estimated signal strength ω̂ (contraction of pair(S_N) with all
    /// final directions).
    pub omega_hat: f64,
    /// Scaled per-mode matrices B̂_k = ω̂^{1/r}·direction.
    pub b_hat: Vec<DMatrix<f64>>,
    /// Â_k = Û_kΛ̂_k^{1/2} from the spectral decomposition of B̂_k.
    pub a_hat: Vec<DMatrix<f64>>,
    /// Residual noise estimate (1/n)tr(S_N) − (1/n)Π_k tr(B̂_k).
    pub sigma2_hat: f64,
    /// The residual estimator has no sign guarantee; set when it came out
    /// negative.
    pub sigma2_negative: bool,
}

fn check_iterate(b: &DMatrix<f64>, m_k: usize) -> Result<()> {
    if b.nrows() != b.ncols() {
        return Err(TpcaError::validation("iterate must be square"));
    }
    if (b.norm() - 1.0).abs() > 1e-8 {
        return Err(TpcaError::numerical(format!(
            "iterate Frobenius norm {} drifted from 1",
            b.norm()
        )));
    }
    let (vals, _) = sym_eig_desc(b);
    if vals.iter().any(|&v| v < -PSD_TOL) {
        return Err(TpcaError::numerical("iterate lost positive semidefiniteness"));
    }
    let rank = vals.iter().filter(|&&v| v > PSD_TOL).count();
    if rank > m_k {
        return Err(TpcaError::numerical(format!(
            "iterate rank {} exceeds {}",
            rank, m_k
        )));
    }
    Ok(())
}

/// Build the starting state.
pub fn init_power(data: &Dataset, config: &PowerConfig) -> Result<PowerState> {
    let dims = data.shape().dims().to_vec();
    let r = dims.len();
    if config.latent_dims.len() != r {
        return Err(TpcaError::validation("latent dimension arity mismatch"));
    }
    if config.iterations == 0 {
        return Err(TpcaError::validation("at least one iteration required"));
    }
    for (&n_k, &m_k) in dims.iter().zip(&config.latent_dims) {
        if m_k == 0 || m_k > n_k {
            return Err(TpcaError::validation("need 1 <= m_k <= n_k"));
        }
    }
    let b = match &config.init {
        PowerInit::RandomPsd => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            dims.iter()
                .zip(&config.latent_dims)
                .map(|(&n_k, &m_k)| {
                    let g = DMatrix::from_fn(n_k, m_k, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    let gg = &g * g.transpose();
                    let norm = gg.norm();
                    gg / norm
                })
                .collect()
        }
        PowerInit::Hosvd => {
            let mut out = Vec::with_capacity(r);
            for (k, (&n_k, &m_k)) in dims.iter().zip(&config.latent_dims).enumerate() {
                let mut gram = DMatrix::<f64>::zeros(n_k, n_k);
                for x in data.samples() {
                    let mk = x.mode_matricize(k + 1)?;
                    gram.gemm(1.0, &mk, &mk.transpose(), 1.0);
                }
                let (_, vecs) = sym_eig_desc(&gram);
                let u = vecs.columns(0, m_k);
                out.push(&u * u.transpose() / (m_k as f64).sqrt());
            }
            out
        }
        PowerInit::Provided(list) => {
            if list.len() != r {
                return Err(TpcaError::validation("provided iterate arity mismatch"));
            }
            for (b, &n_k) in list.iter().zip(&dims) {
                if b.nrows() != n_k || b.ncols() != n_k {
                    return Err(TpcaError::validation("provided iterate size mismatch"));
                }
            }
            list.clone()
        }
    };
    let state = PowerState {
        b,
        latent_dims: config.latent_dims.clone(),
        iteration: 0,
        sin_trace: Vec::new(),
    };
    state.validate()?;
    Ok(state)
}

/// Eigenvalue square root C with B ≈ CCᵀ, keeping eigenvalues above
/// `EIG_SQRT_CUTOFF`·λ_max.
fn eig_sqrt(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig_desc(b);
    let lam_max = vals.first().copied().unwrap_or(0.0).max(0.0);
    let kept: Vec<usize> = (0..vals.len())
        .filter(|&j| vals[j] > EIG_SQRT_CUTOFF * lam_max && vals[j] > 0.0)
        .collect();
    let mut c = DMatrix::zeros(b.nrows(), kept.len().max(1));
    for (out_j, &j) in kept.iter().enumerate() {
        let s = vals[j].sqrt();
        for i in 0..b.nrows() {
            c[(i, out_j)] = vecs[(i, j)] * s;
        }
    }
    c
}

fn naive_cap_check(dims: &[usize], cap: usize) -> Result<()> {
    let mut total: usize = 1;
    for &d in dims {
        total = total
            .checked_mul(d * d)
            .ok_or_else(|| TpcaError::validation("naive path size overflow"))?;
    }
    if total > cap {
        return Err(TpcaError::validation(format!(
            "naive path needs {} entries, cap is {}",
            total, cap
        )));
    }
    Ok(())
}

/// Explicit pair(S_N) as a dense tensor with mode dims n_k². Uncentered
/// second moments: the estimator targets the zero-mean model.
fn pair_sample_covariance(data: &Dataset) -> Result<crate::tensor::DenseTensor> {
    let n = data.shape().len();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for x in data.samples() {
        let v = x.to_vector();
        s.gemm(1.0 / data.len() as f64, &v, &v.transpose(), 1.0);
    }
    let op = OperatorTensor::from_mat(&s, data.shape().clone(), data.shape().clone())?;
    op.pair()
}

fn tilde_naive(data: &Dataset, state: &PowerState, k: usize, cap: usize) -> Result<DMatrix<f64>> {
    let dims = data.shape().dims();
    naive_cap_check(dims, cap)?;
    let pair = pair_sample_covariance(data)?;
    let vecs: Vec<Vec<f64>> = state.b.iter().map(|b| b.as_slice().to_vec()).collect();
    let assignments: Vec<Option<&[f64]>> = (0..dims.len())
        .map(|j| if j == k { None } else { Some(vecs[j].as_slice()) })
        .collect();
    let contracted = contract_modes(&pair, &assignments)?;
    let n_k = dims[k];
    Ok(DMatrix::from_column_slice(n_k, n_k, contracted.data()))
}

fn tilde_fast(data: &Dataset, state: &PowerState, k: usize) -> Result<DMatrix<f64>> {
    let dims = data.shape().dims();
    let n_k = dims[k];
    // Rank-truncated square roots for every mode but k; mode k stays
    // uncontracted, so no identity factor is ever materialized.
    let sqrts: Vec<Option<DMatrix<f64>>> = (0..dims.len())
        .map(|j| (j != k).then(|| eig_sqrt(&state.b[j])))
        .collect();
    let mut out = DMatrix::<f64>::zeros(n_k, n_k);
    for x in data.samples() {
        let mut w: Option<DenseTensor> = None;
        for (j, c) in sqrts.iter().enumerate() {
            if let Some(c) = c {
                w = Some(match &w {
                    Some(t) => t.mode_multiply(j + 1, c)?,
                    None => x.mode_multiply(j + 1, c)?,
                });
            }
        }
        // With a single mode there is nothing to contract: tilde = M_1(S_N).
        let mk = match &w {
            Some(w) => w.mode_matricize(k + 1)?,
            None => x.mode_matricize(k + 1)?,
        };
        out.gemm(1.0 / data.len() as f64, &mk, &mk.transpose(), 1.0);
    }
    Ok(out)
}

/// All r contractions of one Jacobi sweep in a single pass over the samples.
/// Produces exactly the same matrices as calling `tilde_fast` per mode (same
/// contraction order per accumulator), but reads each full sample tensor
/// twice instead of r times: modes 2..r reuse the shared mode-1 contraction.
fn tilde_all_fast(data: &Dataset, state: &PowerState) -> Result<Vec<DMatrix<f64>>> {
    let dims = data.shape().dims();
    let r = dims.len();
    if r == 1 {
        return Ok(vec![tilde_fast(data, state, 0)?]);
    }
    let sqrts: Vec<DMatrix<f64>> = state.b.iter().map(eig_sqrt).collect();
    let mut out: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    let scale = 1.0 / data.len() as f64;
    for x in data.samples() {
        // Mode 1 keeps its ambient size: contract everything else directly.
        let mut w = x.mode_multiply(2, &sqrts[1])?;
        for j in 2..r {
            w = w.mode_multiply(j + 1, &sqrts[j])?;
        }
        let mk = w.mode_matricize(1)?;
        out[0].gemm(scale, &mk, &mk.transpose(), 1.0);

        // Remaining modes share the mode-1 contraction of x.
        let y1 = x.mode_multiply(1, &sqrts[0])?;
        for k in 1..r {
            let mut w: Option<DenseTensor> = None;
            for j in 1..r {
                if j == k {
                    continue;
                }
                w = Some(match &w {
                    Some(t) => t.mode_multiply(j + 1, &sqrts[j])?,
                    None => y1.mode_multiply(j + 1, &sqrts[j])?,
                });
            }
            let w = w.as_ref().unwrap_or(&y1);
            let mk = w.mode_matricize(k + 1)?;
            out[k].gemm(scale, &mk, &mk.transpose(), 1.0);
        }
    }
    Ok(out)
}

/// One contraction: pair(S_N) against the current iterates on every mode but
/// `k` (0-based), freeing an n_k×n_k matrix.
pub fn power_step_tilde(data: &Dataset, state: &PowerState, k: usize) -> Result<DMatrix<f64>> {
    power_step_tilde_path(data, state, k, PowerPath::Fast)
}

pub fn power_step_tilde_path(
    data: &Dataset,
    state: &PowerState,
    k: usize,
    path: PowerPath,
) -> Result<DMatrix<f64>> {
    if k >= state.b.len() {
        return Err(TpcaError::validation("mode index out of range"));
    }
    match path {
        PowerPath::Fast => tilde_fast(data, state, k),
        PowerPath::Naive { cap } => tilde_naive(data, state, k, cap),
        PowerPath::BothWithCheck { cap } => {
            let fast = tilde_fast(data, state, k)?;
            let naive = tilde_naive(data, state, k, cap)?;
            let scale = naive.norm().max(1e-300);
            if (&fast - &naive).norm() > 1e-10 * scale {
                return Err(TpcaError::numerical(format!(
                    "contraction paths disagree: {:.3e} relative",
                    (&fast - &naive).norm() / scale
                )));
            }
            Ok(fast)
        }
    }
}

/// Project onto the feasible set: symmetrize, keep the top-m_k eigenpairs
/// (negatives clamped to zero), normalize to unit Frobenius norm.
pub fn psd_truncate_normalize(tilde: &DMatrix<f64>, m_k: usize) -> Result<DMatrix<f64>> {
    if tilde.nrows() != tilde.ncols() {
        return Err(TpcaError::validation("truncation input must be square"));
    }
    if m_k == 0 || m_k > tilde.nrows() {
        return Err(TpcaError::validation("need 1 <= m_k <= n_k"));
    }
    let (vals, vecs) = sym_eig_desc(tilde);
    if vals.iter().any(|&v| v < -PSD_TOL * vals[0].abs().max(1.0)) {
        return Err(TpcaError::numerical(
            "truncation input is not positive semidefinite",
        ));
    }
    let mut out = DMatrix::<f64>::zeros(tilde.nrows(), tilde.ncols());
    for j in 0..m_k {
        let lam = vals[j].max(0.0);
        let u = vecs.column(j);
        out.gemm(lam, &u, &u.transpose(), 1.0);
    }
    let norm = out.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(TpcaError::numerical("degenerate iterate"));
    }
    Ok(out / norm)
}

/// Unit directions vec(A_kA_kᵀ)/‖A_kA_kᵀ‖_F of a factor list; the targets of
/// the iteration.
pub fn true_directions(factors: &TuckerFactors) -> Vec<DMatrix<f64>> {
    factors
        .factors()
        .iter()
        .map(|a| {
            let b = a * a.transpose();
            let norm = b.norm();
            b / norm
        })
        .collect()
}

/// Run L sweeps and form the estimates. Within a sweep every mode is
/// contracted against the previous iterate (unless `gauss_seidel` is set),
/// then all modes are truncated. When `truth` is given, the per-mode sine of
/// the angle to the true direction is recorded after every sweep.
pub fn run_power(
    data: &Dataset,
    config: &PowerConfig,
    truth: Option<&TuckerFactors>,
) -> Result<(PowerState, PowerEstimates)> {
    let mut state = init_power(data, config)?;
    let truth_dirs = truth.map(true_directions);
    if let Some(dirs) = &truth_dirs {
        if dirs.len() != state.b.len()
            || dirs.iter().zip(&state.b).any(|(d, b)| d.shape() != b.shape())
        {
            return Err(TpcaError::validation("truth factor shape mismatch"));
        }
    }
    for l in 0..config.iterations {
        let step = |state: &PowerState, k: usize| -> Result<DMatrix<f64>> {
            let tilde = power_step_tilde_path(data, state, k, config.path)
                .map_err(|e| annotate(e, l + 1))?;
            psd_truncate_normalize(&tilde, state.latent_dims[k]).map_err(|e| annotate(e, l + 1))
        };
        if config.gauss_seidel {
            for k in 0..state.b.len() {
                state.b[k] = step(&state, k)?;
            }
        } else if matches!(config.path, PowerPath::Fast) {
            // Jacobi fast path: one fused pass over the samples, identical
            // numerics to the per-mode calls.
            let tildes = tilde_all_fast(data, &state).map_err(|e| annotate(e, l + 1))?;
            let new_b: Result<Vec<DMatrix<f64>>> = tildes
                .iter()
                .zip(state.latent_dims.clone())
                .map(|(t, m_k)| psd_truncate_normalize(t, m_k).map_err(|e| annotate(e, l + 1)))
                .collect();
            state.b = new_b?;
        } else {
            let new_b: Result<Vec<DMatrix<f64>>> =
                (0..state.b.len()).map(|k| step(&state, k)).collect();
            state.b = new_b?;
        }
        state.iteration = l + 1;
        state.validate().map_err(|e| annotate(e, l + 1))?;
        if let Some(dirs) = &truth_dirs {
            let mut row = Vec::with_capacity(state.b.len());
            for (b, d) in state.b.iter().zip(dirs) {
                let bv = nalgebra::DVector::from_column_slice(b.as_slice());
                let dv = nalgebra::DVector::from_column_slice(d.as_slice());
                row.push(sin_theta(&bv, &dv)?);
            }
            state.sin_trace.push(row);
        }
    }
    let omega_hat = estimate_omega(data, &state)?;
    let (b_hat, a_hat) = estimate_factors(omega_hat, &state)?;
    let (sigma2_hat, sigma2_negative) = estimate_sigma2(data, &b_hat)?;
    let estimates = PowerEstimates {
        omega_hat,
        b_hat,
        a_hat,
        sigma2_hat,
        sigma2_negative,
    };
    Ok((state, estimates))
}

fn annotate(e: TpcaError, iteration: usize) -> TpcaError {
    match e {
        TpcaError::Numerical(msg) => {
            TpcaError::Numerical(format!("iteration {}: {}", iteration, msg))
        }
        other => other,
    }
}

/// Signal-strength estimate: contraction of pair(S_N) with all final
/// directions, computed as (1/N)Σ‖(C₁ᵀ,…,C_rᵀ)·X_i‖²_F with C_k the
/// eigenvalue square roots of the direction matrices.
pub fn estimate_omega(data: &Dataset, state: &PowerState) -> Result<f64> {
    if data.shape().dims()
        != state
            .b
            .iter()
            .map(|b| b.nrows())
            .collect::<Vec<_>>()
            .as_slice()
    {
        return Err(TpcaError::validation("state/data shape mismatch"));
    }
    let sqrts: Vec<DMatrix<f64>> = state.b.iter().map(eig_sqrt).collect();
    let mut total = 0.0;
    for x in data.samples() {
        let mut w = x.mode_multiply(1, &sqrts[0])?;
        for (j, c) in sqrts.iter().enumerate().skip(1) {
            w = w.mode_multiply(j + 1, c)?;
        }
        total += w.frobenius().powi(2);
    }
    Ok(total / data.len() as f64)
}

/// Scale the directions by ω̂^{1/r} and take matrix square roots:
/// B̂_k = ω̂^{1/r}·B_k-direction, Â_k = Û_kΛ̂_k^{1/2} (top m_k eigenpairs).
pub fn estimate_factors(
    omega_hat: f64,
    state: &PowerState,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    if omega_hat < 0.0 {
        return Err(TpcaError::validation("negative signal strength"));
    }
    let r = state.b.len() as f64;
    let scale = omega_hat.powf(1.0 / r);
    let mut b_hat = Vec::with_capacity(state.b.len());
    let mut a_hat = Vec::with_capacity(state.b.len());
    for (b, &m_k) in state.b.iter().zip(&state.latent_dims) {
        let scaled = b * scale;
        let (vals, vecs) = sym_eig_desc(&scaled);
        let mut a = DMatrix::zeros(b.nrows(), m_k);
        for j in 0..m_k {
            let s = vals[j].max(0.0).sqrt();
            for i in 0..b.nrows() {
                a[(i, j)] = vecs[(i, j)] * s;
            }
        }
        b_hat.push(scaled);
        a_hat.push(a);
    }
    Ok((b_hat, a_hat))
}

/// Residual noise estimate (1/n)tr(S_N) − (1/n)Π_k tr(B̂_k). The boolean
/// flags a negative value; callers clamp only when reconstructing a model.
pub fn estimate_sigma2(data: &Dataset, b_hat: &[DMatrix<f64>]) -> Result<(f64, bool)> {
    if b_hat.len() != data.shape().order() {
        return Err(TpcaError::validation("factor arity mismatch"));
    }
    for (b, &n_k) in b_hat.iter().zip(data.shape().dims()) {
        if b.nrows() != n_k || b.ncols() != n_k {
            return Err(TpcaError::validation("factor size mismatch"));
        }
    }
    let n = data.shape().len() as f64;
    let trace_sn = data.mean_squared_norm();
    let trace_b: f64 = b_hat.iter().map(|b| b.trace()).product();
    let value = trace_sn / n - trace_b / n;
    Ok((value, value < 0.0))
}

/// Convenience for tests and the harness: the naive contraction of pair(S_N)
/// with r vectors of length n_k² (no free mode).
pub fn contract_pair_full(data: &Dataset, vectors: &[DMatrix<f64>], cap: usize) -> Result<f64> {
    naive_cap_check(data.shape().dims(), cap)?;
    if vectors.len() != data.shape().order() {
        return Err(TpcaError::validation("contraction arity mismatch"));
    }
    let pair = pair_sample_covariance(data)?;
    let vecs: Vec<Vec<f64>> = vectors.iter().map(|b| b.as_slice().to_vec()).collect();
    let assignments: Vec<Option<&[f64]>> = vecs.iter().map(|v| Some(v.as_slice())).collect();
    let contracted = contract_modes(&pair, &assignments)?;
    Ok(contracted.data()[0])
}
