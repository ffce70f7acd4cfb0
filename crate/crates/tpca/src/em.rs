//! Exact-likelihood EM for the TPCA model.
//!
//! The E-step conditions the latent tensor on each observation through the
//! normal matrix M = mat(AᵀA) + σ²I; the M-step updates each factor in a
//! cyclic sweep by a closed-form normal-equation solve, then the latent mean
//! and the noise variance. Every step is exact, so the log-likelihood is
//! monotone along the iteration.
//!
//! Internally the loop never materializes the m×m latent covariance: all
//! M-related algebra factors through the per-mode eigendecompositions of
//! G_k = A_kᵀA_k (M is a Kronecker product plus a multiple of the identity).
//! The public `e_step` / `m_step_*` operations expose the equivalent dense
//! forms and are cross-checked against the structured path in the tests.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Result, TpcaError};
use crate::model::{Dataset, TpcaModel};
use crate::tensor::{
    contract_modes, sym_eig_desc, DenseTensor, OperatorTensor, Shape, TuckerFactors,
};

/// Starting point for the iteration.
#[derive(Debug, Clone)]
pub enum EmInit {
    /// Warm start from truncated higher-order SVD of the centered data, with
    /// the given latent dimensions.
    Hosvd(Vec<usize>),
    /// Use the given model as-is.
    Provided(TpcaModel),
    /// Standard-normal factor entries, zero latent mean, given latent dims.
    Random(Vec<usize>),
}

/// How to pick the initial noise variance.
#[derive(Debug, Clone, Copy)]
pub enum Sigma2Init {
    /// A caller-supplied value (e.g. the generating value in simulations).
    Fixed(f64),
    /// Mean discarded eigenvalue of the per-entry-normalized mode Grams.
    Residual,
    /// Keep the provided model's value; falls back to `Residual` for
    /// non-provided initializations.
    FromInit,
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change threshold.
    pub tol: f64,
    pub init: EmInit,
    pub sigma2_init: Sigma2Init,
    pub seed: u64,
}

impl EmConfig {
    /// Defaults mirroring the simulation protocol: HOSVD warm start,
    /// tolerance 1e-3, at most 100 sweeps.
    pub fn hosvd(latent_dims: Vec<usize>) -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-3,
            init: EmInit::Hosvd(latent_dims),
            sigma2_init: Sigma2Init::FromInit,
            seed: 0,
        }
    }

    pub fn provided(model: TpcaModel) -> Self {
        EmConfig {
            max_iter: 100,
            tol: 1e-3,
            init: EmInit::Provided(model),
            sigma2_init: Sigma2Init::FromInit,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct EmResult {
    /// Final model, normalized (diagonal A_kᵀA_k, equalized Gram scales).
    pub model: TpcaModel,
    /// The same model before normalization (per-mode scales as the iteration
    /// left them; the error metric is not invariant to that split).
    pub unnormalized: TpcaModel,
    /// Log-likelihood after the initialization and after each sweep.
    pub trace: Vec<f64>,
    pub status: EmStatus,
    pub iterations: usize,
}

/// Per-mode eigendecompositions of G_k = A_kᵀA_k, giving O(m·Σm_k) solves
/// with M = mat(AᵀA) + σ²I and closed forms for every M⁻¹-derived quantity.
pub(crate) struct LatentSolver {
    qs: Vec<DMatrix<f64>>,
    ds: Vec<Vec<f64>>,
    sigma2: f64,
    /// Π_k d_k[s_k] + σ² over all latent multi-indices, colex order.
    shifted: Vec<f64>,
}

impl LatentSolver {
    pub(crate) fn new(factors: &TuckerFactors, sigma2: f64) -> Result<Self> {
        let mut qs = Vec::with_capacity(factors.order());
        let mut ds = Vec::with_capacity(factors.order());
        for a in factors.factors() {
            let g = a.transpose() * a;
            let (vals, vecs) = sym_eig_desc(&g);
            ds.push(vals.into_iter().map(|v| v.max(0.0)).collect::<Vec<f64>>());
            qs.push(vecs);
        }
        let latent_shape = factors.input_shape();
        let mut shifted = Vec::with_capacity(latent_shape.len());
        for lin in 0..latent_shape.len() {
            let mut rem = lin;
            let mut prod = 1.0;
            for d in &ds {
                prod *= d[rem % d.len()];
                rem /= d.len();
            }
            shifted.push(prod + sigma2);
        }
        if shifted.iter().any(|&v| v <= 0.0) {
            return Err(TpcaError::numerical(
                "latent normal matrix is singular (zero noise with rank-deficient factors)",
            ));
        }
        Ok(LatentSolver { qs, ds, sigma2, shifted })
    }

    fn q_map(&self) -> TuckerFactors {
        TuckerFactors::new(self.qs.clone()).expect("square orthogonal factors")
    }

    /// M⁻¹ t.
    pub(crate) fn solve(&self, t: &DenseTensor) -> Result<DenseTensor> {
        let q = self.q_map();
        let mut w = q.apply(t, true)?;
        for (x, &s) in w.data_mut().iter_mut().zip(&self.shifted) {
            *x /= s;
        }
        q.apply(&w, false)
    }

    /// Dense V = σ²M⁻¹ (test/interop path; O(m³)).
    pub(crate) fn dense_v(&self) -> DMatrix<f64> {
        let qmat = self.q_map().mat();
        let mut scaled = qmat.clone();
        for (j, &s) in self.shifted.iter().enumerate() {
            let c = self.sigma2 / s;
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= c;
            }
        }
        scaled * qmat.transpose()
    }

    /// Diagonal of QᵀGQ per mode, for possibly refreshed Gram matrices.
    fn mode_coeffs(&self, grams: &[DMatrix<f64>]) -> Vec<Vec<f64>> {
        self.qs
            .iter()
            .zip(grams)
            .map(|(q, g)| {
                let gq = g * q;
                (0..q.ncols())
                    .map(|j| q.column(j).dot(&gq.column(j)))
                    .collect()
            })
            .collect()
    }

    /// W_k: the mode-k block of E[UUᵀ] contributed by the conditional
    /// covariance, contracted with the given (possibly refreshed) Grams on
    /// the other modes. Equals the pair-flattening contraction of V.
    pub(crate) fn w_k(&self, k: usize, grams: &[DMatrix<f64>]) -> DMatrix<f64> {
        let coeffs = self.mode_coeffs(grams);
        let m_k = self.ds[k].len();
        let mut h = vec![0.0; m_k];
        for (lin, &s) in self.shifted.iter().enumerate() {
            let mut rem = lin;
            let mut prod = self.sigma2 / s;
            let mut sk = 0usize;
            for (l, c) in coeffs.iter().enumerate() {
                let idx = rem % c.len();
                rem /= c.len();
                if l == k {
                    sk = idx;
                } else {
                    prod *= c[idx];
                }
            }
            h[sk] += prod;
        }
        let q = &self.qs[k];
        let mut scaled = q.clone();
        for (j, &hj) in h.iter().enumerate() {
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= hj;
            }
        }
        scaled * q.transpose()
    }

    /// tr(A V Aᵀ) for the Tucker map with the given Gram matrices.
    pub(crate) fn trace_avat(&self, grams: &[DMatrix<f64>]) -> f64 {
        let coeffs = self.mode_coeffs(grams);
        let mut total = 0.0;
        for (lin, &s) in self.shifted.iter().enumerate() {
            let mut rem = lin;
            let mut prod = self.sigma2 / s;
            for c in &coeffs {
                prod *= c[rem % c.len()];
                rem /= c.len();
            }
            total += prod;
        }
        total
    }
}

/// Conditional latent means E_i = M⁻¹Aᵀ·(X_i − μ) and the shared conditional
/// covariance V = σ²M⁻¹ as a dense m×m matrix.
pub fn e_step(model: &TpcaModel, data: &Dataset) -> Result<(Vec<DenseTensor>, DMatrix<f64>)> {
    if data.shape() != &model.ambient_shape() {
        return Err(TpcaError::validation("e_step shape mismatch"));
    }
    let solver = LatentSolver::new(model.factors(), model.sigma2())?;
    let e_list = conditional_means(model, data, &solver)?;
    Ok((e_list, solver.dense_v()))
}

fn conditional_means(
    model: &TpcaModel,
    data: &Dataset,
    solver: &LatentSolver,
) -> Result<Vec<DenseTensor>> {
    let mu = model.mean_tensor()?;
    let mut out = Vec::with_capacity(data.len());
    for x in data.samples() {
        let mut y = x.clone();
        y.axpy(-1.0, &mu)?;
        let aty = model.factors().apply(&y, true)?;
        out.push(solver.solve(&aty)?);
    }
    Ok(out)
}

/// W_k from an explicit dense latent covariance: contract the pair-flattening
/// of V with vec(G_l) on every mode l ≠ k and reshape the surviving mode.
fn w_k_from_dense(
    v: &DMatrix<f64>,
    grams: &[DMatrix<f64>],
    latent_shape: &Shape,
    k: usize,
) -> Result<DMatrix<f64>> {
    let op = OperatorTensor::from_mat(v, latent_shape.clone(), latent_shape.clone())?;
    let pair = op.pair()?;
    let vecs: Vec<Vec<f64>> = grams.iter().map(|g| g.as_slice().to_vec()).collect();
    let assign: Vec<Option<&[f64]>> = (0..grams.len())
        .map(|l| if l == k { None } else { Some(vecs[l].as_slice()) })
        .collect();
    let contracted = contract_modes(&pair, &assign)?;
    let m_k = latent_shape.dims()[k];
    Ok(DMatrix::from_column_slice(m_k, m_k, contracted.data()))
}

/// One cyclic factor sweep. `w_k_fn(k, current grams)` supplies the
/// conditional-covariance block for mode k.
fn factor_sweep(
    data: &Dataset,
    e_list: &[DenseTensor],
    start: &TuckerFactors,
    nu: &DenseTensor,
    mut w_k_fn: impl FnMut(usize, &[DMatrix<f64>]) -> Result<DMatrix<f64>>,
) -> Result<Vec<DMatrix<f64>>> {
    let r = start.order();
    let n_samples = data.len() as f64;
    let mut factors: Vec<DMatrix<f64>> = start.factors().to_vec();
    // Latent tensors ν + E_i are fixed across the sweep.
    let mut latents = Vec::with_capacity(e_list.len());
    for e in e_list {
        let mut t = e.clone();
        t.axpy(1.0, nu)?;
        latents.push(t);
    }
    for k in 0..r {
        let m_k = factors[k].ncols();
        let n_k = factors[k].nrows();
        // A^{(-k)}: identity on mode k, freshest factors elsewhere.
        let mut partial = factors.clone();
        partial[k] = DMatrix::identity(m_k, m_k);
        let partial = TuckerFactors::new(partial)?;
        let mut num = DMatrix::<f64>::zeros(n_k, m_k);
        let mut den = DMatrix::<f64>::zeros(m_k, m_k);
        for (x, t) in data.samples().iter().zip(&latents) {
            let u = partial.apply(t, false)?.mode_matricize(k + 1)?;
            let xk = x.mode_matricize(k + 1)?;
            num.gemm(1.0 / n_samples, &xk, &u.transpose(), 1.0);
            den.gemm(1.0 / n_samples, &u, &u.transpose(), 1.0);
        }
        let grams: Vec<DMatrix<f64>> = factors.iter().map(|a| a.transpose() * a).collect();
        den += w_k_fn(k, &grams)?;
        let den_sym = (&den + den.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(den_sym.clone()).ok_or_else(|| {
            let svd = den_sym.svd(false, false);
            let cond = svd.singular_values[0] / svd.singular_values[m_k - 1].max(f64::MIN_POSITIVE);
            TpcaError::numerical(format!(
                "singular factor normal matrix at mode {} (condition number {:.3e})",
                k + 1,
                cond
            ))
        })?;
        // Â_k solves Â_k · Den = Num.
        factors[k] = chol.solve(&num.transpose()).transpose();
    }
    Ok(factors)
}

/// Cyclic closed-form factor update given a dense conditional covariance.
pub fn m_step_factors(
    data: &Dataset,
    e_list: &[DenseTensor],
    v: &DMatrix<f64>,
    model: &TpcaModel,
) -> Result<Vec<DMatrix<f64>>> {
    let latent_shape = model.latent_shape();
    factor_sweep(data, e_list, model.factors(), model.nu(), |k, grams| {
        w_k_from_dense(v, grams, &latent_shape, k)
    })
}

/// ν = (AᵀA)⁻¹Aᵀ·((1/N)Σ(X_i − A·E_i)), computed per mode.
pub fn m_step_nu(
    data: &Dataset,
    e_list: &[DenseTensor],
    factors: &TuckerFactors,
) -> Result<DenseTensor> {
    let n_samples = data.len() as f64;
    let mut resid = DenseTensor::zeros(factors.output_shape());
    for (x, e) in data.samples().iter().zip(e_list) {
        resid.axpy(1.0, x)?;
        resid.axpy(-1.0, &factors.apply(e, false)?)?;
    }
    resid.scale(1.0 / n_samples);
    // Per-mode solve: P_k = (A_kᵀA_k)⁻¹A_kᵀ, pseudo-inverse if rank-deficient.
    let mut solvers = Vec::with_capacity(factors.order());
    for a in factors.factors() {
        let g = a.transpose() * a;
        let p = match nalgebra::Cholesky::new(g.clone()) {
            Some(chol) => chol.solve(&a.transpose()),
            None => a
                .clone()
                .svd(true, true)
                .pseudo_inverse(1e-12)
                .map_err(|e| TpcaError::numerical(format!("pseudo-inverse failed: {}", e)))?,
        };
        solvers.push(p);
    }
    TuckerFactors::new(solvers)?.apply(&resid, false)
}

/// σ² = (1/(nN))Σ‖X_i − μ − A·E_i‖²_F + (1/n)·tr(AVAᵀ).
pub fn m_step_sigma2(
    data: &Dataset,
    e_list: &[DenseTensor],
    v: &DMatrix<f64>,
    factors: &TuckerFactors,
    nu: &DenseTensor,
) -> Result<f64> {
    let n = factors.output_shape().len() as f64;
    let n_samples = data.len() as f64;
    let mu = factors.apply(nu, false)?;
    let mut rss = 0.0;
    for (x, e) in data.samples().iter().zip(e_list) {
        let mut y = x.clone();
        y.axpy(-1.0, &mu)?;
        y.axpy(-1.0, &factors.apply(e, false)?)?;
        rss += y.frobenius().powi(2);
    }
    // tr(AVAᵀ) = ⟨vec(G_1) ⊗ ... ⊗ vec(G_r), pair(V)⟩.
    let latent_shape = factors.input_shape();
    let op = OperatorTensor::from_mat(v, latent_shape.clone(), latent_shape)?;
    let pair = op.pair()?;
    let vecs: Vec<Vec<f64>> = factors
        .factors()
        .iter()
        .map(|a| (a.transpose() * a).as_slice().to_vec())
        .collect();
    let assign: Vec<Option<&[f64]>> = vecs.iter().map(|v| Some(v.as_slice())).collect();
    let trace = contract_modes(&pair, &assign)?.data()[0];
    Ok((rss / n_samples + trace) / n)
}

/// The objective the M-step minimizes over (A, ν) at fixed posterior:
/// (1/N)·Σ‖X_i − A·(ν+E_i)‖²_F + tr(AVAᵀ). Exposed for testing monotonicity
/// of the cyclic sweep.
pub fn m_objective(
    data: &Dataset,
    e_list: &[DenseTensor],
    v: &DMatrix<f64>,
    factors: &TuckerFactors,
    nu: &DenseTensor,
) -> Result<f64> {
    let n_samples = data.len() as f64;
    let mut total = 0.0;
    for (x, e) in data.samples().iter().zip(e_list) {
        let mut t = e.clone();
        t.axpy(1.0, nu)?;
        let mut y = x.clone();
        y.axpy(-1.0, &factors.apply(&t, false)?)?;
        total += y.frobenius().powi(2);
    }
    let a = factors.mat();
    Ok(total / n_samples + (a.transpose() * &a * v).trace())
}

/// HOSVD warm start: subspaces from the centered per-mode Gram matrices,
/// scales from their eigenvalues with the noise floor subtracted and the
/// per-mode scale indeterminacy resolved by equalizing traces.
pub fn init_hosvd(
    data: &Dataset,
    latent_dims: &[usize],
    sigma2_init: Sigma2Init,
) -> Result<TpcaModel> {
    let shape = data.shape().clone();
    let r = shape.order();
    if latent_dims.len() != r {
        return Err(TpcaError::validation("latent dimension arity mismatch"));
    }
    let n = shape.len() as f64;
    let n_samples = data.len() as f64;
    // Center at the sample mean, except with a single sample where centering
    // would zero the data outright; there the raw sample carries the signal
    // (through ν) and the Grams are taken uncentered.
    let mean = if data.len() > 1 {
        data.mean()
    } else {
        DenseTensor::zeros(shape.clone())
    };
    // Per-entry-normalized mode Grams of the centered data: for pure
    // isotropic noise each converges to σ²·I.
    let mut eigvals = Vec::with_capacity(r);
    let mut eigvecs = Vec::with_capacity(r);
    for k in 0..r {
        let n_k = shape.dims()[k] as f64;
        let mut gram = DMatrix::<f64>::zeros(shape.dims()[k], shape.dims()[k]);
        for x in data.samples() {
            let mut y = x.clone();
            y.axpy(-1.0, &mean)?;
            let mk = y.mode_matricize(k + 1)?;
            gram.gemm(1.0, &mk, &mk.transpose(), 1.0);
        }
        gram /= n_samples * (n / n_k);
        let (vals, vecs) = sym_eig_desc(&gram);
        eigvals.push(vals);
        eigvecs.push(vecs);
    }
    // Residual noise level: mean discarded eigenvalue across modes.
    let mut resid_sum = 0.0;
    let mut resid_count = 0usize;
    for (vals, &m_k) in eigvals.iter().zip(latent_dims) {
        for &v in vals.iter().skip(m_k) {
            resid_sum += v.max(0.0);
            resid_count += 1;
        }
    }
    let floor = 1e-12 * data.mean_squared_norm() / n + f64::MIN_POSITIVE;
    let sigma2_resid = if resid_count > 0 {
        (resid_sum / resid_count as f64).max(floor)
    } else {
        floor
    };
    // Per-mode signal masses t_k (noise floor removed); the per-mode scale
    // split is not identifiable, so equalize: each mode gets the geometric
    // mean of the implied total products.
    let mut masses = Vec::with_capacity(r);
    for (vals, &m_k) in eigvals.iter().zip(latent_dims) {
        let t: f64 = vals
            .iter()
            .take(m_k)
            .map(|&v| (v - sigma2_resid).max(floor))
            .sum();
        masses.push(t);
    }
    let product_log: f64 = masses
        .iter()
        .zip(shape.dims())
        .map(|(&t, &n_k)| (t * n / n_k as f64).ln())
        .sum::<f64>()
        / r as f64;
    let target_trace = product_log.exp().powf(1.0 / r as f64);
    let mut factors = Vec::with_capacity(r);
    for k in 0..r {
        let m_k = latent_dims[k];
        let beta = target_trace / masses[k];
        let mut a = eigvecs[k].columns(0, m_k).into_owned();
        for j in 0..m_k {
            let lam = (eigvals[k][j] - sigma2_resid).max(floor) * beta;
            for i in 0..a.nrows() {
                a[(i, j)] *= lam.sqrt();
            }
        }
        factors.push(a);
    }
    let factors = TuckerFactors::new(factors)?;
    let sigma2 = match sigma2_init {
        Sigma2Init::Fixed(v) => v,
        Sigma2Init::Residual | Sigma2Init::FromInit => sigma2_resid,
    };
    // ν: least-squares projection of the sample mean onto the factor range.
    let nu = m_step_nu(
        data,
        &vec![DenseTensor::zeros(factors.input_shape()); data.len()],
        &factors,
    )?;
    TpcaModel::new(factors, nu, sigma2)
}

/// Bare-bones warm start: A_k⁰ is the matrix of leading centered mode-Gram
/// eigenvectors with no eigenvalue scaling, ν⁰ = 0. Deliberately cruder than
/// [`init_hosvd`]; with a tolerance-capped EM run it reproduces the behavior
/// of reference simulations, where the unscaled start makes low-noise runs
/// hit the iteration cap far from the optimum.
pub fn init_hosvd_orthonormal(
    data: &Dataset,
    latent_dims: &[usize],
    sigma2: f64,
) -> Result<TpcaModel> {
    let shape = data.shape().clone();
    let r = shape.order();
    if latent_dims.len() != r {
        return Err(TpcaError::validation("latent dimension arity mismatch"));
    }
    if !(sigma2 > 0.0) {
        return Err(TpcaError::validation("orthonormal warm start needs sigma2 > 0"));
    }
    let mean = data.mean();
    let mut factors = Vec::with_capacity(r);
    for k in 0..r {
        let n_k = shape.dims()[k];
        let mut gram = DMatrix::<f64>::zeros(n_k, n_k);
        for x in data.samples() {
            let mut y = x.clone();
            y.axpy(-1.0, &mean)?;
            let mk = y.mode_matricize(k + 1)?;
            gram.gemm(1.0, &mk, &mk.transpose(), 1.0);
        }
        let (_, vecs) = sym_eig_desc(&gram);
        factors.push(vecs.columns(0, latent_dims[k]).into_owned());
    }
    let factors = TuckerFactors::new(factors)?;
    let nu = DenseTensor::zeros(factors.input_shape());
    TpcaModel::new(factors, nu, sigma2)
}

/// Log-likelihood through the structured solver: spectrum log-determinant
/// plus Woodbury quadratic terms, all in O(N·n·Σm_k + n·r).
fn log_likelihood_structured(
    model: &TpcaModel,
    data: &Dataset,
    solver: &LatentSolver,
) -> Result<f64> {
    let ambient = model.ambient_shape();
    let n = ambient.len() as f64;
    let n_samples = data.len() as f64;
    let sigma2 = model.sigma2();
    // Ambient covariance eigenvalues: per-mode B_k spectra are the G_k
    // spectra padded with zeros.
    let mut logdet = 0.0;
    for lin in 0..ambient.len() {
        let mut rem = lin;
        let mut prod = 1.0;
        for (k, &n_k) in ambient.dims().iter().enumerate() {
            let idx = rem % n_k;
            rem /= n_k;
            prod *= solver.ds[k].get(idx).copied().unwrap_or(0.0);
        }
        logdet += (sigma2 + prod).ln();
    }
    let mu = model.mean_tensor()?;
    let mut quad = 0.0;
    for x in data.samples() {
        let mut y = x.clone();
        y.axpy(-1.0, &mu)?;
        let aty = model.factors().apply(&y, true)?;
        let w = solver.solve(&aty)?;
        quad += (y.frobenius().powi(2) - aty.inner(&w)?) / sigma2;
    }
    Ok(-0.5 * n_samples * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * n_samples * logdet
        - 0.5 * quad)
}

/// Run EM to convergence. Returns the normalized final model, the
/// log-likelihood trace, and the stopping status.
pub fn fit_em(data: &Dataset, config: &EmConfig) -> Result<EmResult> {
    if config.max_iter == 0 || !(config.tol > 0.0) {
        return Err(TpcaError::validation("max_iter >= 1 and tol > 0 required"));
    }
    let mut model = initialize(data, config)?;
    let mut solver = LatentSolver::new(model.factors(), model.sigma2())
        .map_err(|e| annotate(e, 0))?;
    let mut ll = log_likelihood_structured(&model, data, &solver).map_err(|e| annotate(e, 0))?;
    let mut trace = vec![ll];
    let mut status = EmStatus::MaxIter;
    let mut iterations = 0usize;
    for it in 1..=config.max_iter {
        let step = || -> Result<TpcaModel> {
            let e_list = conditional_means(&model, data, &solver)?;
            let factors = factor_sweep(data, &e_list, model.factors(), model.nu(), |k, grams| {
                Ok(solver.w_k(k, grams))
            })?;
            let factors = TuckerFactors::new(factors)?;
            let nu = m_step_nu(data, &e_list, &factors)?;
            let mu = factors.apply(&nu, false)?;
            // σ² update: residual sum of squares plus the structured trace.
            let n = factors.output_shape().len() as f64;
            let mut rss = 0.0;
            for (x, e) in data.samples().iter().zip(&e_list) {
                let mut y = x.clone();
                y.axpy(-1.0, &mu)?;
                y.axpy(-1.0, &factors.apply(e, false)?)?;
                rss += y.frobenius().powi(2);
            }
            let grams: Vec<DMatrix<f64>> =
                factors.factors().iter().map(|a| a.transpose() * a).collect();
            let sigma2 = ((rss / data.len() as f64 + solver.trace_avat(&grams)) / n)
                .max(f64::MIN_POSITIVE);
            TpcaModel::new(factors, nu, sigma2)
        };
        model = step().map_err(|e| annotate(e, it))?;
        solver = LatentSolver::new(model.factors(), model.sigma2()).map_err(|e| annotate(e, it))?;
        ll = log_likelihood_structured(&model, data, &solver).map_err(|e| annotate(e, it))?;
        let prev = *trace.last().expect("nonempty");
        trace.push(ll);
        iterations = it;
        if (ll - prev).abs() <= config.tol * prev.abs().max(1e-12) {
            status = EmStatus::Converged;
            break;
        }
    }
    let unnormalized = model.clone();
    let model = model.normalize()?;
    Ok(EmResult {
        model,
        unnormalized,
        trace,
        status,
        iterations,
    })
}

fn annotate(e: TpcaError, iteration: usize) -> TpcaError {
    match e {
        TpcaError::Numerical(msg) => {
            TpcaError::Numerical(format!("iteration {}: {}", iteration, msg))
        }
        other => other,
    }
}

fn initialize(data: &Dataset, config: &EmConfig) -> Result<TpcaModel> {
    match &config.init {
        EmInit::Provided(m) => {
            if data.shape() != &m.ambient_shape() {
                return Err(TpcaError::validation("provided model shape mismatch"));
            }
            match config.sigma2_init {
                Sigma2Init::Fixed(v) => TpcaModel::new(m.factors().clone(), m.nu().clone(), v),
                Sigma2Init::Residual | Sigma2Init::FromInit => Ok(m.clone()),
            }
        }
        EmInit::Hosvd(latent_dims) => init_hosvd(data, latent_dims, config.sigma2_init),
        EmInit::Random(latent_dims) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let factors = TuckerFactors::new(
                data.shape()
                    .dims()
                    .iter()
                    .zip(latent_dims)
                    .map(|(&n_k, &m_k)| {
                        DMatrix::from_fn(n_k, m_k, |_, _| {
                            rng.sample::<f64, _>(rand_distr::StandardNormal)
                        })
                    })
                    .collect(),
            )?;
            let sigma2 = match config.sigma2_init {
                Sigma2Init::Fixed(v) => v,
                _ => data.mean_squared_norm() / data.shape().len() as f64,
            };
            let nu = DenseTensor::zeros(factors.input_shape());
            TpcaModel::new(factors, nu, sigma2)
        }
    }
}
