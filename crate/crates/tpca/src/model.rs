//! The tensor probabilistic PCA model: X = A·(ν + Z) + ε with Z standard
//! normal on the latent tensor space and ε isotropic N(0, σ²).
//!
//! Provides the parameter container, covariance action and spectrum, exact
//! log-likelihood, seeded sampling, and the identifiability normalization
//! (diagonal A_kᵀA_k with equal ‖A_kA_kᵀ‖_F across modes).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{Result, TpcaError};
use crate::tensor::{fix_sign, hosvd, sym_eig_desc, DenseTensor, Shape, TuckerFactors};

/// Parameters of a TPCA model.
#[derive(Debug, Clone, PartialEq)]
pub struct TpcaModel {
    factors: TuckerFactors,
    nu: DenseTensor,
    sigma2: f64,
}

impl TpcaModel {
    pub fn new(factors: TuckerFactors, nu: DenseTensor, sigma2: f64) -> Result<Self> {
        for (k, a) in factors.factors().iter().enumerate() {
            if a.ncols() > a.nrows() {
                return Err(TpcaError::validation(format!(
                    "latent dimension {} exceeds ambient dimension {} at mode {}",
                    a.ncols(),
                    a.nrows(),
                    k + 1
                )));
            }
        }
        if nu.shape() != &factors.input_shape() {
            return Err(TpcaError::validation(
                "latent mean shape does not match factor column counts",
            ));
        }
        if !(sigma2 >= 0.0) {
            return Err(TpcaError::validation("sigma2 must be nonnegative"));
        }
        Ok(TpcaModel {
            factors,
            nu,
            sigma2,
        })
    }

    pub fn factors(&self) -> &TuckerFactors {
        &self.factors
    }

    pub fn nu(&self) -> &DenseTensor {
        &self.nu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn order(&self) -> usize {
        self.factors.order()
    }

    pub fn ambient_shape(&self) -> Shape {
        self.factors.output_shape()
    }

    pub fn latent_shape(&self) -> Shape {
        self.factors.input_shape()
    }

    /// Mean μ = A·ν.
    pub fn mean_tensor(&self) -> Result<DenseTensor> {
        self.factors.apply(&self.nu, false)
    }

    /// Per-mode Gram matrices B_k = A_kA_kᵀ.
    pub fn mode_grams(&self) -> Vec<DMatrix<f64>> {
        self.factors
            .factors()
            .iter()
            .map(|a| a * a.transpose())
            .collect()
    }

    /// Covariance action Σ(T) = σ²T + (B_1, ..., B_r)·T.
    pub fn covariance_apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        let b = TuckerFactors::new(self.mode_grams())?;
        let mut out = b.apply(t, false)?;
        out.axpy(self.sigma2, t)?;
        Ok(out)
    }

    /// Dense n×n covariance matrix σ²I + B_r ⊗ ... ⊗ B_1.
    pub fn covariance_dense(&self) -> Result<DMatrix<f64>> {
        let b = TuckerFactors::new(self.mode_grams())?;
        let mut mat = b.mat();
        for i in 0..mat.nrows() {
            mat[(i, i)] += self.sigma2;
        }
        Ok(mat)
    }

    /// Eigenvalues of the covariance from the per-mode spectra of B_k.
    pub fn covariance_spectrum(&self) -> Result<SpectrumReport> {
        let mut per_mode = Vec::with_capacity(self.order());
        for b in self.mode_grams() {
            let (vals, _) = sym_eig_desc(&b);
            per_mode.push(vals.into_iter().map(|v| v.max(0.0)).collect::<Vec<f64>>());
        }
        let ambient = self.ambient_shape();
        let mut eigenvalues = Vec::with_capacity(ambient.len());
        for lin in 0..ambient.len() {
            let mut rem = lin;
            let mut prod = 1.0;
            for vals in &per_mode {
                prod *= vals[rem % vals.len()];
                rem /= vals.len();
            }
            eigenvalues.push(self.sigma2 + prod);
        }
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let tol = 1e-12 * eigenvalues[0].max(1.0);
        let above_noise = eigenvalues
            .iter()
            .filter(|&&v| v > self.sigma2 + tol)
            .count();
        Ok(SpectrumReport {
            per_mode,
            eigenvalues,
            sigma2: self.sigma2,
            above_noise,
        })
    }

    /// Draw N samples. Each sample uses its own RNG substream, so the result
    /// is bit-identical for a fixed seed regardless of how the loop is split.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<Dataset> {
        if n_samples == 0 {
            return Err(TpcaError::validation("need at least one sample"));
        }
        let latent = self.latent_shape();
        let ambient = self.ambient_shape();
        let sigma = self.sigma2.sqrt();
        let mut samples = Vec::with_capacity(n_samples);
        for i in 0..n_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut z = DenseTensor::zeros(latent.clone());
            for slot in z.data_mut() {
                *slot = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            z.axpy(1.0, &self.nu)?;
            let mut x = self.factors.apply(&z, false)?;
            if sigma > 0.0 {
                for slot in x.data_mut() {
                    *slot += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            debug_assert_eq!(x.shape(), &ambient);
            samples.push(x);
        }
        Dataset::new(samples, Some(seed), Some(self.clone()))
    }

    /// Exact Gaussian log-likelihood of the dataset, including the
    /// −(Nn/2)·log 2π constant so it matches a dense multivariate-normal
    /// density evaluation.
    ///
    /// With σ² = 0 the covariance is singular: the density is −∞ off the
    /// noise-free image and unbounded (+∞) on it; both sentinels are returned
    /// rather than an error.
    pub fn log_likelihood(&self, data: &Dataset) -> Result<f64> {
        let ambient = self.ambient_shape();
        if data.shape() != &ambient {
            return Err(TpcaError::validation("dataset shape mismatch"));
        }
        let n = ambient.len() as f64;
        let n_samples = data.len() as f64;
        let mu = self.mean_tensor()?;

        if self.sigma2 == 0.0 {
            // Degenerate covariance: check the residual off the factor range.
            let mut off = false;
            for x in data.samples() {
                let mut y = x.clone();
                y.axpy(-1.0, &mu)?;
                let resid = self.range_residual(&y)?;
                if resid > 1e-8 * y.frobenius().max(1.0) {
                    off = true;
                }
            }
            return Ok(if off {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            });
        }

        // log det Σ from the covariance spectrum.
        let spectrum = self.covariance_spectrum()?;
        let logdet: f64 = spectrum.eigenvalues.iter().map(|&v| v.ln()).sum();

        // Quadratic term: latent-space Woodbury when the latent space is
        // smaller, dense Cholesky otherwise.
        let m = self.latent_shape().len();
        let quad_total = if m < ambient.len() {
            let m_mat = self.latent_normal_matrix();
            let chol = nalgebra::Cholesky::new(m_mat).ok_or_else(|| {
                TpcaError::numerical("latent normal matrix is not positive definite")
            })?;
            let mut total = 0.0;
            for x in data.samples() {
                let mut y = x.clone();
                y.axpy(-1.0, &mu)?;
                let aty = self.factors.apply(&y, true)?;
                let w = chol.solve(&aty.to_vector());
                let back = self
                    .factors
                    .apply(&DenseTensor::from_vector(w.as_slice(), self.latent_shape())?, false)?;
                let yv = y.to_vector();
                total += (yv.dot(&yv) - yv.dot(&back.to_vector())) / self.sigma2;
            }
            total
        } else {
            let sigma_dense = self.covariance_dense()?;
            let chol = nalgebra::Cholesky::new(sigma_dense).ok_or_else(|| {
                TpcaError::numerical("covariance matrix is not positive definite")
            })?;
            let mut total = 0.0;
            for x in data.samples() {
                let mut y = x.clone();
                y.axpy(-1.0, &mu)?;
                let yv = y.to_vector();
                total += yv.dot(&chol.solve(&yv));
            }
            total
        };

        Ok(-0.5 * n_samples * n * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * n_samples * logdet
            - 0.5 * quad_total)
    }

    /// mat(AᵀA) + σ²I on the latent space (the m×m normal matrix).
    pub fn latent_normal_matrix(&self) -> DMatrix<f64> {
        let grams: Vec<DMatrix<f64>> = self
            .factors
            .factors()
            .iter()
            .map(|a| a.transpose() * a)
            .collect();
        let mut m = TuckerFactors::new(grams).expect("square grams").mat();
        for i in 0..m.nrows() {
            m[(i, i)] += self.sigma2;
        }
        m
    }

    /// Frobenius norm of the component of `y` orthogonal to the range of the
    /// Tucker map, via a per-mode orthonormal-basis projection.
    fn range_residual(&self, y: &DenseTensor) -> Result<f64> {
        let mut qs = Vec::with_capacity(self.order());
        for a in self.factors.factors() {
            let qr = a.clone().qr();
            qs.push(qr.q());
        }
        let q = TuckerFactors::new(qs)?;
        let proj = q.apply(&q.apply(y, true)?, false)?;
        let mut diff = y.clone();
        diff.axpy(-1.0, &proj)?;
        Ok(diff.frobenius())
    }

    /// Equivalent model with diagonal A_kᵀA_k (nonincreasing) and all
    /// ‖A_kA_kᵀ‖_F equal; the mean and covariance are unchanged.
    pub fn normalize(&self) -> Result<TpcaModel> {
        let r = self.order();
        let mut new_factors = Vec::with_capacity(r);
        let mut rotations = Vec::with_capacity(r);
        let mut gram_norms = Vec::with_capacity(r);
        for a in self.factors.factors() {
            let svd = a.clone().svd(true, true);
            let mut u = svd.u.ok_or_else(|| TpcaError::numerical("svd failed"))?;
            let mut vt = svd
                .v_t
                .ok_or_else(|| TpcaError::numerical("svd failed"))?;
            let s = &svd.singular_values;
            if s[0] <= 0.0 {
                return Err(TpcaError::validation(
                    "zero factor: the equal-scale normalization is undefined",
                ));
            }
            // Deterministic sign convention on left singular vectors,
            // compensated on the right so UΣVᵀ is unchanged.
            for j in 0..u.ncols() {
                let mut col: Vec<f64> = u.column(j).iter().copied().collect();
                let before = col.clone();
                fix_sign(&mut col);
                if col != before {
                    for i in 0..u.nrows() {
                        u[(i, j)] = -u[(i, j)];
                    }
                    for c in 0..vt.ncols() {
                        vt[(j, c)] = -vt[(j, c)];
                    }
                }
            }
            let mut a_new = u.clone();
            for j in 0..a_new.ncols() {
                for i in 0..a_new.nrows() {
                    a_new[(i, j)] *= s[j];
                }
            }
            gram_norms.push(s.iter().map(|&x| x.powi(4)).sum::<f64>().sqrt());
            new_factors.push(a_new);
            rotations.push(vt);
        }
        // Rotate the latent mean so A·ν is preserved: A_k = A_k' V_kᵀ.
        let rot = TuckerFactors::new(rotations)?;
        let nu_new = rot.apply(&self.nu, false)?;
        // Equalize the Gram Frobenius norms with scale factors of product one.
        let g = (gram_norms.iter().map(|&x| x.ln()).sum::<f64>() / r as f64).exp();
        for (a, &norm) in new_factors.iter_mut().zip(&gram_norms) {
            let c = (g / norm).sqrt();
            *a *= c;
        }
        TpcaModel::new(TuckerFactors::new(new_factors)?, nu_new, self.sigma2)
    }
}

/// Number of free parameters of the model: 2 (ω scale and σ²) plus the
/// per-mode Stiefel-and-spectrum counts, plus the latent mean if free.
pub fn model_dimension(dims: &[usize], latent_dims: &[usize], free_mean: bool) -> Result<usize> {
    check_dims(dims, latent_dims)?;
    let mut total = 2usize;
    for (&n, &m) in dims.iter().zip(latent_dims) {
        total += n * m - m * (m - 1) / 2 - 1;
    }
    if free_mean {
        total += latent_dims.iter().product::<usize>();
    }
    Ok(total)
}

/// Effective per-mode ranks d_k = min{m_k, Π_{l≠k} m_l} and the dimension of
/// the closure of the set of tensors with multilinear rank at most (d_1..d_r):
/// Σ_k (d_k n_k − d_k²) + Π_k d_k.
pub fn tucker_variety_dim(dims: &[usize], latent_dims: &[usize]) -> Result<(Vec<usize>, usize)> {
    check_dims(dims, latent_dims)?;
    let m_total: usize = latent_dims.iter().product();
    let d: Vec<usize> = latent_dims
        .iter()
        .map(|&m| m.min(m_total / m))
        .collect();
    let dim: usize = d
        .iter()
        .zip(dims)
        .map(|(&dk, &nk)| dk * nk - dk * dk)
        .sum::<usize>()
        + d.iter().product::<usize>();
    Ok((d, dim))
}

fn check_dims(dims: &[usize], latent_dims: &[usize]) -> Result<()> {
    if dims.len() != latent_dims.len() || dims.is_empty() {
        return Err(TpcaError::validation("dimension list arity mismatch"));
    }
    for (&n, &m) in dims.iter().zip(latent_dims) {
        if m == 0 || m > n {
            return Err(TpcaError::validation(format!(
                "latent dimension {} invalid for ambient dimension {}",
                m, n
            )));
        }
    }
    Ok(())
}

/// Eigenvalue report for the model covariance.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Eigenvalues of each B_k = A_kA_kᵀ, nonincreasing, length n_k.
    pub per_mode: Vec<Vec<f64>>,
    /// All n covariance eigenvalues σ² + Π_k λ_{i_k}^{(k)}, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub sigma2: f64,
    /// Count of eigenvalues strictly above σ² (equals Πm_k at full rank).
    pub above_noise: usize,
}

/// A list of i.i.d. observations sharing one shape, with optional provenance.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<DenseTensor>,
    seed: Option<u64>,
    truth: Option<TpcaModel>,
}

impl Dataset {
    pub fn new(
        samples: Vec<DenseTensor>,
        seed: Option<u64>,
        truth: Option<TpcaModel>,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| TpcaError::validation("dataset must contain at least one sample"))?;
        let shape = first.shape().clone();
        if samples.iter().any(|s| s.shape() != &shape) {
            return Err(TpcaError::validation("dataset samples have mixed shapes"));
        }
        Ok(Dataset {
            samples,
            seed,
            truth,
        })
    }

    pub fn samples(&self) -> &[DenseTensor] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> &Shape {
        self.samples[0].shape()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn truth(&self) -> Option<&TpcaModel> {
        self.truth.as_ref()
    }

    /// Entrywise sample mean tensor.
    pub fn mean(&self) -> DenseTensor {
        let mut acc = DenseTensor::zeros(self.shape().clone());
        for s in &self.samples {
            acc.axpy(1.0, s).expect("same shape");
        }
        acc.scale(1.0 / self.len() as f64);
        acc
    }

    /// (1/N) Σ ‖X_i‖²_F, the trace of the uncentered second-moment operator.
    pub fn mean_squared_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.frobenius().powi(2)).sum::<f64>() / self.len() as f64
    }

    /// HOSVD distance of each sample to the rank-(m_1..m_r) variety; used by
    /// degenerate-noise checks.
    pub fn variety_residual(&self, latent_dims: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.samples {
            let (u, c) = hosvd(s, latent_dims)?;
            let recon = u.apply(&c, false)?;
            let mut diff = s.clone();
            diff.axpy(-1.0, &recon)?;
            out.push(diff.frobenius());
        }
        Ok(out)
    }
}

/// Convenience: a zero latent mean of the model's input shape.
pub fn zero_nu(factors: &TuckerFactors) -> DenseTensor {
    DenseTensor::zeros(factors.input_shape())
}
