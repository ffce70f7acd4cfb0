//! Finite-sample recovery calculators: concentration terms for the sample
//! covariance in the multilinear spectral norm, the feasible initialization
//! interval of the power iteration, one-step error bounds, and the implied
//! factor and noise-variance recovery bounds.
//!
//! Everything here is a pure function of scalar inputs; the hard constants
//! come from a Hanson–Wright inequality (c₀ = 0.145) and covering arguments
//! whose conclusions are embodied in the t-term formulas.

use crate::error::{Result, TpcaError};

/// Hanson–Wright constant in the α-terms.
pub const C0: f64 = 0.145;

/// Scalars describing a model/sample configuration for the concentration
/// bound: ambient and latent mode dimensions, sample count, noise standard
/// deviation σ, the product of factor spectral norms ‖𝐀‖ = Π_k‖A_k‖₂, and
/// the three failure probabilities.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationInput {
    pub dims: Vec<usize>,
    pub latent_dims: Vec<usize>,
    pub n_samples: usize,
    pub sigma: f64,
    pub norm_a: f64,
    pub deltas: [f64; 3],
}

/// The α-terms, the three deviation terms whose sum bounds ‖S_N − Σ‖_ml
/// with probability 1 − δ₁ − δ₂ − δ₃, and the effective noise level
/// ψ = σ² + t₁ + t₂ + t₃.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ConcentrationTerms {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub psi: f64,
}

fn max_self_sqrt(a: f64) -> f64 {
    a.max(a.sqrt())
}

/// Evaluate the deviation terms:
/// t₁ = 2σ²·max{α₁,√α₁} with α₁ = (2log(10r)Σn_k + log(1/δ₁))/(c₀N),
/// t₂ = 2‖𝐀‖²·max{α₂,√α₂} with α₂ = (2log(10r)Σm_k + log(1/δ₂))/(c₀N),
/// t₃ = 4σ‖𝐀‖·max{α₃,√α₃} with α₃ = (3/N)(log(10r)Σ(n_k+m_k) + log(1/δ₃)).
pub fn concentration_terms(input: &ConcentrationInput) -> Result<ConcentrationTerms> {
    let r = input.dims.len();
    if r == 0 || input.latent_dims.len() != r {
        return Err(TpcaError::validation("dimension arity mismatch"));
    }
    if input.n_samples == 0 {
        return Err(TpcaError::validation("need at least one sample"));
    }
    if !(input.sigma >= 0.0) || !(input.norm_a >= 0.0) {
        return Err(TpcaError::validation("sigma and norm_a must be nonnegative"));
    }
    for &d in &input.deltas {
        if !(d > 0.0 && d < 1.0) {
            return Err(TpcaError::validation("deltas must lie in (0,1)"));
        }
    }
    let n_samples = input.n_samples as f64;
    let log10r = (10.0 * r as f64).ln();
    let sum_n: f64 = input.dims.iter().map(|&n| n as f64).sum();
    let sum_m: f64 = input.latent_dims.iter().map(|&m| m as f64).sum();
    let alpha1 = (2.0 * log10r * sum_n + (1.0 / input.deltas[0]).ln()) / (C0 * n_samples);
    let alpha2 = (2.0 * log10r * sum_m + (1.0 / input.deltas[1]).ln()) / (C0 * n_samples);
    let alpha3 = 3.0 / n_samples * (log10r * (sum_n + sum_m) + (1.0 / input.deltas[2]).ln());
    let t1 = 2.0 * input.sigma.powi(2) * max_self_sqrt(alpha1);
    let t2 = 2.0 * input.norm_a.powi(2) * max_self_sqrt(alpha2);
    let t3 = 4.0 * input.sigma * input.norm_a * max_self_sqrt(alpha3);
    Ok(ConcentrationTerms {
        alpha1,
        alpha2,
        alpha3,
        t1,
        t2,
        t3,
        psi: input.sigma.powi(2) + t1 + t2 + t3,
    })
}

/// The interval (τ₀, τ₁) on which one power-iteration step contracts the
/// initialization angle, when it exists.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TauInterval {
    /// Whether (ψ/ω)² < (1/(32m))·(1/r)(1−1/r)^{r−1} holds strictly.
    pub feasible: bool,
    pub tau0: Option<f64>,
    pub tau1: Option<f64>,
    pub psi_over_omega: f64,
    pub m: usize,
    pub r: usize,
}

/// g(x) = x²(1−x²)^{r−1} − 32m(ψ/ω)²; one step improves the angle bound τ
/// exactly when g(τ) ≥ 0.
pub fn g_function(x: f64, psi_over_omega: f64, m: usize, r: usize) -> f64 {
    x * x * (1.0 - x * x).powi(r as i32 - 1) - 32.0 * m as f64 * psi_over_omega.powi(2)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    // lo and hi bracket a sign change; 200 halvings reach machine precision.
    let mut f_lo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_lo < 0.0) == (f_mid < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Locate the roots of g in (0, √(1/r)] and [√(1/r), 1) by bisection. The
/// feasibility condition is strict: equality with the maximizer value counts
/// as infeasible.
pub fn tau_interval(psi_over_omega: f64, m: usize, r: usize, tol: f64) -> Result<TauInterval> {
    if !(psi_over_omega > 0.0) {
        return Err(TpcaError::validation("psi/omega must be positive"));
    }
    if r < 2 || m == 0 {
        return Err(TpcaError::validation("need r >= 2 and m >= 1"));
    }
    if !(tol > 0.0) {
        return Err(TpcaError::validation("tolerance must be positive"));
    }
    let r_f = r as f64;
    let peak = (1.0 / r_f) * (1.0 - 1.0 / r_f).powi(r as i32 - 1);
    let feasible = psi_over_omega.powi(2) < peak / (32.0 * m as f64);
    if !feasible {
        return Ok(TauInterval {
            feasible,
            tau0: None,
            tau1: None,
            psi_over_omega,
            m,
            r,
        });
    }
    let g = |x: f64| g_function(x, psi_over_omega, m, r);
    let x_star = (1.0 / r_f).sqrt();
    let tau0 = bisect(g, 0.0, x_star);
    let tau1 = bisect(|x| -g(x), x_star, 1.0);
    for root in [tau0, tau1] {
        if g(root).abs() > tol.max(1e-12) {
            return Err(TpcaError::numerical(format!(
                "bisection residual {:.3e} above tolerance at root {}",
                g(root).abs(),
                root
            )));
        }
    }
    Ok(TauInterval {
        feasible,
        tau0: Some(tau0),
        tau1: Some(tau1),
        psi_over_omega,
        m,
        r,
    })
}

/// One-step bounds of the power iteration started at angle bound τ:
/// f₁ bounds sin θ_k^{(1)}, f₂ bounds the relative signal-strength error.
pub fn one_step_bounds(psi: f64, omega: f64, tau: f64, m: usize, r: usize) -> Result<(f64, f64)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(TpcaError::validation("tau must lie in (0,1)"));
    }
    if !(psi >= 0.0) || !(omega > 0.0) {
        return Err(TpcaError::validation("need psi >= 0 and omega > 0"));
    }
    let ratio = psi / omega;
    let m_f = m as f64;
    let shrink = (1.0 - tau * tau).powi(r as i32 - 1);
    let f1 = ratio * 4.0 * (2.0 * m_f).sqrt() / shrink.sqrt();
    let f2 = ratio.powi(2) * 16.0 * m_f * r as f64 / shrink + ratio * m_f.sqrt();
    Ok((f1, f2))
}

/// Per-mode factor recovery bound after one step:
/// [f₂+√2·f₁]·ω^{1/r} / (2(√2−1)·√(n_k m_k)·λ_{m_k}(B_k)), an upper bound on
/// the Procrustes-aligned size-normalized error of Â_k.
pub fn factor_recovery_bound(
    f1: f64,
    f2: f64,
    omega: f64,
    r: usize,
    n_k: usize,
    m_k: usize,
    lambda_min_bk: f64,
) -> Result<f64> {
    if !(lambda_min_bk > 0.0) {
        return Err(TpcaError::validation(
            "smallest nonzero eigenvalue must be positive",
        ));
    }
    if !(omega > 0.0) || r == 0 || n_k == 0 || m_k == 0 {
        return Err(TpcaError::validation("invalid recovery-bound input"));
    }
    let numerator = (f2 + 2.0f64.sqrt() * f1) * omega.powf(1.0 / r as f64);
    let denominator =
        2.0 * (2.0f64.sqrt() - 1.0) * ((n_k * m_k) as f64).sqrt() * lambda_min_bk;
    Ok(numerator / denominator)
}

/// Inputs for the noise-variance bound. `norm_sigma` is ‖Σ‖₂, available in
/// closed form as Π_k‖A_k‖² + σ².
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Sigma2BoundInput {
    pub f1: f64,
    pub f2: f64,
    pub omega: f64,
    pub r: usize,
    /// Latent dimension product m = Πm_k.
    pub m: usize,
    /// Ambient dimension product n = Πn_k.
    pub n: usize,
    pub n_samples: usize,
    pub sigma2: f64,
    pub norm_sigma: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Sigma2Bound {
    pub alpha4: f64,
    pub t4: f64,
    /// (√m·ω/n)[(1+2f₁+√2f₂)^r − 1] + t₄, a bound on |σ̂² − σ²|.
    pub total: f64,
}

pub fn sigma2_bound(input: &Sigma2BoundInput) -> Result<Sigma2Bound> {
    if !(input.norm_sigma > 0.0) {
        return Err(TpcaError::validation("covariance norm must be positive"));
    }
    if input.n == 0 || input.m == 0 || input.n_samples == 0 || input.r == 0 {
        return Err(TpcaError::validation("invalid sigma2-bound input"));
    }
    if !(input.sigma2 >= 0.0) || !(input.omega >= 0.0) {
        return Err(TpcaError::validation("sigma2 and omega must be nonnegative"));
    }
    let n = input.n as f64;
    let m = input.m as f64;
    let n_samples = input.n_samples as f64;
    // Effective dimension scale m‖Σ‖ + (n−m)σ²/‖Σ‖ shared by α₄ and t₄.
    let scale = m * input.norm_sigma + (n - m) * input.sigma2 / input.norm_sigma;
    let alpha4 = 2.0 * input.norm_sigma * (n_samples * n).ln() / (C0 * n_samples * scale);
    let t4 = scale / n * max_self_sqrt(alpha4);
    let growth = (1.0 + 2.0 * input.f1 + 2.0f64.sqrt() * input.f2).powi(input.r as i32) - 1.0;
    let total = m.sqrt() * input.omega / n * growth + t4;
    Ok(Sigma2Bound { alpha4, t4, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_input() -> ConcentrationInput {
        ConcentrationInput {
            dims: vec![4, 4],
            latent_dims: vec![2, 2],
            n_samples: 100,
            sigma: 1.0,
            norm_a: 1.0,
            deltas: [0.1, 0.1, 0.1],
        }
    }

    #[test]
    fn concentration_hand_evaluation() {
        let terms = concentration_terms(&base_input()).unwrap();
        // Independent arithmetic: α₁ = (2·log20·8 + log10)/(0.145·100).
        let alpha1 = (2.0 * 20.0f64.ln() * 8.0 + 10.0f64.ln()) / 14.5;
        assert_relative_eq!(terms.alpha1, alpha1, epsilon = 1e-12);
        assert!((terms.alpha1 - 3.4645).abs() < 5e-4, "alpha1 {}", terms.alpha1);
        assert!((terms.t1 - 6.929).abs() < 1e-3, "t1 {}", terms.t1);
        let alpha2 = (2.0 * 20.0f64.ln() * 4.0 + 10.0f64.ln()) / 14.5;
        assert_relative_eq!(terms.alpha2, alpha2, epsilon = 1e-12);
        assert_relative_eq!(terms.t2, 2.0 * alpha2.max(alpha2.sqrt()), epsilon = 1e-12);
        let alpha3 = 0.03 * (20.0f64.ln() * 12.0 + 10.0f64.ln());
        assert_relative_eq!(terms.alpha3, alpha3, epsilon = 1e-12);
        assert_relative_eq!(terms.t3, 4.0 * alpha3.max(alpha3.sqrt()), epsilon = 1e-12);
        assert_relative_eq!(
            terms.psi,
            1.0 + terms.t1 + terms.t2 + terms.t3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn concentration_noise_free_terms_vanish() {
        let mut input = base_input();
        input.sigma = 0.0;
        let terms = concentration_terms(&input).unwrap();
        assert_eq!(terms.t1, 0.0);
        assert_eq!(terms.t3, 0.0);
        assert_relative_eq!(terms.psi, terms.t2, epsilon = 1e-15);
    }

    #[test]
    fn concentration_terms_shrink_with_samples() {
        let mut prev = f64::INFINITY;
        for n_samples in [100usize, 1_000, 100_000, 10_000_000] {
            let mut input = base_input();
            input.n_samples = n_samples;
            let terms = concentration_terms(&input).unwrap();
            let total = terms.t1 + terms.t2 + terms.t3;
            assert!(total < prev, "not monotone at N={}", n_samples);
            prev = total;
        }
        assert!(prev < 0.1, "terms do not vanish: {}", prev);
    }

    #[test]
    fn concentration_rejects_bad_deltas() {
        let mut input = base_input();
        input.deltas = [0.0, 0.1, 0.1];
        assert!(concentration_terms(&input).is_err());
        input.deltas = [0.1, 1.0, 0.1];
        assert!(concentration_terms(&input).is_err());
    }

    #[test]
    fn tau_interval_boundary_is_infeasible() {
        let (m, r) = (4usize, 3usize);
        let peak = (1.0 / 3.0) * (2.0 / 3.0f64).powi(2);
        // The square root can round below the exact threshold; nudge up one
        // ulp so the squared value is at or above it (strict inequality must
        // then fail).
        let at_threshold = (peak / (32.0 * m as f64)).sqrt().next_up();
        let interval = tau_interval(at_threshold, m, r, 1e-14).unwrap();
        assert!(!interval.feasible);
        assert!(interval.tau0.is_none() && interval.tau1.is_none());
        // Just below the threshold is feasible.
        let interval = tau_interval(at_threshold * 0.999, m, r, 1e-14).unwrap();
        assert!(interval.feasible);
    }

    #[test]
    fn tau_interval_roots_are_accurate() {
        for &(ratio, m, r) in &[(1e-3f64, 4usize, 2usize), (1e-4, 8, 3), (5e-4, 2, 4)] {
            let interval = tau_interval(ratio, m, r, 1e-14).unwrap();
            assert!(interval.feasible);
            let tau0 = interval.tau0.unwrap();
            let tau1 = interval.tau1.unwrap();
            let x_star = (1.0 / r as f64).sqrt();
            assert!(0.0 < tau0 && tau0 < x_star && x_star < tau1 && tau1 < 1.0);
            assert!(g_function(tau0, ratio, m, r).abs() < 1e-12);
            assert!(g_function(tau1, ratio, m, r).abs() < 1e-12);
            // Strictly positive inside.
            let mid = 0.5 * (tau0 + tau1);
            assert!(g_function(mid, ratio, m, r) > 0.0);
        }
    }

    #[test]
    fn tau0_matches_small_ratio_asymptote() {
        // Leading term of the lower root: τ₀ ≈ 4√(2m)·ψ/ω.
        for &(m, r) in &[(8usize, 3usize), (4, 2)] {
            let ratio = 1e-4;
            let interval = tau_interval(ratio, m, r, 1e-14).unwrap();
            let tau0 = interval.tau0.unwrap();
            let asymptote = 4.0 * (2.0 * m as f64).sqrt() * ratio;
            assert!(
                (tau0 - asymptote).abs() < 0.01 * asymptote,
                "tau0 {} vs asymptote {}",
                tau0,
                asymptote
            );
        }
    }

    #[test]
    fn g_at_maximizer() {
        let (ratio, m, r) = (1e-3, 4usize, 3usize);
        let x_star = (1.0f64 / 3.0).sqrt();
        let expected = (1.0 / 3.0) * (2.0 / 3.0f64).powi(2) - 32.0 * 4.0 * ratio * ratio;
        assert_relative_eq!(
            g_function(x_star, ratio, m, r),
            expected,
            epsilon = 1e-15,
            max_relative = 1e-12
        );
    }

    #[test]
    fn one_step_bounds_cases() {
        let (psi, omega, m, r) = (0.5, 100.0, 8usize, 3usize);
        // τ→0 limit of f1.
        let (f1, _) = one_step_bounds(psi, omega, 1e-12, m, r).unwrap();
        assert_relative_eq!(
            f1,
            psi / omega * 4.0 * 4.0,
            epsilon = 1e-10,
            max_relative = 1e-9
        );
        // Identity f2 = (r/2)f1² + (ψ/ω)√m on a τ grid, plus monotonicity.
        let mut prev = (0.0, 0.0);
        for i in 1..20 {
            let tau = i as f64 / 20.0;
            let (f1, f2) = one_step_bounds(psi, omega, tau, m, r).unwrap();
            assert_relative_eq!(
                f2,
                r as f64 / 2.0 * f1 * f1 + psi / omega * (m as f64).sqrt(),
                epsilon = 1e-14,
                max_relative = 1e-12
            );
            assert!(f1 > prev.0 && f2 > prev.1, "not monotone at tau {}", tau);
            prev = (f1, f2);
        }
        assert!(one_step_bounds(psi, omega, 1.0, m, r).is_err());
        assert!(one_step_bounds(psi, omega, 0.0, m, r).is_err());
    }

    #[test]
    fn recovery_bound_cases() {
        // Vanishing one-step errors give a vanishing bound.
        assert_eq!(
            factor_recovery_bound(0.0, 0.0, 50.0, 3, 5, 2, 4.0).unwrap(),
            0.0
        );
        // Hand evaluation: f1=0.1, f2=0.2, ω=8, r=3, n_k=4, m_k=2, λ=2:
        // [0.2+√2·0.1]·2 / (2(√2−1)·√8·2).
        let bound = factor_recovery_bound(0.1, 0.2, 8.0, 3, 4, 2, 2.0).unwrap();
        let expected = (0.2 + 2.0f64.sqrt() * 0.1) * 2.0
            / (2.0 * (2.0f64.sqrt() - 1.0) * 8.0f64.sqrt() * 2.0);
        assert_relative_eq!(bound, expected, epsilon = 1e-14);
        assert!(factor_recovery_bound(0.1, 0.2, 8.0, 3, 4, 2, 0.0).is_err());
    }

    #[test]
    fn sigma2_bound_cases() {
        let input = Sigma2BoundInput {
            f1: 0.0,
            f2: 0.0,
            omega: 20.0,
            r: 2,
            m: 4,
            n: 16,
            n_samples: 1000,
            sigma2: 0.5,
            norm_sigma: 1.5,
        };
        let bound = sigma2_bound(&input).unwrap();
        // With f1 = f2 = 0 the alignment term vanishes.
        assert_relative_eq!(bound.total, bound.t4, epsilon = 1e-15);
        // Hand evaluation of α₄ and t₄.
        let scale = 4.0 * 1.5 + 12.0 * 0.5 / 1.5;
        let alpha4 = 2.0 * 1.5 * (1000.0f64 * 16.0).ln() / (0.145 * 1000.0 * scale);
        assert_relative_eq!(bound.alpha4, alpha4, epsilon = 1e-12);
        assert_relative_eq!(
            bound.t4,
            scale / 16.0 * alpha4.max(alpha4.sqrt()),
            epsilon = 1e-12
        );
        // Nonzero f's add the alignment term.
        let input = Sigma2BoundInput {
            f1: 0.01,
            f2: 0.02,
            ..input
        };
        let bound2 = sigma2_bound(&input).unwrap();
        let growth = (1.0 + 0.02 + 2.0f64.sqrt() * 0.02).powi(2) - 1.0;
        assert_relative_eq!(
            bound2.total - bound2.t4,
            2.0 * 20.0 / 16.0 * growth,
            epsilon = 1e-12,
            max_relative = 1e-12
        );
    }

    #[test]
    fn sigma2_bound_parametric_rate_with_orthonormal_factors() {
        // ‖Σ‖ = σ²+1 for orthonormal factors; t₄ should scale like
        // 1/√(Nn) up to logarithms: ratios across N follow √N.
        let make = |n_samples: usize| Sigma2BoundInput {
            f1: 0.0,
            f2: 0.0,
            omega: 2.0,
            r: 2,
            m: 4,
            n: 400,
            n_samples,
            sigma2: 0.25,
            norm_sigma: 1.25,
        };
        let t4_small = sigma2_bound(&make(1_000)).unwrap().t4;
        let t4_big = sigma2_bound(&make(100_000)).unwrap().t4;
        let ratio = t4_small / t4_big;
        // √100 = 10 modulo the log(Nn) factor.
        assert!(ratio > 7.0 && ratio < 13.0, "rate ratio {}", ratio);
    }

    #[test]
    fn calculators_are_deterministic() {
        let a = concentration_terms(&base_input()).unwrap();
        let b = concentration_terms(&base_input()).unwrap();
        assert_eq!(a.psi.to_bits(), b.psi.to_bits());
        let i1 = tau_interval(1e-3, 4, 3, 1e-14).unwrap();
        let i2 = tau_interval(1e-3, 4, 3, 1e-14).unwrap();
        assert_eq!(i1.tau0.unwrap().to_bits(), i2.tau0.unwrap().to_bits());
    }

    #[test]
    fn concentration_monte_carlo_coverage() {
        // Empirical check of the deviation bound: the certified lower bound
        // on ‖S_N−Σ‖_ml stays below t₁+t₂+t₃ in at least 85% of seeded
        // replications at δ = (0.05, 0.05, 0.05).
        use crate::model::{zero_nu, TpcaModel};
        use crate::tensor::{ml_norm_estimate, MlNormOptions, OperatorTensor, TuckerFactors};
        use nalgebra::DMatrix;
        use rand::Rng;
        use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let factors = TuckerFactors::new(vec![
            DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        ])
        .unwrap();
        let sigma = 0.8f64;
        let model = TpcaModel::new(factors.clone(), zero_nu(&factors), sigma * sigma).unwrap();
        let input = ConcentrationInput {
            dims: vec![4, 4],
            latent_dims: vec![2, 2],
            n_samples: 200,
            sigma,
            norm_a: factors.spectral_norm(),
            deltas: [0.05, 0.05, 0.05],
        };
        let terms = concentration_terms(&input).unwrap();
        let budget = terms.t1 + terms.t2 + terms.t3;
        let sigma_mat = model.covariance_dense().unwrap();
        let shape = model.ambient_shape();
        let opts = MlNormOptions {
            restarts: 64,
            ..MlNormOptions::default()
        };
        let reps = 200;
        let mut covered = 0usize;
        for rep in 0..reps {
            let data = model.sample(200, 10_000 + rep).unwrap();
            let n = shape.len();
            let mut s = DMatrix::<f64>::zeros(n, n);
            for x in data.samples() {
                let v = x.to_vector();
                s.gemm(1.0 / 200.0, &v, &v.transpose(), 1.0);
            }
            let diff = s - &sigma_mat;
            let op = OperatorTensor::from_mat(&diff, shape.clone(), shape.clone()).unwrap();
            let ml = ml_norm_estimate(&op, &opts).unwrap();
            if ml <= budget {
                covered += 1;
            }
        }
        let fraction = covered as f64 / reps as f64;
        assert!(fraction >= 0.85, "coverage {}", fraction);
    }
}
