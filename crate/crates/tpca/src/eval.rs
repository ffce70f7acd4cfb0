//! Estimation-quality metrics: Procrustes-aligned factor error, sine of the
//! angle between unit vectors, and replication summaries with Student-t
//! confidence intervals.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Result, TpcaError};

/// Per-mode alignment of estimated factors against a reference.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// err_k = min_O ‖Â_kO − A_k‖_F / √(n_k m_k) over orthogonal O.
    pub per_mode: Vec<f64>,
    /// Mean of the per-mode errors.
    pub average: f64,
    /// The aligning orthogonal matrices.
    pub rotations: Vec<DMatrix<f64>>,
}

/// Minimize ‖Â O − A‖_F over orthogonal O (reflections allowed) and divide by
/// √(n_k m_k). O = UVᵀ where ÂᵀA = UΣVᵀ.
pub fn procrustes_error(a_hat: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    if a_hat.shape() != a.shape() {
        return Err(TpcaError::validation("procrustes shape mismatch"));
    }
    let cross = a_hat.transpose() * a;
    let svd = cross.svd(true, true);
    let u = svd.u.ok_or_else(|| TpcaError::numerical("svd failed"))?;
    let v_t = svd.v_t.ok_or_else(|| TpcaError::numerical("svd failed"))?;
    let o = u * v_t;
    let err = (a_hat * &o - a).norm() / ((a.nrows() * a.ncols()) as f64).sqrt();
    Ok((err, o))
}

/// Align every mode and average.
pub fn align_factors(
    a_hat: &[DMatrix<f64>],
    a: &[DMatrix<f64>],
) -> Result<AlignmentReport> {
    if a_hat.len() != a.len() || a.is_empty() {
        return Err(TpcaError::validation("factor list arity mismatch"));
    }
    let mut per_mode = Vec::with_capacity(a.len());
    let mut rotations = Vec::with_capacity(a.len());
    for (h, t) in a_hat.iter().zip(a) {
        let (err, o) = procrustes_error(h, t)?;
        per_mode.push(err);
        rotations.push(o);
    }
    let average = per_mode.iter().sum::<f64>() / per_mode.len() as f64;
    Ok(AlignmentReport {
        per_mode,
        average,
        rotations,
    })
}

/// √(1 − ⟨b̂,b⟩²) after defensive renormalization.
pub fn sin_theta(b_hat: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if b_hat.len() != b.len() {
        return Err(TpcaError::validation("sin_theta length mismatch"));
    }
    let nh = b_hat.norm();
    let nb = b.norm();
    if nh <= 1e-300 || nb <= 1e-300 {
        return Err(TpcaError::validation("sin_theta of a zero vector"));
    }
    let cos = (b_hat.dot(b) / (nh * nb)).clamp(-1.0, 1.0);
    Ok((1.0 - cos * cos).max(0.0).sqrt())
}

/// Mean and 95% Student-t confidence interval over replication values.
#[derive(Debug, Clone)]
pub struct ReplicationSummary {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub count: usize,
}

pub fn summarize(metric: &str, values: &[f64]) -> Result<ReplicationSummary> {
    if values.len() < 2 {
        return Err(TpcaError::validation(
            "replication summary needs at least two values",
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| TpcaError::numerical(format!("t distribution: {}", e)))?
        .inverse_cdf(0.975);
    Ok(ReplicationSummary {
        metric: metric.to_string(),
        values: values.to_vec(),
        mean,
        ci_lower: mean - t * se,
        ci_upper: mean + t * se,
        count: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
    }

    #[test]
    fn procrustes_exact_and_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 5, 2);
        let (err, _) = procrustes_error(&a, &a).unwrap();
        assert!(err < 1e-12);
        let neg = -a.clone();
        let (err, o) = procrustes_error(&neg, &a).unwrap();
        assert!(err < 1e-12, "sign flip not absorbed: {}", err);
        // The aligner is orthogonal.
        assert_relative_eq!(
            (o.transpose() * &o - DMatrix::identity(2, 2)).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn procrustes_invariant_under_right_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 6, 3);
        let a_hat = random_matrix(&mut rng, 6, 3);
        let (base, _) = procrustes_error(&a_hat, &a).unwrap();
        for _ in 0..5 {
            let q = random_matrix(&mut rng, 3, 3).qr().q();
            let (rot, _) = procrustes_error(&(&a_hat * q), &a).unwrap();
            assert_relative_eq!(base, rot, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn procrustes_not_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 4, 2);
        let a_hat = random_matrix(&mut rng, 4, 2);
        let (base, _) = procrustes_error(&a_hat, &a).unwrap();
        let (scaled, _) = procrustes_error(&(&a_hat * 3.0), &a).unwrap();
        assert!((base - scaled).abs() > 1e-6);
    }

    #[test]
    fn procrustes_matches_grid_search() {
        // m = 2: orthogonal group is rotations and reflections parametrized
        // by an angle; exhaustive grid oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let a = random_matrix(&mut rng, 4, 2);
            let a_hat = random_matrix(&mut rng, 4, 2);
            let (err, _) = procrustes_error(&a_hat, &a).unwrap();
            let mut best = f64::INFINITY;
            let steps = 10_000usize;
            for i in 0..steps {
                let th = 2.0 * std::f64::consts::PI * i as f64 / steps as f64;
                let (c, s) = (th.cos(), th.sin());
                for refl in [1.0f64, -1.0] {
                    let o = DMatrix::from_row_slice(2, 2, &[c, -s * refl, s, c * refl]);
                    let val = (&a_hat * o - &a).norm() / (8.0f64).sqrt();
                    best = best.min(val);
                }
            }
            assert!((err - best).abs() < 1e-4, "svd {} vs grid {}", err, best);
            assert!(err <= best + 1e-12);
        }
    }

    #[test]
    fn sin_theta_cases() {
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        assert_relative_eq!(sin_theta(&e1, &e1).unwrap(), 0.0);
        assert_relative_eq!(sin_theta(&e1, &e2).unwrap(), 1.0);
        // Symmetry and the chord identity ‖b−b̂‖² = 2(1−cos θ) for unit vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b1 = DVector::from_fn(5, |_, _| rng.gen::<f64>() - 0.5);
        let mut b2 = DVector::from_fn(5, |_, _| rng.gen::<f64>() - 0.5);
        b1 /= b1.norm();
        b2 /= b2.norm();
        assert_relative_eq!(
            sin_theta(&b1, &b2).unwrap(),
            sin_theta(&b2, &b1).unwrap(),
            epsilon = 1e-14
        );
        let cos = b1.dot(&b2);
        assert_relative_eq!((&b1 - &b2).norm_squared(), 2.0 * (1.0 - cos), epsilon = 1e-12);
        let zero = DVector::zeros(5);
        assert!(sin_theta(&zero, &b1).is_err());
    }

    #[test]
    fn summarize_cases() {
        assert!(summarize("m", &[1.0]).is_err());
        let s = summarize("m", &[2.0, 2.0, 2.0]).unwrap();
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.ci_lower, 2.0, epsilon = 1e-12);
        assert_relative_eq!(s.ci_upper, 2.0, epsilon = 1e-12);
        let s = summarize("m", &[1.0, 3.0]).unwrap();
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.ci_upper - s.mean, s.mean - s.ci_lower, epsilon = 1e-12);
        assert!(s.ci_lower <= s.mean && s.mean <= s.ci_upper);
    }

    #[test]
    fn summarize_coverage_simulation() {
        // 95% CI over standard-normal draws covers 0 about 95% of the time.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 2_000usize;
        let mut covered = 0usize;
        for _ in 0..trials {
            let values: Vec<f64> = (0..10)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let s = summarize("x", &values).unwrap();
            if s.ci_lower <= 0.0 && 0.0 <= s.ci_upper {
                covered += 1;
            }
        }
        let rate = covered as f64 / trials as f64;
        assert!((rate - 0.95).abs() < 0.02, "coverage {}", rate);
    }
}
