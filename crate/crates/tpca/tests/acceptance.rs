//! End-to-end acceptance suite. Each test covers one numbered criterion and
//! prints a single `ACCEPTANCE <n> PASS|FAIL` line with the measured values;
//! tolerances are pinned as constants next to each criterion.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use tpca::diagnostics::{g_function, one_step_bounds, tau_interval};
use tpca::em::{fit_em, EmConfig, Sigma2Init};
use tpca::eval::sin_theta;
use tpca::harness::{
    generate_truth, records_to_csv, run_experiment, Estimator, ExperimentRecord, ExperimentSpec,
    GridPoint,
};
use tpca::model::tucker_variety_dim;
use tpca::power::{init_power, power_step_tilde_path, run_power, true_directions, PowerConfig, PowerInit, PowerPath};
use tpca::tensor::{sym_eig_desc, DenseTensor, Shape, TuckerFactors};

fn report(criterion: usize, pass: bool, detail: &str) {
    // Printed even on success so a `--nocapture` run shows the whole ledger.
    eprintln!(
        "ACCEPTANCE {criterion:>2} {}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criteria 1 & 2: simulation case 1 vs reference mean errors, 30 replications.
// ---------------------------------------------------------------------------

/// Reference mean errors for the (n,m) blocks at σ² ∈ {0.1, 1, 10}.
const REFERENCE_ERRORS: [((usize, usize), [f64; 3]); 4] = [
    ((5, 2), [0.366, 0.218, 0.158]),
    ((5, 3), [0.411, 0.232, 0.162]),
    ((15, 6), [0.612, 0.465, 0.334]),
    ((15, 9), [0.633, 0.494, 0.321]),
];
const REF_TOL_SMALL: f64 = 0.06; // n = 5 rows
const REF_TOL_LARGE: f64 = 0.05; // n = 15 rows
const CASE1_REPLICATIONS: usize = 30;
const CASE1_SEED: u64 = 42;

fn case1_records() -> &'static Vec<ExperimentRecord> {
    static RECORDS: OnceLock<Vec<ExperimentRecord>> = OnceLock::new();
    RECORDS.get_or_init(|| {
        let spec = ExperimentSpec::case1(CASE1_REPLICATIONS, CASE1_SEED);
        run_experiment(&spec).unwrap().records
    })
}

fn case1_mean(records: &[ExperimentRecord], grid_index: usize) -> f64 {
    let vals: Vec<f64> = records
        .iter()
        .filter(|r| r.grid_index == grid_index)
        .map(|r| r.err_mean.expect("replication failed"))
        .collect();
    assert_eq!(vals.len(), CASE1_REPLICATIONS);
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[test]
fn criterion_01_case1_reference_errors() {
    let records = case1_records();
    let mut worst = (0.0f64, String::new());
    let mut pass = true;
    for (block, ((n, _m), refs)) in REFERENCE_ERRORS.iter().enumerate() {
        let tol = if *n == 5 { REF_TOL_SMALL } else { REF_TOL_LARGE };
        for (j, &reference) in refs.iter().enumerate() {
            let mean = case1_mean(records, block * 3 + j);
            let diff = (mean - reference).abs();
            if diff > worst.0 {
                worst = (diff, format!("grid {}: mean {mean:.4} vs {reference:.3}", block * 3 + j));
            }
            pass &= diff <= tol;
        }
    }
    report(
        1,
        pass,
        &format!(
            "12 reference cells within ±{REF_TOL_SMALL}/±{REF_TOL_LARGE} over {CASE1_REPLICATIONS} reps; worst |Δ| = {:.4} ({})",
            worst.0, worst.1
        ),
    );
}

#[test]
fn criterion_02_noise_trend() {
    let records = case1_records();
    let mut pass = true;
    let mut detail = String::new();
    for block in 0..4 {
        let low = case1_mean(records, block * 3); // σ² = 0.1
        let high = case1_mean(records, block * 3 + 2); // σ² = 10
        pass &= high < low;
        detail.push_str(&format!("[{low:.3} -> {high:.3}] "));
    }
    report(
        2,
        pass,
        &format!("mean error at σ²=10 below σ²=0.1 in every block: {detail}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: case 2 error curve stabilizes after two power sweeps.
// ---------------------------------------------------------------------------

const CASE2_REPLICATIONS: usize = 50;
const CASE2_STABLE_TOL: f64 = 1e-3;
const CASE2_BUDGET_SECS: u64 = 600;

#[test]
fn criterion_03_case2_stabilization() {
    let start = std::time::Instant::now();
    let spec = ExperimentSpec::case2(CASE2_REPLICATIONS, 42);
    let outcome = run_experiment(&spec).unwrap();
    let mean_at = |grid: usize| -> f64 {
        let vals: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.grid_index == grid)
            .map(|r| r.err_mean.expect("replication failed"))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let means: Vec<f64> = (0..10).map(mean_at).collect();
    let max_change = (3..10)
        .map(|l| (means[l] - means[l - 1]).abs())
        .fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    let pass = max_change < CASE2_STABLE_TOL && elapsed.as_secs() < CASE2_BUDGET_SECS;
    report(
        3,
        pass,
        &format!(
            "mean error per sweep {:?}; max change for L ≥ 3 = {max_change:.2e} < {CASE2_STABLE_TOL:.0e}; runtime {elapsed:.1?} < {CASE2_BUDGET_SECS}s",
            means.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: case 3 errors nonincreasing in N at each σ².
// ---------------------------------------------------------------------------

const CASE3_REPLICATIONS: usize = 25;
/// One inversion per curve is allowed if it is at most 10% relative.
const CASE3_INVERSION_TOL: f64 = 0.10;

#[test]
fn criterion_04_case3_monotonicity() {
    let spec = ExperimentSpec::case3(CASE3_REPLICATIONS, 42);
    let outcome = run_experiment(&spec).unwrap();
    let sigma2_list = [1.0, 4.0, 9.0, 16.0, 25.0];
    let n_list = [100usize, 200, 300, 400, 500];

    let mut pass = true;
    let mut worst = String::new();
    for (row, &sigma2) in sigma2_list.iter().enumerate() {
        // Curves over N: three per-mode errors and the relative σ̂² error.
        let mut curves: [Vec<f64>; 4] = Default::default();
        for (col, _) in n_list.iter().enumerate() {
            let grid = row * n_list.len() + col;
            let recs: Vec<&ExperimentRecord> = outcome
                .records
                .iter()
                .filter(|r| r.grid_index == grid)
                .collect();
            assert_eq!(recs.len(), CASE3_REPLICATIONS);
            for mode in 0..3 {
                curves[mode].push(
                    recs.iter().map(|r| r.err_modes[mode]).sum::<f64>() / recs.len() as f64,
                );
            }
            curves[3].push(
                recs.iter()
                    .map(|r| (r.sigma2_hat.unwrap() - sigma2).abs() / sigma2)
                    .sum::<f64>()
                    / recs.len() as f64,
            );
        }
        for (ci, curve) in curves.iter().enumerate() {
            let mut inversions = 0;
            let mut ok = true;
            for w in curve.windows(2) {
                if w[1] > w[0] {
                    inversions += 1;
                    ok &= (w[1] - w[0]) / w[0] <= CASE3_INVERSION_TOL;
                }
            }
            ok &= inversions <= 1;
            if !ok {
                pass = false;
                worst = format!(
                    "σ²={sigma2} curve {ci} not monotone: {:?}",
                    curve.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
                );
            }
        }
    }
    report(
        4,
        pass,
        &if pass {
            format!(
                "per-mode errors and relative σ̂² error nonincreasing in N (≤1 inversion ≤{:.0}%) for all 5 noise levels, {CASE3_REPLICATIONS} reps",
                CASE3_INVERSION_TOL * 100.0
            )
        } else {
            worst
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: EM log-likelihood traces are monotone.
// ---------------------------------------------------------------------------

const EM_TRACE_SLACK: f64 = 1e-8;

#[test]
fn criterion_05_em_monotone_likelihood() {
    let shapes: [(&[usize], &[usize]); 5] = [
        (&[8, 6, 5], &[3, 2, 2]),
        (&[5, 4, 3], &[2, 2, 1]),
        (&[7, 3], &[3, 2]),
        (&[4, 4, 4], &[2, 2, 2]),
        (&[6, 2, 2], &[4, 1, 1]),
    ];
    let mut failures = 0;
    for i in 0..100u64 {
        let (dims, latent) = shapes[(i % 5) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i);
        let sigma2 = rng.gen_range(0.1..4.0);
        let truth = generate_truth(dims, latent, sigma2, 300 + i).unwrap();
        let data = truth.sample(12, 600 + i).unwrap();
        let mut config = EmConfig::hosvd(latent.to_vec());
        config.max_iter = 25;
        config.tol = 1e-12;
        let fit = fit_em(&data, &config).unwrap();
        for w in fit.trace.windows(2) {
            if w[1] < w[0] - EM_TRACE_SLACK * w[0].abs() {
                failures += 1;
                break;
            }
        }
    }
    report(
        5,
        failures == 0,
        &format!("log-likelihood nondecreasing (slack {EM_TRACE_SLACK:.0e}·|ll|) on 100 instances; {failures} failures"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: oracle equivalences on ≥ 50 seeded instances each.
// ---------------------------------------------------------------------------

fn random_tucker(rng: &mut ChaCha8Rng, dims: &[usize], latent: &[usize]) -> TuckerFactors {
    TuckerFactors::new(
        dims.iter()
            .zip(latent)
            .map(|(&n, &m)| {
                DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
            })
            .collect(),
    )
    .unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> DenseTensor {
    let shape = Shape::new(dims.to_vec()).unwrap();
    let data = (0..shape.len())
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    DenseTensor::new(shape, data).unwrap()
}

/// Entry ((i),(j)) of the Tucker map matrix is Π_k A_k[i_k, j_k].
fn naive_tucker_mat(f: &TuckerFactors) -> DMatrix<f64> {
    let out_shape = f.output_shape();
    let in_shape = f.input_shape();
    DMatrix::from_fn(out_shape.len(), in_shape.len(), |row, col| {
        let i = out_shape.colex_unrank(row + 1).unwrap();
        let j = in_shape.colex_unrank(col + 1).unwrap();
        f.factors()
            .iter()
            .enumerate()
            .map(|(k, a)| a[(i[k] - 1, j[k] - 1)])
            .product()
    })
}

#[test]
fn criterion_06_oracle_equivalences() {
    let cases: [(&[usize], &[usize]); 3] = [
        (&[3, 4], &[2, 2]),
        (&[4, 3, 2], &[2, 2, 1]),
        (&[3, 3, 3], &[2, 1, 2]),
    ];
    let mut worst: [f64; 5] = [0.0; 5];
    for i in 0..50u64 {
        let (dims, latent) = cases[(i % 3) as usize];
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + i);
        let f = random_tucker(&mut rng, dims, latent);
        let mat = f.mat();
        let naive_mat = naive_tucker_mat(&f);

        // (a) tucker_apply vs naive entry loops (through the naive matrix).
        let t = random_tensor(&mut rng, latent);
        let fast = f.apply(&t, false).unwrap().to_vector();
        let slow = &naive_mat * t.to_vector();
        worst[0] = worst[0].max((&fast - &slow).norm() / slow.norm().max(1.0));

        // (b) mat vs the product formula and vs basis images.
        worst[1] = worst[1].max((&mat - &naive_mat).norm() / naive_mat.norm());
        let in_shape = f.input_shape();
        for col in (0..in_shape.len()).step_by(3) {
            let mut e = DenseTensor::zeros(in_shape.clone());
            e.data_mut()[col] = 1.0;
            let image = f.apply(&e, false).unwrap().to_vector();
            worst[1] = worst[1].max((mat.column(col) - image).norm());
        }

        // (c) log-likelihood vs the dense Gaussian density.
        let truth = generate_truth(dims, latent, 0.3 + 0.1 * (i % 4) as f64, 7100 + i).unwrap();
        let data = truth.sample(6, 7200 + i).unwrap();
        let ll = truth.log_likelihood(&data).unwrap();
        let sigma = truth.covariance_dense().unwrap();
        let chol = sigma.clone().cholesky().unwrap();
        let logdet = 2.0 * (0..sigma.nrows()).map(|d| chol.l()[(d, d)].ln()).sum::<f64>();
        let mean = truth.mean_tensor().unwrap().to_vector();
        let n = sigma.nrows() as f64;
        let mut dense = 0.0;
        for x in data.samples() {
            let d = x.to_vector() - &mean;
            let q = d.dot(&chol.solve(&d));
            dense += -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + q);
        }
        worst[2] = worst[2].max((ll - dense).abs() / dense.abs());

        // (d) fast vs naive power contraction.
        let config = PowerConfig::random(1, latent.to_vec(), 7300 + i);
        let state = init_power(&data, &config).unwrap();
        for k in 0..dims.len() {
            let fast = power_step_tilde_path(&data, &state, k, PowerPath::Fast).unwrap();
            let naive =
                power_step_tilde_path(&data, &state, k, PowerPath::Naive { cap: 1 << 22 }).unwrap();
            worst[3] = worst[3].max((&fast - &naive).norm() / naive.norm());
        }

        // (e) covariance spectrum vs a dense eigensolver.
        let spec = truth.covariance_spectrum().unwrap();
        let (dense_vals, _) = sym_eig_desc(&sigma);
        let diff = spec
            .eigenvalues
            .iter()
            .zip(&dense_vals)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst[4] = worst[4].max(diff / dense_vals[0]);
    }
    let tols = [1e-12, 1e-12, 1e-9, 1e-10, 1e-11];
    let pass = worst.iter().zip(&tols).all(|(w, t)| w <= t);
    report(
        6,
        pass,
        &format!(
            "50 instances each; worst rel. deviations: apply {:.1e}, mat {:.1e}, log-lik {:.1e}, power step {:.1e}, spectrum {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: deterministic one-step bounds hold on every feasible instance.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_one_step_bounds() {
    let (dims, latent) = ([6usize, 6, 6], [2usize, 2, 2]);
    let (m, r) = (8usize, 3usize);
    let sigma2 = 0.25;
    let mut feasible = 0;
    let mut violations = 0;
    for seed in 0..50u64 {
        let truth = generate_truth(&dims, &latent, sigma2, 1000 + seed).unwrap();
        let data = truth.sample(2000, 5000 + seed).unwrap();

        // ψ = σ² + ‖S_N − Σ‖₂ dominates the multilinear deviation norm.
        let n = data.shape().len();
        let mut s = DMatrix::<f64>::zeros(n, n);
        for x in data.samples() {
            let v = x.to_vector();
            s.gemm(1.0 / data.len() as f64, &v, &v.transpose(), 1.0);
        }
        let sigma = truth.covariance_dense().unwrap();
        let psi = sigma2 + (&s - &sigma).svd(false, false).singular_values[0];
        let omega: f64 = truth
            .factors()
            .factors()
            .iter()
            .map(|a| (a * a.transpose()).norm())
            .product();

        let mut config = PowerConfig::random(1, latent.to_vec(), seed);
        config.init = PowerInit::Hosvd;
        let state0 = init_power(&data, &config).unwrap();
        let dirs = true_directions(truth.factors());
        let tau = state0
            .iterates()
            .iter()
            .zip(&dirs)
            .map(|(b, d)| {
                sin_theta(
                    &DVector::from_column_slice(b.as_slice()),
                    &DVector::from_column_slice(d.as_slice()),
                )
                .unwrap()
            })
            .fold(0.0f64, f64::max);

        let ti = tau_interval(psi / omega, m, r, 1e-10).unwrap();
        if !(ti.feasible && ti.tau1.map_or(false, |t1| tau < t1)) {
            continue;
        }
        feasible += 1;
        let (f1, f2) = one_step_bounds(psi, omega, tau, m, r).unwrap();
        let (state, est) = run_power(&data, &config, Some(truth.factors())).unwrap();
        let sin1 = state.sin_trace()[0].iter().fold(0.0f64, |a, &b| a.max(b));
        let rel_omega = (omega - est.omega_hat).abs() / omega;
        if sin1 > f1 || rel_omega > f2 {
            violations += 1;
        }
    }
    report(
        7,
        violations == 0 && feasible > 0,
        &format!("{feasible}/50 instances feasible; one-step angle and ω̂ bounds violated on {violations}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: τ₀ asymptote and root accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_diagnostics_crosscheck() {
    let mut worst_rel = 0.0f64;
    let mut worst_g = 0.0f64;
    for &(m, r) in &[(8usize, 3usize), (4, 2)] {
        for &ratio in &[1e-4, 1e-5, 1e-6] {
            let ti = tau_interval(ratio, m, r, 1e-12).unwrap();
            let tau0 = ti.tau0.unwrap();
            let tau1 = ti.tau1.unwrap();
            let asymptote = 4.0 * (2.0 * m as f64).sqrt() * ratio;
            worst_rel = worst_rel.max((tau0 - asymptote).abs() / asymptote);
            worst_g = worst_g
                .max(g_function(tau0, ratio, m, r).abs())
                .max(g_function(tau1, ratio, m, r).abs());
        }
    }
    let pass = worst_rel < 0.01 && worst_g < 1e-12;
    report(
        8,
        pass,
        &format!("τ₀ within {:.3}% of 4√(2m)ψ/ω (limit 1%); |g(roots)| ≤ {worst_g:.1e} < 1e-12", worst_rel * 100.0),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: single-sample fit keeps σ² above the truncation residual.
// ---------------------------------------------------------------------------

/// Distance to the rank-`ranks` variety, estimated by truncated mode-Gram
/// eigenvector subspaces refined with alternating subspace sweeps. The plain
/// truncation residual can overshoot the true distance by up to ~30% on a
/// single noise-dominated sample, which would make the 5%-slack floor check
/// fail for reasons unrelated to the fitted model; a few refinement sweeps
/// close that gap while the estimate stays an upper bound on the distance
/// (so the assertion below is still at least as strong as σ̂² ≥ dist²/n).
fn refined_variety_residual(x: &DenseTensor, ranks: &[usize], sweeps: usize) -> f64 {
    let (mut f, _) = tpca::tensor::hosvd(x, ranks).unwrap();
    let r = ranks.len();
    for _ in 0..sweeps {
        for k in 0..r {
            let mut partial: Vec<DMatrix<f64>> = f.factors().to_vec();
            partial[k] = DMatrix::identity(x.shape().dims()[k], x.shape().dims()[k]);
            let pf = TuckerFactors::new(partial).unwrap();
            let y = pf.apply(x, true).unwrap();
            let unfold = y.mode_matricize(k + 1).unwrap();
            let gram = &unfold * unfold.transpose();
            let (_, vecs) = sym_eig_desc(&gram);
            let mut fs = f.factors().to_vec();
            fs[k] = vecs.columns(0, ranks[k]).into_owned();
            f = TuckerFactors::new(fs).unwrap();
        }
    }
    let core = f.apply(x, true).unwrap();
    let recon = f.apply(&core, false).unwrap();
    let mut diff = x.clone();
    diff.axpy(-1.0, &recon).unwrap();
    diff.frobenius()
}

#[test]
fn criterion_09_single_sample_floor() {
    let dims = [6usize, 3, 3];
    let latent = [5usize, 2, 2];
    let n = 54.0;
    let (variety_ranks, _) = tucker_variety_dim(&dims, &latent).unwrap();
    let mut worst_ratio = f64::INFINITY;
    let mut pass = true;
    for seed in 0..20u64 {
        let truth = generate_truth(&dims, &latent, 1.0, 40 + seed).unwrap();
        let data = truth.sample(1, 80 + seed).unwrap();
        let residual = refined_variety_residual(&data.samples()[0], &variety_ranks, 10);
        let floor = residual * residual / n;
        let mut config = EmConfig::hosvd(latent.to_vec());
        config.sigma2_init = Sigma2Init::Residual;
        config.tol = 1e-8;
        let fit = fit_em(&data, &config).unwrap();
        let ratio = fit.model.sigma2() / floor;
        worst_ratio = worst_ratio.min(ratio);
        pass &= fit.model.sigma2() >= 0.95 * floor;
    }
    report(
        9,
        pass,
        &format!("N=1 fitted σ² ≥ 0.95·(variety residual)²/n on 20 seeds; worst σ̂²/floor = {worst_ratio:.3}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: byte-identical experiment output across runs and thread counts.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    let spec = ExperimentSpec {
        name: "det".into(),
        grid: vec![
            GridPoint {
                dims: vec![5, 4, 3],
                latent_dims: vec![2, 2, 1],
                sigma2: 0.5,
                n_samples: 12,
                iterations: 4,
                seed_group: None,
            },
            GridPoint {
                dims: vec![6, 6],
                latent_dims: vec![3, 2],
                sigma2: 2.0,
                n_samples: 10,
                iterations: 4,
                seed_group: None,
            },
        ],
        replications: 5,
        master_seed: 17,
        estimator: Estimator::Both,
        record_timings: false,
    };
    let baseline = records_to_csv(&run_experiment(&spec).unwrap().records).unwrap();
    let rerun = records_to_csv(&run_experiment(&spec).unwrap().records).unwrap();
    let mut pass = baseline == rerun;
    for threads in [1usize, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let csv = pool
            .install(|| records_to_csv(&run_experiment(&spec).unwrap().records))
            .unwrap();
        pass &= csv == baseline;
    }
    report(
        10,
        pass,
        &format!(
            "{}-record CSV byte-identical across two runs and thread counts {{1, 4}}",
            baseline.lines().count() - 1
        ),
    );
}
