//! Conditional inference on S_A given the per-institution treatment counts.
//!
//! The joint vector (S_A, n_A) is approximately (K+1)-variate normal with
//! block-additive moments; conditioning on the observed counts gives
//!
//!   E[S_A | n_A]   = mean_S + cov' V^- (n_A - N_./2)
//!   Var(S_A | n_A) = var_S  - cov' V^- cov
//!
//! where V = aggregated Var(n_A) and V^- its Moore-Penrose pseudoinverse.
//! V is always singular (its rows sum to zero), so a plain inverse is never
//! attempted.

use nalgebra::{DMatrix, DVector};

use crate::design::TrialData;
use crate::error::{Error, Result};
use crate::moments::{self, JointMoments, TestMode, TestResult};
use crate::scores::{compute_scores, ScoreKind, ScoreVector};

/// Conditional mean/variance of S_A given the observed counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub cond_mean: f64,
    pub cond_var: f64,
    pub rank_var_n: usize,
    pub deviation_vector: DVector<f64>,
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix via SVD. Singular
/// values below `tol * sigma_max` are treated as zero; `tol` defaults to
/// `dim * machine-epsilon`.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: Option<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Numeric(format!(
            "pseudoinverse expects a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let sym_tol = 1e-10 * scale.max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > sym_tol {
                return Err(Error::Numeric(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    let rel_tol = tol.unwrap_or(m.nrows() as f64 * f64::EPSILON);
    let (evals, q) = jacobi_eigen(m);
    let sigma_max = evals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if sigma_max == 0.0 {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let cutoff = rel_tol * sigma_max;
    let mut inv_s = DVector::<f64>::zeros(m.nrows());
    for (i, &s) in evals.iter().enumerate() {
        if s > cutoff {
            inv_s[i] = 1.0 / s;
        }
    }
    let p = &q * DMatrix::from_diagonal(&inv_s) * q.transpose();
    // symmetrize away last-bit asymmetry from the matrix products
    Ok(0.5 * (&p + p.transpose()))
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: returns
/// (eigenvalues, orthogonal eigenvector matrix) with A = Q diag(w) Q'.
/// Chosen over library SVD/eigen routines, which proved inaccurate on the
/// near-singular count covariance matrices this module feeds in.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    let frob = m.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = a[(i, j)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                // rotation angle from the 2x2 subproblem
                let theta = (a[(j, j)] - a[(i, i)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let aik = a[(i, k)];
                    let ajk = a[(j, k)];
                    a[(i, k)] = c * aik - s * ajk;
                    a[(j, k)] = s * aik + c * ajk;
                }
                for k in 0..n {
                    let aki = a[(k, i)];
                    let akj = a[(k, j)];
                    a[(k, i)] = c * aki - s * akj;
                    a[(k, j)] = s * aki + c * akj;
                }
                for k in 0..n {
                    let qki = q[(k, i)];
                    let qkj = q[(k, j)];
                    q[(k, i)] = c * qki - s * qkj;
                    q[(k, j)] = s * qki + c * qkj;
                }
            }
        }
    }
    (a.diagonal(), q)
}

/// Numerical rank used by the pseudoinverse cutoff.
pub fn psd_rank(m: &DMatrix<f64>, tol: Option<f64>) -> usize {
    let (evals, _) = jacobi_eigen(m);
    let sigma_max = evals.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if sigma_max == 0.0 {
        return 0;
    }
    let rel_tol = tol.unwrap_or(m.nrows() as f64 * f64::EPSILON);
    evals.iter().filter(|&&s| s > rel_tol * sigma_max).count()
}

/// Condition the aggregated joint moments on an observed count vector n_A.
pub fn conditional_moments(agg: &JointMoments, n_a: &[f64]) -> Result<ConditionalMoments> {
    let k = agg.mean_n.len();
    if n_a.len() != k {
        return Err(Error::InvalidData(format!(
            "count vector has {} entries, expected K = {k}",
            n_a.len()
        )));
    }
    let dev = DVector::from_iterator(k, n_a.iter().zip(agg.mean_n.iter()).map(|(o, m)| o - m));
    let v = &agg.var_n;
    let v_pinv = pseudo_inverse(v, None)?;

    // The normal conditioning only makes sense for count vectors inside the
    // column space of V; anything else is an impossible observation.
    let dev_norm = dev.norm();
    if dev_norm > 0.0 {
        let projected = v * (&v_pinv * &dev);
        let resid = (&projected - &dev).norm();
        if resid > 1e-6 * dev_norm {
            return Err(Error::InvalidData(format!(
                "observed counts are inconsistent with the design (residual {resid:.3e} \
                 outside the column space of Var(n_A))"
            )));
        }
    }

    let adj = (&v_pinv * &agg.cov_sn).dot(&agg.cov_sn);
    let cond_mean = agg.mean_s + (&v_pinv * &dev).dot(&agg.cov_sn);
    let mut cond_var = agg.var_s - adj;
    if cond_var < 0.0 {
        if cond_var < -1e-8 * agg.var_s.max(1e-300) {
            return Err(Error::Numeric(format!(
                "conditional variance {cond_var} fell below zero (var_S = {})",
                agg.var_s
            )));
        }
        cond_var = 0.0;
    }
    Ok(ConditionalMoments {
        cond_mean,
        cond_var,
        rank_var_n: psd_rank(v, None),
        deviation_vector: dev,
    })
}

/// The conditional randomization test on already-computed scores.
pub fn conditional_test_scored(data: &TrialData, scores: &ScoreVector) -> Result<TestResult> {
    let counts = crate::design::tabulate_counts(data)?;
    let agg = moments::joint_moments(data, scores)?;
    let n_a: Vec<f64> = counts.n_ka.iter().map(|&c| c as f64).collect();
    let cm = conditional_moments(&agg, &n_a)?;
    let s_a = moments::observed_s_a(data, scores)?;
    let np = data.design.num_patients() as f64;
    let effect_d = 2.0 / np * (2.0 * s_a - agg.total_s);
    moments::finish_test(s_a, cm.cond_mean, cm.cond_var, agg.total_s, effect_d, TestMode::Conditional)
}

/// Full pipeline: tabulate, score, aggregate moments, condition, test.
pub fn conditional_test(data: &TrialData, score_kind: ScoreKind) -> Result<TestResult> {
    let scores = compute_scores(data, score_kind)?;
    conditional_test_scored(data, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{randomize_trial, Arm, Outcome, PatientRecord, TrialDesign};
    use crate::moments::unconditional_test;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn penrose_residual(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let scale = m.iter().fold(1e-300f64, |a, v| a.max(v.abs()))
            .max(p.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let r1 = (m * p * m - m).norm() / scale;
        let r2 = (p * m * p - p).norm() / scale;
        let r3 = ((m * p).transpose() - m * p).norm() / scale;
        let r4 = ((p * m).transpose() - p * m).norm() / scale;
        r1.max(r2).max(r3).max(r4)
    }

    #[test]
    fn pinv_identity_and_zero() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(pseudo_inverse(&id, None).unwrap(), id, epsilon = 1e-12);
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(pseudo_inverse(&z, None).unwrap(), z);
    }

    #[test]
    fn pinv_rank_one_contrast() {
        // [[1,-1],[-1,1]]+ = (1/4)[[1,-1],[-1,1]]
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let p = pseudo_inverse(&m, None).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert_relative_eq!(p, want, epsilon = 1e-12);
        assert!(penrose_residual(&m, &p) < 1e-12);
    }

    #[test]
    fn pinv_rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(pseudo_inverse(&m, None).is_err());
    }

    fn scored_trial(
        n: usize,
        p: usize,
        k: usize,
        labels: &[usize],
        ys: &[f64],
        seed: u64,
    ) -> TrialData {
        let design = TrialDesign::new(n, p, k).unwrap();
        let outcomes: Vec<Outcome> = ys.iter().map(|&y| Outcome::Continuous(y)).collect();
        randomize_trial(design, labels, &outcomes, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn single_institution_conditioning_is_vacuous() {
        let ys: Vec<f64> = (0..8).map(|i| i as f64 * 0.7 - 2.0).collect();
        let data = scored_trial(4, 2, 1, &[0; 8], &ys, 11);
        let sv = compute_scores(&data, ScoreKind::Identity).unwrap();
        let cond = conditional_test_scored(&data, &sv).unwrap();
        let uncond = unconditional_test(&data, &sv).unwrap();
        assert_relative_eq!(cond.mean, uncond.mean, epsilon = 1e-10);
        assert_relative_eq!(cond.variance, uncond.variance, epsilon = 1e-10);
        assert_relative_eq!(cond.z, uncond.z, epsilon = 1e-10);
    }

    #[test]
    fn blocks_wholly_in_one_institution_vacuous() {
        // Each block comes from a single institution: counts are determined
        // by the design, Var(n_A) annihilates the (zero) deviation.
        let labels = [0, 0, 0, 0, 1, 1, 1, 1];
        let ys: Vec<f64> = (0..8).map(|i| (i as f64).sin() * 3.0).collect();
        let data = scored_trial(4, 2, 2, &labels, &ys, 12);
        let sv = compute_scores(&data, ScoreKind::Identity).unwrap();
        let cond = conditional_test_scored(&data, &sv).unwrap();
        let uncond = unconditional_test(&data, &sv).unwrap();
        assert_relative_eq!(cond.variance, uncond.variance, epsilon = 1e-10);
        assert_relative_eq!(cond.mean, uncond.mean, epsilon = 1e-10);
    }

    #[test]
    fn conditioning_never_increases_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..50 {
            use rand::Rng;
            let labels: Vec<usize> = (0..12).map(|_| rng.gen_range(0..3)).collect();
            let ys: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let data = scored_trial(4, 3, 3, &labels, &ys, 100 + trial);
            let sv = compute_scores(&data, ScoreKind::Identity).unwrap();
            let cond = conditional_test_scored(&data, &sv).unwrap();
            let uncond = unconditional_test(&data, &sv).unwrap();
            assert!(cond.variance <= uncond.variance + 1e-10);
        }
    }

    #[test]
    fn institution_relabeling_permutes_deviation_only() {
        let labels = [0usize, 1, 0, 1, 1, 0, 1, 0];
        let ys: Vec<f64> = (0..8).map(|i| i as f64 * 1.3).collect();
        let data = scored_trial(4, 2, 2, &labels, &ys, 14);
        let sv = compute_scores(&data, ScoreKind::Identity).unwrap();
        let agg = moments::joint_moments(&data, &sv).unwrap();
        let counts = crate::design::tabulate_counts(&data).unwrap();
        let n_a: Vec<f64> = counts.n_ka.iter().map(|&c| c as f64).collect();
        let cm = conditional_moments(&agg, &n_a).unwrap();

        // swap institution labels 0 <-> 1
        let mut swapped = data.clone();
        for r in &mut swapped.records {
            r.institution = 1 - r.institution;
        }
        let sv2 = compute_scores(&swapped, ScoreKind::Identity).unwrap();
        let agg2 = moments::joint_moments(&swapped, &sv2).unwrap();
        let counts2 = crate::design::tabulate_counts(&swapped).unwrap();
        let n_a2: Vec<f64> = counts2.n_ka.iter().map(|&c| c as f64).collect();
        let cm2 = conditional_moments(&agg2, &n_a2).unwrap();

        assert_relative_eq!(cm.cond_mean, cm2.cond_mean, epsilon = 1e-10);
        assert_relative_eq!(cm.cond_var, cm2.cond_var, epsilon = 1e-10);
        assert_relative_eq!(cm.deviation_vector[0], cm2.deviation_vector[1], epsilon = 1e-10);
        assert_relative_eq!(cm.deviation_vector[1], cm2.deviation_vector[0], epsilon = 1e-10);
    }

    #[test]
    fn arm_swap_flips_z() {
        let labels = [0usize, 1, 1, 0, 0, 1, 0, 1];
        let ys: Vec<f64> = (0..8).map(|i| (i * i) as f64 * 0.1).collect();
        let data = scored_trial(4, 2, 2, &labels, &ys, 15);
        let flipped = data.with_flipped_arms();
        let t1 = conditional_test(&data, ScoreKind::Identity).unwrap();
        let t2 = conditional_test(&flipped, ScoreKind::Identity).unwrap();
        assert_relative_eq!(t1.z, -t2.z, epsilon = 1e-9);
        assert_relative_eq!(t1.p_two_sided, t2.p_two_sided, epsilon = 1e-9);
    }

    #[test]
    fn identical_outcomes_p_is_one() {
        let design = TrialDesign::new(4, 2, 2).unwrap();
        let records = (0..8)
            .map(|i| PatientRecord {
                institution: i % 2,
                arm: Some(if i % 4 < 2 { Arm::A } else { Arm::B }),
                outcome: Outcome::Continuous(3.0),
            })
            .collect();
        let data = TrialData::new(design, records).unwrap();
        let t = conditional_test(&data, ScoreKind::Identity).unwrap();
        assert_eq!(t.p_two_sided, 1.0);
    }

    #[test]
    fn inconsistent_counts_rejected() {
        let labels = [0usize, 1, 0, 1, 0, 1, 0, 1];
        let ys: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let data = scored_trial(4, 2, 2, &labels, &ys, 16);
        let sv = compute_scores(&data, ScoreKind::Identity).unwrap();
        let agg = moments::joint_moments(&data, &sv).unwrap();
        // deviation (1, 1) has nonzero sum: impossible since counts must sum
        // to NP/2
        let bad = vec![agg.mean_n[0] + 1.0, agg.mean_n[1] + 1.0];
        assert!(conditional_moments(&agg, &bad).is_err());
    }
}
