//! Exact multivariate Gaussian KL arithmetic and informed-prior sample
//! savings.
//!
//! The generalization-bound argument for multi-scale learning says the
//! number of samples needed at the upper level scales with the KL divergence
//! between the target policy distribution and the prior. Centering the prior
//! on parameters already learned at the lower level shrinks that divergence;
//! this module computes the exact KL values and the implied sample counts,
//! including the standard worked example (49 of 50 parameters pre-learned,
//! uninformed prior variance 200, coefficient 5000): a 98.0% reduction in
//! upper-level samples, or 88.2% after charging the lower-level samples at a
//! 10x faster timescale.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PacBayesError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("coefficient must be > 0, got {0}")]
    InvalidCoefficient(f64),
}

/// Covariance of a Gaussian policy distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `variance * I`.
    Isotropic(f64),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// Full symmetric matrix, row-major `d x d`.
    Full(Vec<f64>),
}

/// A Gaussian over policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

impl GaussianSpec {
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Self {
        Self {
            mean,
            covariance: Covariance::Isotropic(variance),
        }
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Self {
        assert_eq!(mean.len(), variances.len());
        Self {
            mean,
            covariance: Covariance::Diagonal(variances),
        }
    }

    pub fn full(mean: Vec<f64>, matrix: Vec<f64>) -> Self {
        assert_eq!(mean.len() * mean.len(), matrix.len());
        Self {
            mean,
            covariance: Covariance::Full(matrix),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn validate(&self) -> Result<(), PacBayesError> {
        let d = self.dim();
        match &self.covariance {
            Covariance::Isotropic(v) => {
                if !(*v > 0.0) {
                    return Err(PacBayesError::NotPositiveDefinite);
                }
            }
            Covariance::Diagonal(vs) => {
                if vs.len() != d {
                    return Err(PacBayesError::DimensionMismatch(vs.len(), d));
                }
                if vs.iter().any(|v| !(*v > 0.0)) {
                    return Err(PacBayesError::NotPositiveDefinite);
                }
            }
            Covariance::Full(m) => {
                if m.len() != d * d {
                    return Err(PacBayesError::DimensionMismatch(m.len(), d * d));
                }
                cholesky(m, d)?;
            }
        }
        Ok(())
    }

    fn diagonal_variances(&self) -> Option<Vec<f64>> {
        match &self.covariance {
            Covariance::Isotropic(v) => Some(vec![*v; self.dim()]),
            Covariance::Diagonal(vs) => Some(vs.clone()),
            Covariance::Full(_) => None,
        }
    }

    fn full_matrix(&self) -> Vec<f64> {
        let d = self.dim();
        match &self.covariance {
            Covariance::Full(m) => m.clone(),
            _ => {
                let vs = self.diagonal_variances().unwrap();
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    m[i * d + i] = vs[i];
                }
                m
            }
        }
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(matrix: &[f64], d: usize) -> Result<Vec<f64>, PacBayesError> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = matrix[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(PacBayesError::NotPositiveDefinite);
                }
                l[i * d + i] = libm::sqrt(sum);
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Solve `L y = b` (forward substitution).
fn solve_lower(l: &[f64], d: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * y[k];
        }
        y[i] = sum / l[i * d + i];
    }
    y
}

fn log_det_from_cholesky(l: &[f64], d: usize) -> f64 {
    (0..d).map(|i| 2.0 * libm::log(l[i * d + i])).sum()
}

/// Exact KL divergence between multivariate Gaussians:
/// `KL(Q || P) = 0.5 [ log|S_p|/|S_q| - d + tr(S_p^-1 S_q) + (m_p - m_q)^T S_p^-1 (m_p - m_q) ]`.
///
/// Diagonal and isotropic covariances use closed-form per-dimension sums;
/// full matrices go through a Cholesky factorization (which doubles as the
/// positive-definiteness check).
pub fn gaussian_kl(q: &GaussianSpec, p: &GaussianSpec) -> Result<f64, PacBayesError> {
    let d = q.dim();
    if p.dim() != d {
        return Err(PacBayesError::DimensionMismatch(d, p.dim()));
    }
    q.validate()?;
    p.validate()?;
    let diff: Vec<f64> = p.mean.iter().zip(q.mean.iter()).map(|(a, b)| a - b).collect();
    match (q.diagonal_variances(), p.diagonal_variances()) {
        (Some(qv), Some(pv)) => {
            let mut log_det = 0.0;
            let mut trace = 0.0;
            let mut mahal = 0.0;
            for i in 0..d {
                log_det += libm::log(pv[i] / qv[i]);
                trace += qv[i] / pv[i];
                mahal += diff[i] * diff[i] / pv[i];
            }
            Ok(0.5 * (log_det - d as f64 + trace + mahal))
        }
        _ => {
            let qm = q.full_matrix();
            let pm = p.full_matrix();
            let lq = cholesky(&qm, d)?;
            let lp = cholesky(&pm, d)?;
            let log_det = log_det_from_cholesky(&lp, d) - log_det_from_cholesky(&lq, d);
            // tr(P^-1 Q) = sum of squares of L_p^-1 L_q.
            let mut trace = 0.0;
            for col in 0..d {
                let b: Vec<f64> = (0..d).map(|r| lq[r * d + col]).collect();
                let y = solve_lower(&lp, d, &b);
                trace += y.iter().map(|v| v * v).sum::<f64>();
            }
            let z = solve_lower(&lp, d, &diff);
            let mahal: f64 = z.iter().map(|v| v * v).sum();
            Ok(0.5 * (log_det - d as f64 + trace + mahal))
        }
    }
}

/// Squared Mahalanobis distance `(a - b)^T S^-1 (a - b)`.
pub fn mahalanobis_sq(a: &[f64], b: &[f64], cov: &Covariance) -> Result<f64, PacBayesError> {
    if a.len() != b.len() {
        return Err(PacBayesError::DimensionMismatch(a.len(), b.len()));
    }
    let d = a.len();
    let diff: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    match cov {
        Covariance::Isotropic(v) => {
            if !(*v > 0.0) {
                return Err(PacBayesError::NotPositiveDefinite);
            }
            Ok(diff.iter().map(|x| x * x).sum::<f64>() / v)
        }
        Covariance::Diagonal(vs) => {
            if vs.len() != d {
                return Err(PacBayesError::DimensionMismatch(vs.len(), d));
            }
            if vs.iter().any(|v| !(*v > 0.0)) {
                return Err(PacBayesError::NotPositiveDefinite);
            }
            Ok(diff.iter().zip(vs.iter()).map(|(x, v)| x * x / v).sum())
        }
        Covariance::Full(m) => {
            if m.len() != d * d {
                return Err(PacBayesError::DimensionMismatch(m.len(), d * d));
            }
            let l = cholesky(m, d)?;
            let z = solve_lower(&l, d, &diff);
            Ok(z.iter().map(|v| v * v).sum())
        }
    }
}

/// Sample counts and savings from replacing an uninformed prior with an
/// informed one.
#[derive(Debug, Clone, PartialEq)]
pub struct SavingsReport {
    /// Samples needed under the uninformed prior: `c * KL(Q || P0)`.
    pub n_uninformed: f64,
    /// Samples needed under the informed prior: `c * KL(Q || P_L1)`.
    pub n_informed: f64,
    pub absolute_savings: f64,
    pub relative_savings: f64,
    /// Exact shared-covariance identity `c * 0.5 * (|mq - m0|_M - |mq - m1|_M)`;
    /// present only when both priors share one covariance.
    pub mahalanobis_form: Option<f64>,
}

/// Compute the sample savings `n0 - n_L2` and its relative version for a
/// target distribution `q`, uninformed prior `p0`, informed prior `p_l1`,
/// and bound coefficient `c` (samples per unit KL).
pub fn sample_savings(
    q: &GaussianSpec,
    p0: &GaussianSpec,
    p_l1: &GaussianSpec,
    c: f64,
) -> Result<SavingsReport, PacBayesError> {
    if !(c > 0.0) {
        return Err(PacBayesError::InvalidCoefficient(c));
    }
    let kl0 = gaussian_kl(q, p0)?;
    let kl1 = gaussian_kl(q, p_l1)?;
    let n_uninformed = c * kl0;
    let n_informed = c * kl1;
    let absolute = n_uninformed - n_informed;
    let mahalanobis_form = if p0.covariance == p_l1.covariance {
        let m0 = mahalanobis_sq(&q.mean, &p0.mean, &p0.covariance)?;
        let m1 = mahalanobis_sq(&q.mean, &p_l1.mean, &p_l1.covariance)?;
        Some(c * 0.5 * (m0 - m1))
    } else {
        None
    };
    Ok(SavingsReport {
        n_uninformed,
        n_informed,
        absolute_savings: absolute,
        relative_savings: absolute / n_uninformed,
        mahalanobis_form,
    })
}

/// The worked numerical example, fully pinned:
/// `d = 50`, uninformed prior variance 200, target variance 1, informed
/// prior with 49 dimensions pre-learned at variance 1, coefficient 5000,
/// lower-level samples charged at a timescale ratio of 10.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericalExampleReport {
    pub dim: usize,
    pub coefficient: f64,
    pub timescale_ratio: f64,
    pub kl_uninformed: f64,
    pub kl_informed: f64,
    pub kl_micro_posterior: f64,
    pub n_uninformed: f64,
    pub n_informed: f64,
    pub n_micro: f64,
    /// `(n0 - n_L2) / n0`.
    pub reduction: f64,
    /// `(n0 - n_L2 - n_L1 / T) / n0`.
    pub reduction_with_micro_cost: f64,
}

pub const EXAMPLE_DIM: usize = 50;
pub const EXAMPLE_PRELEARNED: usize = 49;
pub const EXAMPLE_UNINFORMED_VARIANCE: f64 = 200.0;
pub const EXAMPLE_TARGET_VARIANCE: f64 = 1.0;
pub const EXAMPLE_COEFFICIENT: f64 = 5.0e3;
pub const EXAMPLE_TIMESCALE: f64 = 10.0;

/// Build and evaluate the pinned numerical example.
///
/// Target and prior means coincide (the worked arithmetic carries no
/// distance terms). The informed prior pre-learns 49 of 50 parameters at the
/// target variance; the micro-posterior used to charge lower-level samples
/// is the mirrored construction (49 learned dimensions, 1 uninformed).
pub fn reproduce_numerical_example() -> NumericalExampleReport {
    reproduce_numerical_example_with(EXAMPLE_COEFFICIENT, EXAMPLE_TIMESCALE)
}

/// Same construction with a caller-supplied coefficient and timescale ratio.
pub fn reproduce_numerical_example_with(
    coefficient: f64,
    timescale_ratio: f64,
) -> NumericalExampleReport {
    let d = EXAMPLE_DIM;
    let mean = vec![0.0; d];
    let q = GaussianSpec::isotropic(mean.clone(), EXAMPLE_TARGET_VARIANCE);
    let p0 = GaussianSpec::isotropic(mean.clone(), EXAMPLE_UNINFORMED_VARIANCE);
    // Informed prior: 49 dimensions already at the target variance, one
    // still uninformed.
    let mut informed_vars = vec![EXAMPLE_TARGET_VARIANCE; d];
    informed_vars[d - 1] = EXAMPLE_UNINFORMED_VARIANCE;
    let p_l1 = GaussianSpec::diagonal(mean.clone(), informed_vars.clone());
    // Micro posterior: what the lower level actually learned (the same 49
    // dimensions), measured against the uninformed prior to price its data.
    let q_l1 = GaussianSpec::diagonal(mean, informed_vars);

    let kl_uninformed = gaussian_kl(&q, &p0).unwrap();
    let kl_informed = gaussian_kl(&q, &p_l1).unwrap();
    let kl_micro_posterior = gaussian_kl(&q_l1, &p0).unwrap();

    let n_uninformed = coefficient * kl_uninformed;
    let n_informed = coefficient * kl_informed;
    let n_micro = coefficient * kl_micro_posterior;
    let reduction = (n_uninformed - n_informed) / n_uninformed;
    let reduction_with_micro_cost =
        (n_uninformed - n_informed - n_micro / timescale_ratio) / n_uninformed;
    NumericalExampleReport {
        dim: d,
        coefficient,
        timescale_ratio,
        kl_uninformed,
        kl_informed,
        kl_micro_posterior,
        n_uninformed,
        n_informed,
        n_micro,
        reduction,
        reduction_with_micro_cost,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let g = GaussianSpec::isotropic(vec![0.3, -0.7], 2.5);
        assert!(gaussian_kl(&g, &g).unwrap().abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // Equal unit variances, means 0 and 2: KL = 0.5 * 2^2 = 2.
        let q = GaussianSpec::isotropic(vec![0.0], 1.0);
        let p = GaussianSpec::isotropic(vec![2.0], 1.0);
        assert!((gaussian_kl(&q, &p).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn isotropic_50d_closed_form() {
        // d=50, sigma_q = 1, sigma_p = 200, equal means:
        // KL = 0.5 * 50 * (ln 200 - 1 + 1/200).
        let q = GaussianSpec::isotropic(vec![0.0; 50], 1.0);
        let p = GaussianSpec::isotropic(vec![0.0; 50], 200.0);
        let want = 0.5 * 50.0 * (libm::log(200.0) - 1.0 + 1.0 / 200.0);
        let got = gaussian_kl(&q, &p).unwrap();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn kl_is_asymmetric_on_an_asymmetric_instance() {
        let q = GaussianSpec::isotropic(vec![0.0], 1.0);
        let p = GaussianSpec::isotropic(vec![0.0], 4.0);
        let forward = gaussian_kl(&q, &p).unwrap();
        let backward = gaussian_kl(&p, &q).unwrap();
        assert!((forward - backward).abs() > 0.1);
    }

    #[test]
    fn mahalanobis_closed_forms() {
        let a = [1.0, 2.0];
        assert_eq!(mahalanobis_sq(&a, &a, &Covariance::Isotropic(3.0)).unwrap(), 0.0);
        // Identity covariance: squared Euclidean distance.
        let b = [0.0, 0.0];
        let m = mahalanobis_sq(&[3.0, 4.0], &b, &Covariance::Isotropic(1.0)).unwrap();
        assert!((m - 25.0).abs() < 1e-14);
        // Diagonal (4, 1), diff (2, 3): 4/4 + 9/1 = 10.
        let m = mahalanobis_sq(&[2.0, 3.0], &b, &Covariance::Diagonal(vec![4.0, 1.0])).unwrap();
        assert!((m - 10.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_and_full_paths_agree() {
        let mut rng = crate::rng::RngStream::new(5);
        for _ in 0..20 {
            let d = 4;
            let qm: Vec<f64> = (0..d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let pm: Vec<f64> = (0..d).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let qv: Vec<f64> = (0..d).map(|_| 0.5 + rng.next_f64()).collect();
            let pv: Vec<f64> = (0..d).map(|_| 0.5 + rng.next_f64()).collect();
            let q_diag = GaussianSpec::diagonal(qm.clone(), qv.clone());
            let p_diag = GaussianSpec::diagonal(pm.clone(), pv.clone());
            let to_full = |mean: &[f64], vs: &[f64]| {
                let mut m = vec![0.0; d * d];
                for i in 0..d {
                    m[i * d + i] = vs[i];
                }
                GaussianSpec::full(mean.to_vec(), m)
            };
            let q_full = to_full(&qm, &qv);
            let p_full = to_full(&pm, &pv);
            let a = gaussian_kl(&q_diag, &p_diag).unwrap();
            let b = gaussian_kl(&q_full, &p_full).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn non_positive_definite_is_rejected() {
        let q = GaussianSpec::isotropic(vec![0.0, 0.0], 1.0);
        let bad = GaussianSpec::full(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            gaussian_kl(&q, &bad),
            Err(PacBayesError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn identical_priors_give_zero_savings() {
        let q = GaussianSpec::isotropic(vec![0.0; 3], 1.0);
        let p = GaussianSpec::isotropic(vec![1.0; 3], 5.0);
        let report = sample_savings(&q, &p, &p, 1000.0).unwrap();
        assert!(report.absolute_savings.abs() < 1e-9);
        assert!(report.relative_savings.abs() < 1e-12);
    }

    #[test]
    fn informed_prior_centered_at_target_saves_samples() {
        let q = GaussianSpec::isotropic(vec![2.0; 4], 1.0);
        let p0 = GaussianSpec::isotropic(vec![0.0; 4], 1.0);
        let informed = GaussianSpec::isotropic(vec![2.0; 4], 1.0);
        let report = sample_savings(&q, &p0, &informed, 100.0).unwrap();
        assert!(report.absolute_savings > 0.0);
    }

    #[test]
    fn shared_covariance_savings_equal_mahalanobis_difference() {
        let q = GaussianSpec::isotropic(vec![1.0, -2.0, 0.5], 1.0);
        let p0 = GaussianSpec::isotropic(vec![0.0, 0.0, 0.0], 3.0);
        let p1 = GaussianSpec::isotropic(vec![1.0, -1.5, 0.5], 3.0);
        let report = sample_savings(&q, &p0, &p1, 777.0).unwrap();
        let m_form = report.mahalanobis_form.unwrap();
        assert!(
            (report.absolute_savings - m_form).abs() < 1e-10,
            "{} vs {m_form}",
            report.absolute_savings
        );
    }

    #[test]
    fn numerical_example_reproduces_the_reference_reductions() {
        let report = reproduce_numerical_example();
        assert!(
            (report.reduction - 0.98).abs() < 0.005,
            "reduction {}",
            report.reduction
        );
        assert!(
            (report.reduction_with_micro_cost - 0.882).abs() < 0.005,
            "reduction with micro cost {}",
            report.reduction_with_micro_cost
        );
        // The uninformed KL matches the worked arithmetic: half of ~215.15.
        assert!((2.0 * report.kl_uninformed - 215.166).abs() < 0.01);
    }

    #[test]
    fn fully_informed_prior_drives_reduction_to_one() {
        // All 50 parameters pre-learned: the informed KL vanishes.
        let d = 50;
        let mean = vec![0.0; d];
        let q = GaussianSpec::isotropic(mean.clone(), 1.0);
        let p0 = GaussianSpec::isotropic(mean.clone(), 200.0);
        let informed = GaussianSpec::isotropic(mean, 1.0);
        let report = sample_savings(&q, &p0, &informed, 5.0e3).unwrap();
        assert!(report.n_informed.abs() < 1e-9);
        assert!((report.relative_savings - 1.0).abs() < 1e-12);
    }

    proptest! {
        /// KL is non-negative on random diagonal instances.
        #[test]
        fn kl_non_negative(
            qm in proptest::collection::vec(-3.0f64..3.0, 3),
            pm in proptest::collection::vec(-3.0f64..3.0, 3),
            qv in proptest::collection::vec(0.1f64..5.0, 3),
            pv in proptest::collection::vec(0.1f64..5.0, 3),
        ) {
            let q = GaussianSpec::diagonal(qm, qv);
            let p = GaussianSpec::diagonal(pm, pv);
            let kl = gaussian_kl(&q, &p).unwrap();
            prop_assert!(kl >= -1e-12, "kl = {kl}");
        }
    }
}
