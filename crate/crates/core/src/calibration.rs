//! Constant-false-alarm-rate thresholds from noise-only score samples.

use serde::{Deserialize, Serialize};

use crate::detectors::DetectorKind;
use crate::error::{Error, Result};

pub const DEFAULT_TARGET_PFA: f64 = 0.01;
pub const DEFAULT_TOLERANCE: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub detector: DetectorKind,
    pub gamma: f64,
    pub target_pfa: f64,
    /// Exceedance rate `#(score > gamma) / n_trials` on the calibration set.
    pub achieved_pfa: f64,
    pub n_trials: usize,
}

impl CalibrationResult {
    /// Decision rule: detection iff `score > gamma`.
    pub fn decide(&self, score: f64) -> bool {
        score > self.gamma
    }
}

/// Smallest calibration set for a target rate and tolerance: ten expected
/// exceedances, and a discreteness step of at most `tolerance`.
pub fn required_trials(target_pfa: f64, tolerance: f64) -> usize {
    let exceedances = (10.0 / target_pfa).ceil() as usize;
    let resolution = (1.0 / tolerance).ceil() as usize;
    exceedances.max(resolution)
}

/// Sets `gamma` to the `ceil(M (1 - target))`-th order statistic of the `M`
/// noise-only scores.
pub fn calibrate(
    detector: DetectorKind,
    scores: &[f64],
    target_pfa: f64,
    tolerance: f64,
) -> Result<CalibrationResult> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target P_FA {target_pfa} outside (0, 1)"
        )));
    }
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance {tolerance} must be positive")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Degenerate("NaN in calibration scores".into()));
    }
    let m = scores.len();
    let floor = (10.0 / target_pfa).ceil() as usize;
    if m < floor {
        return Err(Error::InsufficientSamples {
            required: required_trials(target_pfa, tolerance),
            actual: m,
        });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((m as f64) * (1.0 - target_pfa)).ceil() as usize;
    let gamma = sorted[rank.clamp(1, m) - 1];
    let exceed = m - sorted.partition_point(|&s| s <= gamma);
    let achieved_pfa = exceed as f64 / m as f64;
    if (achieved_pfa - target_pfa).abs() > tolerance {
        return Err(Error::CalibrationTolerance {
            achieved: achieved_pfa,
            target: target_pfa,
            tolerance,
            required: required_trials(target_pfa, tolerance).max(m + 1),
        });
    }
    Ok(CalibrationResult {
        detector,
        gamma,
        target_pfa,
        achieved_pfa,
        n_trials: m,
    })
}

/// Empirical P_FA on a held-out noise-only set with a 95% Wald interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfaEstimate {
    pub pfa: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_trials: usize,
}

impl PfaEstimate {
    pub fn contains(&self, p: f64) -> bool {
        (self.ci_lo..=self.ci_hi).contains(&p)
    }
}

/// 95% Wald interval `p ± 1.96 sqrt(p (1 - p) / n)`, clamped to [0, 1].
pub fn wald_interval(successes: usize, n: usize) -> (f64, f64, f64) {
    if n == 0 {
        return (0.0, 0.0, 1.0);
    }
    let p = successes as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    (p, (p - half).max(0.0), (p + half).min(1.0))
}

pub fn verify_pfa(gamma: f64, fresh_scores: &[f64]) -> PfaEstimate {
    let exceed = fresh_scores.iter().filter(|&&s| s > gamma).count();
    let (pfa, ci_lo, ci_hi) = wald_interval(exceed, fresh_scores.len());
    PfaEstimate {
        pfa,
        ci_lo,
        ci_hi,
        n_trials: fresh_scores.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn order_statistic_example() {
        let scores: Vec<f64> = (1..=1000).map(f64::from).collect();
        let r = calibrate(DetectorKind::Energy, &scores, 0.01, 0.001).unwrap();
        assert_eq!(r.gamma, 990.0);
        assert_eq!(r.achieved_pfa, 0.01);
        assert_eq!(r.n_trials, 1000);
        assert!(r.decide(991.0) && !r.decide(990.0));
    }

    #[test]
    fn median_for_half() {
        let mut rng = rng_from_seed(8);
        let mut scores: Vec<f64> = (0..10_001)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // symmetrize
        let mirrored: Vec<f64> = scores.iter().map(|s: &f64| -s).collect();
        scores.extend(mirrored);
        let r = calibrate(DetectorKind::Fisher, &scores, 0.5, 0.01).unwrap();
        assert!(r.gamma.abs() < 0.02, "{}", r.gamma);
    }

    #[test]
    fn all_equal_scores_fail() {
        let err = calibrate(DetectorKind::Learned, &[3.0; 5000], 0.01, 0.001).unwrap_err();
        match err {
            Error::CalibrationTolerance { achieved, required, .. } => {
                assert_eq!(achieved, 0.0);
                assert!(required > 5000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_few_scores_names_required_m() {
        let err = calibrate(DetectorKind::Energy, &[1.0, 2.0, 3.0], 0.01, 0.001).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientSamples { required: 1000, actual: 3 }
        ));
        assert!(err.to_string().contains("1000"));
    }

    #[test]
    fn rejects_bad_target() {
        assert!(calibrate(DetectorKind::Energy, &[1.0; 10], 0.0, 0.001).is_err());
        assert!(calibrate(DetectorKind::Energy, &[1.0; 10], 1.0, 0.001).is_err());
    }

    #[test]
    fn verify_extremes() {
        let s = [0.1, 0.5, 2.0];
        assert_eq!(verify_pfa(f64::INFINITY, &s).pfa, 0.0);
        assert_eq!(verify_pfa(f64::NEG_INFINITY, &s).pfa, 1.0);
        let est = verify_pfa(0.3, &s);
        assert!((est.pfa - 2.0 / 3.0).abs() < 1e-15);
        assert!(est.ci_lo <= est.pfa && est.pfa <= est.ci_hi);
    }

    #[test]
    fn calibrated_gaussian_holds_on_fresh_draws() {
        let mut rng = rng_from_seed(21);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let calib = draw(100_000);
        let r = calibrate(DetectorKind::Energy, &calib, 0.01, 0.001).unwrap();
        let est = verify_pfa(r.gamma, &draw(50_000));
        assert!((0.007..=0.013).contains(&est.pfa), "{est:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn raising_gamma_never_raises_pfa(
                scores in prop::collection::vec(-100.0..100.0f64, 1..300),
                g in -120.0..120.0f64,
                d in 0.0..50.0f64,
            ) {
                prop_assert!(verify_pfa(g + d, &scores).pfa <= verify_pfa(g, &scores).pfa);
            }

            #[test]
            fn continuous_scores_hit_within_one_over_m(
                seed in 0u64..200,
                m in 1000usize..4000,
            ) {
                let mut rng = rng_from_seed(seed);
                let scores: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let r = calibrate(DetectorKind::Energy, &scores, 0.01, 0.001).unwrap();
                prop_assert!((r.achieved_pfa - 0.01).abs() < 1.0 / m as f64);
            }

            #[test]
            fn invariant_under_monotone_transform(seed in 0u64..200) {
                let mut rng = rng_from_seed(seed);
                let scores: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
                let warped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() * 3.0 + 1.0).collect();
                let a = calibrate(DetectorKind::Energy, &scores, 0.01, 0.001).unwrap();
                let b = calibrate(DetectorKind::Energy, &warped, 0.01, 0.001).unwrap();
                prop_assert_eq!(a.achieved_pfa, b.achieved_pfa);
                prop_assert!(((a.gamma * 0.5).exp() * 3.0 + 1.0 - b.gamma).abs() < 1e-9);
            }
        }
    }
}
