//! Detection-probability curves over SNR bins.

use serde::{Deserialize, Serialize};

use crate::calibration::{wald_interval, CalibrationResult, PfaEstimate};
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::waveforms::SignalKind;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub snr_db: i8,
    pub pd: f64,
    pub n_trials: usize,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    /// Legend label: the detector name, suffixed `:kind` when a multi-kind
    /// experiment reports the detector per signal kind.
    pub label: String,
    pub detector: DetectorKind,
    pub kind: Option<SignalKind>,
    pub calibration: CalibrationResult,
    /// Held-out verification of the threshold.
    pub pfa_check: PfaEstimate,
    pub points: Vec<CurvePoint>,
}

pub fn curve_label(detector: DetectorKind, kind: Option<SignalKind>) -> String {
    match kind {
        Some(k) => format!("{}:{}", detector.name(), k.name()),
        None => detector.name().to_string(),
    }
}

/// Builds a curve from signal-present scores tagged with their SNR bin.
/// Every bin of `grid` must receive at least one score.
pub fn evaluate(
    detector: DetectorKind,
    kind: Option<SignalKind>,
    calibration: &CalibrationResult,
    pfa_check: PfaEstimate,
    grid: &[i8],
    h1_scores: &[(i8, f64)],
) -> Result<EvalCurve> {
    let points = grid
        .iter()
        .map(|&snr| {
            let (mut n, mut hits) = (0usize, 0usize);
            for &(s, score) in h1_scores {
                if s == snr {
                    n += 1;
                    hits += usize::from(calibration.decide(score));
                }
            }
            if n == 0 {
                return Err(Error::Degenerate(format!(
                    "no signal-present trials in the {snr} dB bin"
                )));
            }
            let (pd, ci_lo, ci_hi) = wald_interval(hits, n);
            Ok(CurvePoint {
                snr_db: snr,
                pd,
                n_trials: n,
                ci_lo,
                ci_hi,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalCurve {
        label: curve_label(detector, kind),
        detector,
        kind,
        calibration: calibration.clone(),
        pfa_check,
        points,
    })
}

/// SNR at which the curve first reaches `target_pd`, interpolating
/// linearly in dB between the bracketing bins.
pub fn snr_at_pd(curve: &EvalCurve, target_pd: f64) -> Result<f64> {
    let pts = &curve.points;
    for (i, p) in pts.iter().enumerate() {
        if p.pd == target_pd {
            return Ok(p.snr_db as f64);
        }
        if p.pd > target_pd {
            if i == 0 {
                break;
            }
            let q = &pts[i - 1];
            let frac = (target_pd - q.pd) / (p.pd - q.pd);
            return Ok(q.snr_db as f64 + frac * (p.snr_db as f64 - q.snr_db as f64));
        }
    }
    Err(Error::SaturatedCurve {
        target: target_pd,
    })
}

/// Pairs of bins `(lower, higher)` where the higher-SNR bin falls more than
/// three interval widths below the lower one.
pub fn monotonicity_violations(curve: &EvalCurve) -> Vec<(i8, i8)> {
    let mut out = Vec::new();
    for (i, a) in curve.points.iter().enumerate() {
        for b in &curve.points[i + 1..] {
            let width = (a.ci_hi - a.ci_lo).max(b.ci_hi - b.ci_lo);
            if b.pd < a.pd - 3.0 * width {
                out.push((a.snr_db, b.snr_db));
            }
        }
    }
    out
}

/// Largest per-bin difference between two curves in units of the combined
/// binomial standard error. Bins where both curves sit at 0 or 1 count as 0.
pub fn max_standardized_gap(a: &EvalCurve, b: &EvalCurve) -> f64 {
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| {
            let var = p.pd * (1.0 - p.pd) / p.n_trials as f64 + q.pd * (1.0 - q.pd) / q.n_trials as f64;
            let diff = (p.pd - q.pd).abs();
            if diff == 0.0 {
                0.0
            } else if var == 0.0 {
                f64::INFINITY
            } else {
                diff / var.sqrt()
            }
        })
        .fold(0.0, f64::max)
}
