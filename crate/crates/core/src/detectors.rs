//! Classical decision statistics. Each maps a baseband sequence to a real
//! score; larger means "signal present". Thresholds live in
//! [`crate::calibration`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Energy,
    Fisher,
    #[serde(rename = "mf")]
    MatchedFilter,
    Learned,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] = [
        DetectorKind::Energy,
        DetectorKind::Fisher,
        DetectorKind::MatchedFilter,
        DetectorKind::Learned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Energy => "energy",
            DetectorKind::Fisher => "fisher",
            DetectorKind::MatchedFilter => "mf",
            DetectorKind::Learned => "learned",
        }
    }

    /// Whether the H0 score distribution depends on the signal class
    /// (only through the genie template).
    pub fn uses_template(self) -> bool {
        matches!(self, DetectorKind::MatchedFilter)
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "energy" | "ed" => Ok(DetectorKind::Energy),
            "fisher" | "fft" => Ok(DetectorKind::Fisher),
            "mf" | "matched" | "matchedfilter" => Ok(DetectorKind::MatchedFilter),
            "learned" | "minirocket" => Ok(DetectorKind::Learned),
            other => Err(Error::InvalidParameter(format!("unknown detector `{other}`"))),
        }
    }
}

/// Parses a comma-separated detector roster.
pub fn parse_roster(list: &str) -> Result<Vec<DetectorKind>> {
    let mut out: Vec<DetectorKind> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(Error::InvalidParameter("empty detector roster".into()));
    }
    Ok(out)
}

/// Genie template: the noiseless downconverted waveform of the trial.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchedTemplate {
    h: Vec<Complex64>,
    norm: f64,
}

impl MatchedTemplate {
    pub fn new(h: Vec<Complex64>) -> Result<Self> {
        let norm = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate("matched-filter template has zero norm".into()));
        }
        Ok(Self { h, norm })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.h
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `sum |y[i]|^2 / sigma^2`.
pub fn energy_stat(y: &[Complex64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(y.iter().map(|c| c.norm_sqr()).sum::<f64>() / (sigma * sigma))
}

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<usize, Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry(len)
            .or_insert_with(|| planner.plan_fft_forward(len))
            .clone()
    })
}

/// Unnormalized forward DFT of the whole sequence (no window, no padding).
pub fn spectrum(y: &[Complex64]) -> Vec<Complex64> {
    let mut buf = y.to_vec();
    if !buf.is_empty() {
        forward_plan(buf.len()).process(&mut buf);
    }
    buf
}

/// Peak periodogram bin over total periodogram energy, in (0, 1].
pub fn fisher_stat(y: &[Complex64]) -> Result<f64> {
    let power: Vec<f64> = spectrum(y).iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("Fisher statistic of an all-zero sequence".into()));
    }
    let peak = power.iter().copied().fold(0.0_f64, f64::max);
    Ok(peak / total)
}

/// Coherent normalized correlation `Re{sum y[n] h*[n]} / (sigma ||h||)`.
pub fn mf_stat(y: &[Complex64], h: &MatchedTemplate, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if y.len() != h.h.len() {
        return Err(Error::LengthMismatch {
            expected: h.h.len(),
            actual: y.len(),
        });
    }
    let r: f64 = y
        .iter()
        .zip(&h.h)
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum();
    Ok(r / (sigma * h.norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy_stat(&[c(1.0, 0.0), c(0.0, 1.0)], 1.0).unwrap(), 2.0);
        assert_eq!(energy_stat(&[c(0.0, 0.0); 8], 0.5).unwrap(), 0.0);
        assert!(energy_stat(&[c(1.0, 0.0)], 0.0).is_err());
        assert!(energy_stat(&[c(1.0, 0.0)], -1.0).is_err());
    }

    #[test]
    fn energy_scale_invariance() {
        let y = [c(0.5, -1.0), c(2.0, 0.25), c(-0.75, 0.5)];
        let scaled: Vec<_> = y.iter().map(|v| v * 4.0).collect();
        assert_eq!(
            energy_stat(&y, 0.5).unwrap(),
            energy_stat(&scaled, 2.0).unwrap()
        );
    }

    #[test]
    fn fisher_examples() {
        let dc = [c(1.0, 0.0); 4];
        assert!((fisher_stat(&dc).unwrap() - 1.0).abs() < 1e-15);
        let imp = [c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        assert!((fisher_stat(&imp).unwrap() - 0.25).abs() < 1e-15);
        assert!(fisher_stat(&[c(0.0, 0.0); 4]).is_err());
    }

    #[test]
    fn fisher_single_bin_exponential_is_one() {
        let n = 500;
        let y: Vec<_> = (0..n)
            .map(|i| Complex64::from_polar(0.3, 2.0 * std::f64::consts::PI * 7.0 * i as f64 / n as f64))
            .collect();
        assert!((fisher_stat(&y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mf_examples() {
        let h = MatchedTemplate::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(mf_stat(&[c(0.0, 1.0), c(0.0, 0.0)], &h, 1.0).unwrap(), 0.0);
        let h = MatchedTemplate::new(vec![c(1.0, 2.0), c(-0.5, 0.25)]).unwrap();
        let self_corr = mf_stat(h.samples(), &h, 1.0).unwrap();
        assert!((self_corr - h.norm()).abs() < 1e-12);
        assert!(MatchedTemplate::new(vec![c(0.0, 0.0); 3]).is_err());
        assert!(mf_stat(&[c(1.0, 0.0)], &h, 1.0).is_err());
    }

    #[test]
    fn mf_deflection_on_matched_data() {
        // y = A h + noise with sigma per real dimension: mean score = A ||h|| / sigma
        let mut rng = rng_from_seed(5);
        let h: Vec<_> = (0..64)
            .map(|i| Complex64::from_polar(1.0, 0.37 * i as f64))
            .collect();
        let tmpl = MatchedTemplate::new(h.clone()).unwrap();
        let (amp, sigma) = (0.4, 2.0);
        let trials = 20_000;
        let mean = (0..trials)
            .map(|_| {
                let y: Vec<_> = h
                    .iter()
                    .map(|v| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        let m: f64 = StandardNormal.sample(&mut rng);
                        v * amp + c(sigma * n, sigma * m)
                    })
                    .collect();
                mf_stat(&y, &tmpl, sigma).unwrap()
            })
            .sum::<f64>()
            / trials as f64;
        let analytic = amp * tmpl.norm() / sigma;
        assert!((mean / analytic - 1.0).abs() < 0.03, "{mean} vs {analytic}");
    }

    #[test]
    fn roster_parsing() {
        assert_eq!(
            parse_roster("mf,energy, fisher,energy").unwrap(),
            vec![DetectorKind::Energy, DetectorKind::Fisher, DetectorKind::MatchedFilter]
        );
        assert!(parse_roster("").is_err());
        assert!(parse_roster("energy,bogus").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fisher_scale_invariant(
                v in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 2..128),
                scale in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64],
            ) {
                let y: Vec<_> = v.iter().map(|&(r, i)| c(r, i)).collect();
                prop_assume!(y.iter().any(|z| z.norm() > 1e-6));
                let a = fisher_stat(&y).unwrap();
                let scaled: Vec<_> = y.iter().map(|z| z * scale).collect();
                let b = fisher_stat(&scaled).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a);
                prop_assert!(a > 0.0 && a <= 1.0 + 1e-15);
            }

            #[test]
            fn statistics_are_deterministic(seed in 0u64..500) {
                let mut rng = rng_from_seed(seed);
                let y: Vec<_> = (0..50)
                    .map(|_| c(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
                    .collect();
                let h = MatchedTemplate::new(y.iter().rev().cloned().collect()).unwrap();
                prop_assert_eq!(energy_stat(&y, 1.3).unwrap(), energy_stat(&y, 1.3).unwrap());
                prop_assert_eq!(fisher_stat(&y).unwrap(), fisher_stat(&y).unwrap());
                prop_assert_eq!(mf_stat(&y, &h, 0.7).unwrap(), mf_stat(&y, &h, 0.7).unwrap());
            }
        }
    }
}
