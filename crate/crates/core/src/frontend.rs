//! Receive chain: AWGN injection, quadrature downconversion with an
//! erroneous carrier estimate, Butterworth low-pass, and max-magnitude
//! normalization for the learned detector.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveforms::PassbandSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontEndParams {
    /// Lower edge of the carrier-estimate draw, Hz.
    pub f_c_low: f64,
    /// Upper edge of the carrier-estimate draw, Hz.
    pub f_c_high: f64,
    /// Low-pass cutoff, Hz.
    pub lpf_bandwidth: f64,
    pub lpf_order: usize,
    /// Output sequence length.
    pub n_s: usize,
    /// Extra passband samples generated ahead of the window and discarded
    /// after filtering.
    pub settle: usize,
}

impl Default for FrontEndParams {
    fn default() -> Self {
        Self {
            f_c_low: 74e3,
            f_c_high: 76e3,
            lpf_bandwidth: 40e3,
            lpf_order: 5,
            n_s: 500,
            settle: 200,
        }
    }
}

impl FrontEndParams {
    pub fn n_pass(&self) -> usize {
        self.n_s + self.settle
    }

    pub fn draw_carrier<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(self.f_c_low..=self.f_c_high)
    }

    pub fn validate(&self, f_s: f64) -> Result<()> {
        if !(self.f_c_low > 0.0 && self.f_c_low <= self.f_c_high) {
            return Err(Error::InvalidParameter(format!(
                "carrier estimate range [{}, {}] is empty",
                self.f_c_low, self.f_c_high
            )));
        }
        if self.lpf_bandwidth >= self.f_c_low {
            return Err(Error::InvalidParameter(format!(
                "LPF bandwidth {} must stay below the carrier estimate {}",
                self.lpf_bandwidth, self.f_c_low
            )));
        }
        if !(self.lpf_bandwidth > 0.0 && self.lpf_bandwidth < f_s / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "LPF bandwidth {} outside (0, f_s/2)",
                self.lpf_bandwidth
            )));
        }
        if self.n_s == 0 || self.lpf_order == 0 {
            return Err(Error::InvalidParameter("n_s and lpf_order must be positive".into()));
        }
        Ok(())
    }
}

/// Noise standard deviation for a given SNR: `sigma^2 = 10^(-snr_db/10)`.
pub fn noise_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Adds i.i.d. real Gaussian noise of variance `10^(-snr_db/10)`.
pub fn add_noise<R: Rng + ?Sized>(x: &PassbandSequence, snr_db: f64, rng: &mut R) -> PassbandSequence {
    let sigma = noise_sigma(snr_db);
    let samples = x
        .samples
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    PassbandSequence::new(samples, x.kind)
}

/// Pure noise window with the same variance schedule as [`add_noise`].
pub fn noise_only<R: Rng + ?Sized>(len: usize, snr_db: f64, rng: &mut R) -> Vec<f64> {
    let sigma = noise_sigma(snr_db);
    (0..len)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Second-order section, `a0 = 1`. First-order sections have `b2 = a2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2)
            / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

/// Butterworth low-pass realized as a cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterDesign {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub f_s: f64,
    poles: Vec<Complex64>,
}

/// Bilinear-transform Butterworth low-pass with a prewarped analog cutoff.
pub fn design_butterworth(order: usize, cutoff_hz: f64, f_s: f64) -> Result<FilterDesign> {
    if order < 1 {
        return Err(Error::InvalidParameter("filter order must be at least 1".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < f_s / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff {cutoff_hz} Hz outside (0, {})",
            f_s / 2.0
        )));
    }
    let k = 2.0 * f_s;
    let omega = k * (PI * cutoff_hz / f_s).tan();
    let n = order as f64;
    let analog: Vec<Complex64> = (0..order)
        .map(|i| Complex64::from_polar(omega, PI * (2.0 * i as f64 + n + 1.0) / (2.0 * n)))
        .collect();
    let poles: Vec<Complex64> = analog.iter().map(|s| (k + s) / (k - s)).collect();

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let p = poles[i];
        let a1 = -2.0 * p.re;
        let a2 = p.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [1.0, a1, a2],
        });
    }
    if order % 2 == 1 {
        let r = poles[order / 2].re;
        let g = (1.0 - r) / 2.0;
        sections.push(Biquad {
            b: [g, g, 0.0],
            a: [1.0, -r, 0.0],
        });
    }
    Ok(FilterDesign {
        sections,
        order,
        cutoff_hz,
        f_s,
        poles,
    })
}

impl FilterDesign {
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// All zeros sit at `z = -1`.
    pub fn zeros(&self) -> Vec<Complex64> {
        vec![Complex64::new(-1.0, 0.0); self.order]
    }

    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / self.f_s);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product()
    }

    pub fn gain_db(&self, f_hz: f64) -> f64 {
        20.0 * self.response(f_hz).norm().log10()
    }

    /// Causal single-pass filtering from zero state (transposed direct form II).
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let input = *v;
                let out = s.b[0] * input + s1;
                s1 = s.b[1] * input - s.a[1] * out + s2;
                s2 = s.b[2] * input - s.a[2] * out;
                *v = out;
            }
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasebandSequence {
    pub iq: Vec<Complex64>,
    /// Passband noise standard deviation, known to the classical detectors.
    pub sigma: f64,
    /// Carrier estimate used for mixing, Hz.
    pub f_c: f64,
}

/// Downconverts a real passband window:
/// `I = LPF(x cos(n w_c))`, `Q = LPF(x sin(n w_c))`, `n = 1, 2, ...`,
/// keeping the final `n_s` filtered samples.
pub fn dcv(x: &[f64], f_c: f64, filt: &FilterDesign, n_s: usize) -> Result<Vec<Complex64>> {
    if x.len() < n_s {
        return Err(Error::LengthMismatch {
            expected: n_s,
            actual: x.len(),
        });
    }
    let w = 2.0 * PI * f_c / filt.f_s;
    let (mut i_mix, mut q_mix): (Vec<f64>, Vec<f64>) = x
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let (sin, cos) = (w * (n + 1) as f64).sin_cos();
            (v * cos, v * sin)
        })
        .unzip();
    i_mix = filt.filter(&i_mix);
    q_mix = filt.filter(&q_mix);
    let start = x.len() - n_s;
    Ok(i_mix[start..]
        .iter()
        .zip(&q_mix[start..])
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect())
}

/// Divides by the largest sample modulus so that `max |iq[n]| = 1`.
pub fn normalize_ml(iq: &[Complex64]) -> Result<Vec<Complex64>> {
    let peak = iq.iter().map(|c| c.norm()).fold(0.0_f64, f64::max);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Degenerate(
            "cannot max-normalize an all-zero sequence".into(),
        ));
    }
    Ok(iq.iter().map(|c| c / peak).collect())
}

impl BasebandSequence {
    pub fn normalized(&self) -> Result<BasebandSequence> {
        Ok(BasebandSequence {
            iq: normalize_ml(&self.iq)?,
            sigma: self.sigma,
            f_c: self.f_c,
        })
    }
}
