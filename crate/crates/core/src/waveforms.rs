//! Noiseless real passband waveforms: pure tone, RRC-shaped QPSK and CP-less OFDM.
//!
//! Every generator evaluates its baseband model at exact sample instants
//! `t = n / f_s`, mixes it up to `f_true` and (for QPSK/OFDM) rescales the
//! emitted window to unit mean-square power.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RRC pulses are truncated to this many symbol periods on each side.
pub const RRC_SPAN_SYMBOLS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Sine,
    Qpsk,
    Ofdm,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [SignalKind::Sine, SignalKind::Qpsk, SignalKind::Ofdm];

    pub fn code(self) -> u16 {
        match self {
            SignalKind::Sine => 0,
            SignalKind::Qpsk => 1,
            SignalKind::Ofdm => 2,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(SignalKind::Sine),
            1 => Some(SignalKind::Qpsk),
            2 => Some(SignalKind::Ofdm),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Sine => "sine",
            SignalKind::Qpsk => "qpsk",
            SignalKind::Ofdm => "ofdm",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" | "tone" => Ok(SignalKind::Sine),
            "qpsk" => Ok(SignalKind::Qpsk),
            "ofdm" => Ok(SignalKind::Ofdm),
            other => Err(Error::InvalidParameter(format!("unknown signal kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonParams {
    /// Sample rate, Hz.
    pub f_s: f64,
    /// True carrier, Hz.
    pub f_true: f64,
    /// Number of passband samples to emit.
    pub n_pass: usize,
    /// Carrier phase offset, radians.
    pub phase: f64,
}

impl Default for CommonParams {
    fn default() -> Self {
        Self {
            f_s: 2.048e6,
            f_true: 75e3,
            n_pass: 700,
            phase: 0.0,
        }
    }
}

impl CommonParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_pass == 0 {
            return Err(Error::InvalidParameter("n_pass must be positive".into()));
        }
        if !(self.f_s.is_finite() && self.f_s > 0.0) {
            return Err(Error::InvalidParameter(format!("bad sample rate {}", self.f_s)));
        }
        if !(self.f_true.is_finite() && self.f_true > 0.0 && self.f_true < self.f_s / 2.0) {
            return Err(Error::InvalidParameter(format!(
                "carrier {} Hz must lie in (0, f_s/2 = {})",
                self.f_true,
                self.f_s / 2.0
            )));
        }
        if !(-PI..=PI).contains(&self.phase) {
            return Err(Error::InvalidParameter(format!(
                "phase {} outside [-pi, pi]",
                self.phase
            )));
        }
        Ok(())
    }

    fn check_occupancy(&self, half_bandwidth: f64) -> Result<()> {
        if self.f_true + half_bandwidth >= self.f_s / 2.0 {
            return Err(Error::InvalidParameter(format!(
                "signal edge {} Hz aliases at f_s = {}",
                self.f_true + half_bandwidth,
                self.f_s
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpskParams {
    /// Symbol rate, Hz.
    pub f_sym: f64,
    /// RRC roll-off factor in (0, 1].
    pub rolloff: f64,
    /// Symbol-clock offset in seconds, within [0, 1/f_sym).
    pub timing_offset: f64,
}

impl Default for QpskParams {
    fn default() -> Self {
        Self {
            f_sym: 25e3,
            rolloff: 0.4,
            timing_offset: 0.0,
        }
    }
}

impl QpskParams {
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.f_sym
    }

    /// One-sided occupied bandwidth `f_sym (1 + rolloff) / 2`.
    pub fn half_bandwidth(&self) -> f64 {
        self.f_sym * (1.0 + self.rolloff) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "roll-off {} outside (0, 1]",
                self.rolloff
            )));
        }
        if !(self.f_sym.is_finite() && self.f_sym > 0.0) {
            return Err(Error::InvalidParameter(format!("bad symbol rate {}", self.f_sym)));
        }
        if !(0.0..self.symbol_period()).contains(&self.timing_offset) {
            return Err(Error::InvalidParameter(format!(
                "timing offset {} outside one symbol period",
                self.timing_offset
            )));
        }
        Ok(())
    }

    /// Number of symbols `gen_qpsk` needs for a window of `n_pass` samples.
    ///
    /// Symbol `i` of the stream is centred at `(i - RRC_SPAN_SYMBOLS - 1) * T + timing_offset`.
    pub fn symbols_needed(&self, common: &CommonParams) -> usize {
        let duration = common.n_pass as f64 / common.f_s;
        let covered = (duration / self.symbol_period()).ceil() as usize;
        covered + 2 * (RRC_SPAN_SYMBOLS + 1) + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Constellation {
    Qpsk,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub n_carriers: usize,
    /// Subcarrier spacing, Hz. One OFDM symbol lasts `1 / scs`.
    pub scs: f64,
    pub inner: Constellation,
    /// Seconds within [0, 1/scs).
    pub timing_offset: f64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            n_carriers: 16,
            scs: 2000.0,
            inner: Constellation::Qpsk,
            timing_offset: 0.0,
        }
    }
}

impl OfdmParams {
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.scs
    }

    /// Aggregate subcarrier-symbol rate, `n_carriers * scs`.
    pub fn aggregate_symbol_rate(&self) -> f64 {
        self.n_carriers as f64 * self.scs
    }

    pub fn half_bandwidth(&self) -> f64 {
        self.aggregate_symbol_rate() / 2.0
    }

    /// Frequency of subcarrier `m` relative to the carrier: `(m - Nc/2 + 1/2) * scs`,
    /// with integer division of `Nc`.
    pub fn subcarrier_offset(&self, m: usize) -> f64 {
        (m as f64 - (self.n_carriers / 2) as f64 + 0.5) * self.scs
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_carriers == 0 {
            return Err(Error::InvalidParameter("OFDM needs at least one carrier".into()));
        }
        if !(self.scs.is_finite() && self.scs > 0.0) {
            return Err(Error::InvalidParameter(format!("bad subcarrier spacing {}", self.scs)));
        }
        if !(0.0..self.symbol_duration()).contains(&self.timing_offset) {
            return Err(Error::InvalidParameter(format!(
                "timing offset {} outside one OFDM symbol",
                self.timing_offset
            )));
        }
        Ok(())
    }

    pub fn symbols_needed(&self, common: &CommonParams) -> usize {
        let span = common.n_pass as f64 / common.f_s + self.timing_offset;
        (span * self.scs).floor() as usize + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassbandSequence {
    pub samples: Vec<f64>,
    pub kind: SignalKind,
    /// Mean square of `samples`, measured when the sequence was built.
    pub power: f64,
}

impl PassbandSequence {
    pub fn new(samples: Vec<f64>, kind: SignalKind) -> Self {
        let power = mean_square(&samples);
        Self {
            samples,
            kind,
            power,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rescales the window to unit mean-square power.
    pub fn normalize_power(mut self) -> Result<Self> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Degenerate(format!(
                "cannot power-normalize a window with mean square {}",
                self.power
            )));
        }
        let gain = self.power.sqrt().recip();
        self.samples.iter_mut().for_each(|v| *v *= gain);
        self.power = mean_square(&self.samples);
        Ok(self)
    }
}

pub fn mean_square(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// Gray-mapped QPSK: bit pair `(b0, b1)` maps to `((1 - 2 b0) + j (1 - 2 b1)) / sqrt(2)`.
pub fn gray_qpsk(bits: u8) -> Complex64 {
    let re = if bits & 0b10 == 0 { 1.0 } else { -1.0 };
    let im = if bits & 0b01 == 0 { 1.0 } else { -1.0 };
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

pub fn random_qpsk<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<Complex64> {
    (0..count).map(|_| gray_qpsk(rng.random_range(0..4u8))).collect()
}

/// Unit-energy root-raised-cosine pulse with symbol period `period`.
///
/// The removable singularities at `t = 0` and `t = ±T/(4α)` return their
/// analytic limits. The pulse is not truncated here.
pub fn rrc_pulse(t: f64, rolloff: f64, period: f64) -> f64 {
    let a = rolloff;
    let x = t / period;
    let norm = period.sqrt().recip();
    if x.abs() < 1e-9 {
        return norm * (1.0 - a + 4.0 * a / PI);
    }
    let four_ax = 4.0 * a * x;
    if (1.0 - four_ax * four_ax).abs() < 1e-8 {
        let arg = PI / (4.0 * a);
        return a / (2.0 * period).sqrt()
            * ((1.0 + 2.0 / PI) * arg.sin() + (1.0 - 2.0 / PI) * arg.cos());
    }
    let num = (PI * x * (1.0 - a)).sin() + four_ax * (PI * x * (1.0 + a)).cos();
    let den = PI * x * (1.0 - four_ax * four_ax);
    norm * num / den
}

/// `samples[n] = sqrt(2) sin(2 pi f_true n / f_s + phase)`.
///
/// The closed form is emitted as is; its mean square tends to 1 over windows
/// much longer than a carrier period. Use [`PassbandSequence::normalize_power`]
/// for exact unit power.
pub fn gen_sine(common: &CommonParams) -> Result<PassbandSequence> {
    common.validate()?;
    let w = 2.0 * PI * common.f_true / common.f_s;
    let samples = (0..common.n_pass)
        .map(|n| SQRT_2 * (w * n as f64 + common.phase).sin())
        .collect();
    Ok(PassbandSequence::new(samples, SignalKind::Sine))
}

/// Mixes a complex baseband sampled at `n / f_s` to the real passband
/// `sqrt(2) Re{b(t) exp(j (2 pi f_true t + phase))}`.
fn upconvert(common: &CommonParams, baseband: &[Complex64]) -> Vec<f64> {
    let w = 2.0 * PI * common.f_true / common.f_s;
    baseband
        .iter()
        .enumerate()
        .map(|(n, b)| {
            let carrier = Complex64::from_polar(1.0, w * n as f64 + common.phase);
            SQRT_2 * (b * carrier).re
        })
        .collect()
}

/// Complex baseband of an RRC-shaped QPSK burst at the sample instants.
///
/// `symbols[i]` is centred at `(i - RRC_SPAN_SYMBOLS - 1) T + timing_offset`;
/// the stream must hold at least [`QpskParams::symbols_needed`] symbols.
pub fn qpsk_baseband(
    common: &CommonParams,
    qpsk: &QpskParams,
    symbols: &[Complex64],
) -> Result<Vec<Complex64>> {
    common.validate()?;
    qpsk.validate()?;
    let needed = qpsk.symbols_needed(common);
    if symbols.len() < needed {
        return Err(Error::LengthMismatch {
            expected: needed,
            actual: symbols.len(),
        });
    }
    let period = qpsk.symbol_period();
    let lead = (RRC_SPAN_SYMBOLS + 1) as f64;
    let span = RRC_SPAN_SYMBOLS as f64;
    let out = (0..common.n_pass)
        .map(|n| {
            let t = n as f64 / common.f_s;
            // position on the symbol grid, in units of T, relative to symbol index 0
            let u = (t - qpsk.timing_offset) / period + lead;
            let lo = (u - span).ceil().max(0.0) as usize;
            let hi = ((u + span).floor() as usize).min(symbols.len() - 1);
            (lo..=hi)
                .map(|k| symbols[k] * rrc_pulse((u - k as f64) * period, qpsk.rolloff, period))
                .sum()
        })
        .collect();
    Ok(out)
}

/// RRC-shaped QPSK at the true carrier, power-normalized over the window.
pub fn gen_qpsk(
    common: &CommonParams,
    qpsk: &QpskParams,
    symbols: &[Complex64],
) -> Result<PassbandSequence> {
    common.check_occupancy(qpsk.half_bandwidth())?;
    let baseband = qpsk_baseband(common, qpsk, symbols)?;
    PassbandSequence::new(upconvert(common, &baseband), SignalKind::Qpsk).normalize_power()
}

/// Complex baseband of a CP-less OFDM stream.
///
/// With `t' = t + timing_offset`, OFDM symbol `l = floor(t' scs)` carries
/// `data[l]`, and subcarrier `m` rotates as `exp(j 2 pi f_m t')`.
pub fn ofdm_baseband(
    common: &CommonParams,
    ofdm: &OfdmParams,
    data: &[Vec<Complex64>],
) -> Result<Vec<Complex64>> {
    common.validate()?;
    ofdm.validate()?;
    let needed = ofdm.symbols_needed(common);
    if data.len() < needed {
        return Err(Error::LengthMismatch {
            expected: needed,
            actual: data.len(),
        });
    }
    if let Some(bad) = data.iter().find(|d| d.len() != ofdm.n_carriers) {
        return Err(Error::LengthMismatch {
            expected: ofdm.n_carriers,
            actual: bad.len(),
        });
    }
    let offsets: Vec<f64> = (0..ofdm.n_carriers)
        .map(|m| 2.0 * PI * ofdm.subcarrier_offset(m))
        .collect();
    let out = (0..common.n_pass)
        .map(|n| {
            let t = n as f64 / common.f_s + ofdm.timing_offset;
            let symbol = &data[((t * ofdm.scs).floor() as usize).min(data.len() - 1)];
            symbol
                .iter()
                .zip(&offsets)
                .map(|(d, w)| d * Complex64::from_polar(1.0, w * t))
                .sum()
        })
        .collect();
    Ok(out)
}

/// CP-less OFDM at the true carrier, power-normalized over the window.
pub fn gen_ofdm(
    common: &CommonParams,
    ofdm: &OfdmParams,
    data: &[Vec<Complex64>],
) -> Result<PassbandSequence> {
    common.check_occupancy(ofdm.half_bandwidth())?;
    let baseband = ofdm_baseband(common, ofdm, data)?;
    PassbandSequence::new(upconvert(common, &baseband), SignalKind::Ofdm).normalize_power()
}
