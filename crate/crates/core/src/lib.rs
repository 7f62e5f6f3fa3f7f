//! Detection of signals with unknown parameters in additive white Gaussian noise.
//!
//! The crate synthesizes three passband signal classes (pure tone, RRC-shaped
//! QPSK, CP-less OFDM), runs them through a quadrature downconverter with an
//! erroneous carrier estimate, and compares four detectors at a constant false
//! alarm rate:
//!
//! * energy detector,
//! * Fisher / periodogram-peak detector,
//! * coherent matched filter with a genie template (upper bound),
//! * a learned detector built from fixed zero-sum convolution kernels, PPV
//!   pooling and a ridge-regression scorer.
//!
//! Modules are ordered bottom-up: [`waveforms`] and [`frontend`] produce
//! baseband sequences, [`detectors`] and [`learned`] turn them into scores,
//! [`calibration`] sets thresholds, [`dataset`] persists records and
//! [`harness`] drives complete experiments.

pub mod calibration;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod learned;
pub mod seeds;
pub mod waveforms;

pub use error::{Error, Result};

pub use num_complex::{Complex32, Complex64};
