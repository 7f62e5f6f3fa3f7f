//! Learned detector: fixed zero-sum convolution kernels over the I/Q
//! channels, PPV pooling, and a ridge-trained linear scorer.

pub mod kernels;
pub mod persist;
pub mod ridge;

use num_complex::Complex64;

use crate::error::Result;

pub use kernels::{build_kernel_bank, Channel, Combination, KernelBank, Padding};
pub use ridge::{CvReport, LinearModel, RidgeAccumulator, RidgeConfig};

/// A fitted kernel bank with its trained scorer.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedDetector {
    pub bank: KernelBank,
    pub model: LinearModel,
    /// Fingerprint of the training set the biases and weights came from.
    pub training_fingerprint: u64,
}

impl LearnedDetector {
    /// Scores a max-normalized baseband sequence.
    pub fn score(&self, y_norm: &[Complex64]) -> Result<f64> {
        let features = self.bank.transform(y_norm)?;
        self.model.score(&features)
    }

    /// Scores one sequence under several detectors, sharing convolutions
    /// when their banks share a skeleton.
    pub fn score_many(detectors: &[&LearnedDetector], y_norm: &[Complex64]) -> Result<Vec<f64>> {
        let banks: Vec<&KernelBank> = detectors.iter().map(|d| &d.bank).collect();
        if banks.iter().all(|b| banks[0].same_skeleton(b)) {
            KernelBank::transform_shared(&banks, y_norm)?
                .iter()
                .zip(detectors)
                .map(|(f, d)| d.model.score(f))
                .collect()
        } else {
            detectors.iter().map(|d| d.score(y_norm)).collect()
        }
    }
}
