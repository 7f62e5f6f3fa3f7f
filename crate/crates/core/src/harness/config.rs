//! Run configuration (TOML).
//!
//! ```toml
//! [run]
//! seed = 7
//! out = "runs/desk"
//! target_pfa = 0.01
//! detectors = ["energy", "fisher", "mf", "learned"]
//!
//! [[experiment]]
//! name = "sine"
//! signals = ["sine"]
//! ```
//!
//! Omitted keys take the desk-scale defaults. `[waveform]`, `[frontend]`
//! and `[learned]` blocks override the signal model and detector settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{DEFAULT_TARGET_PFA, DEFAULT_TOLERANCE};
use crate::dataset::SignalModel;
use crate::detectors::DetectorKind;
use crate::error::{Error, Result};
use crate::frontend::FrontEndParams;
use crate::learned::kernels::DEFAULT_NUM_FEATURES;
use crate::learned::ridge::log_grid;
use crate::waveforms::SignalKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    #[serde(with = "crate::seeds::wide")]
    pub seed: u64,
    pub out: PathBuf,
    pub target_pfa: f64,
    pub tolerance: f64,
    /// Noise-only sequences used to set thresholds.
    pub calibration_trials: usize,
    /// Fresh noise-only sequences used to verify the achieved P_FA.
    pub holdout_trials: usize,
    /// Per-bin per-class counts for single-kind experiments; multi-kind
    /// experiments scale them by their kind count unless overridden.
    pub train_per_bin: usize,
    pub eval_per_bin: usize,
    pub snr_grid: Vec<i8>,
    pub detectors: Vec<DetectorKind>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 20_240_501,
            out: PathBuf::from("runs/desk"),
            target_pfa: DEFAULT_TARGET_PFA,
            tolerance: DEFAULT_TOLERANCE,
            calibration_trials: 100_000,
            holdout_trials: 50_000,
            train_per_bin: 200,
            eval_per_bin: 500,
            snr_grid: (-30..=5).collect(),
            detectors: DetectorKind::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub signals: Vec<SignalKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_bin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_per_bin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detectors: Option<Vec<DetectorKind>>,
}

impl ExperimentConfig {
    pub fn single(kind: SignalKind) -> Self {
        Self {
            name: kind.name().to_string(),
            signals: vec![kind],
            train_per_bin: None,
            eval_per_bin: None,
            detectors: None,
        }
    }

    pub fn unified() -> Self {
        Self {
            name: "unified".into(),
            signals: SignalKind::ALL.to_vec(),
            train_per_bin: None,
            eval_per_bin: None,
            detectors: None,
        }
    }

    pub fn is_multi_kind(&self) -> bool {
        self.signals.len() > 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub f_s: f64,
    pub f_true: f64,
    pub qpsk_symbol_rate: f64,
    pub qpsk_rolloff: f64,
    pub ofdm_carriers: usize,
    pub ofdm_spacing: f64,
}

impl Default for WaveformSection {
    fn default() -> Self {
        let m = SignalModel::default();
        Self {
            f_s: m.f_s,
            f_true: m.f_true,
            qpsk_symbol_rate: m.qpsk_symbol_rate,
            qpsk_rolloff: m.qpsk_rolloff,
            ofdm_carriers: m.ofdm_carriers,
            ofdm_spacing: m.ofdm_spacing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnedSection {
    pub num_features: usize,
    #[serde(with = "crate::seeds::wide")]
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub folds: usize,
}

impl Default for LearnedSection {
    fn default() -> Self {
        Self {
            num_features: DEFAULT_NUM_FEATURES,
            seed: 0,
            lambdas: log_grid(-1.0, 5.0, 13),
            folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub waveform: WaveformSection,
    pub frontend: FrontEndParams,
    pub learned: LearnedSection,
    #[serde(rename = "experiment")]
    pub experiments: Vec<ExperimentConfig>,
}

impl Default for RunConfig {
    /// The four desk-scale experiments: sine, QPSK, OFDM, unified.
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            waveform: WaveformSection::default(),
            frontend: FrontEndParams::default(),
            learned: LearnedSection::default(),
            experiments: SignalKind::ALL
                .iter()
                .map(|&k| ExperimentConfig::single(k))
                .chain(std::iter::once(ExperimentConfig::unified()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> SignalModel {
        let w = &self.waveform;
        SignalModel {
            f_s: w.f_s,
            f_true: w.f_true,
            qpsk_symbol_rate: w.qpsk_symbol_rate,
            qpsk_rolloff: w.qpsk_rolloff,
            ofdm_carriers: w.ofdm_carriers,
            ofdm_spacing: w.ofdm_spacing,
            frontend: self.frontend,
        }
    }

    pub fn detectors_for(&self, exp: &ExperimentConfig) -> Vec<DetectorKind> {
        let mut d = exp.detectors.clone().unwrap_or_else(|| self.run.detectors.clone());
        d.sort();
        d.dedup();
        d
    }

    pub fn train_per_bin(&self, exp: &ExperimentConfig) -> usize {
        exp.train_per_bin
            .unwrap_or(self.run.train_per_bin * exp.signals.len())
    }

    pub fn eval_per_bin(&self, exp: &ExperimentConfig) -> usize {
        exp.eval_per_bin
            .unwrap_or(self.run.eval_per_bin * exp.signals.len())
    }

    /// Keeps only the named experiment.
    pub fn select(&mut self, name: &str) -> Result<()> {
        self.experiments.retain(|e| e.name == name);
        if self.experiments.is_empty() {
            return Err(Error::Config(format!("no experiment named `{name}`")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        let r = &self.run;
        if !(r.target_pfa > 0.0 && r.target_pfa < 1.0) {
            return cfg_err(format!("target_pfa {} outside (0, 1)", r.target_pfa));
        }
        if !(r.tolerance > 0.0) {
            return cfg_err("tolerance must be positive".into());
        }
        if r.snr_grid.is_empty() || r.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return cfg_err("snr_grid must be nonempty and strictly increasing".into());
        }
        if r.train_per_bin == 0 || r.eval_per_bin == 0 {
            return cfg_err("per-bin counts must be positive".into());
        }
        if r.detectors.is_empty() {
            return cfg_err("detector roster is empty".into());
        }
        if self.experiments.is_empty() {
            return cfg_err("config defines no experiments".into());
        }
        let mut names: Vec<&str> = self.experiments.iter().map(|e| e.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return cfg_err("experiment names must be unique".into());
        }
        for e in &self.experiments {
            if e.name.is_empty()
                || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return cfg_err(format!("experiment name `{}` is not a plain identifier", e.name));
            }
            let mut s = e.signals.clone();
            s.sort();
            s.dedup();
            if s.is_empty() || s != e.signals {
                return cfg_err(format!(
                    "experiment `{}`: signals must be nonempty, unique, in sine/qpsk/ofdm order",
                    e.name
                ));
            }
            if matches!(e.detectors.as_deref(), Some([])) {
                return cfg_err(format!("experiment `{}`: empty detector roster", e.name));
            }
            if e.train_per_bin == Some(0) || e.eval_per_bin == Some(0) {
                return cfg_err(format!("experiment `{}`: per-bin counts must be positive", e.name));
            }
        }
        let l = &self.learned;
        if l.folds < 2 || l.lambdas.is_empty() || l.lambdas.iter().any(|&v| !(v > 0.0)) {
            return cfg_err("learned: need folds >= 2 and positive lambdas".into());
        }
        self.model()
            .validate()
            .map_err(|e| Error::Config(format!("signal model: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_four_experiments() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let names: Vec<_> = cfg.experiments.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["sine", "qpsk", "ofdm", "unified"]);
        assert_eq!(cfg.train_per_bin(&cfg.experiments[3]), 600);
        assert_eq!(cfg.eval_per_bin(&cfg.experiments[0]), 500);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            [run]
            seed = 3
            detectors = ["energy"]

            [learned]
            num_features = 840

            [[experiment]]
            name = "tone"
            signals = ["sine"]
            eval_per_bin = 50
            "#,
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.run.target_pfa, 0.01);
        assert_eq!(cfg.learned.folds, 5);
        assert_eq!(cfg.learned.num_features, 840);
        assert_eq!(cfg.experiments.len(), 1);
        assert_eq!(cfg.eval_per_bin(&cfg.experiments[0]), 50);
        assert_eq!(cfg.detectors_for(&cfg.experiments[0]), vec![DetectorKind::Energy]);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "[run]\ntarget_pfa = 1.5",
            "[run]\nsnr_grid = [0, 0]",
            "[run]\nbogus = 1",
            "[[experiment]]\nname = \"a\"\nsignals = []",
            "[[experiment]]\nname = \"a\"\nsignals = [\"ofdm\", \"sine\"]",
            "[[experiment]]\nname = \"a b\"\nsignals = [\"sine\"]",
            "[waveform]\nqpsk_rolloff = 0.9",
        ] {
            let err = RunConfig::from_toml(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }
}
