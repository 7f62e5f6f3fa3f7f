//! Stage-by-stage experiment driver.
//!
//! Output layout under the run directory:
//!
//! ```text
//! <exp>/train.sdlb, <exp>/valid.sdlb   (+ .manifest sidecars)
//! <exp>/model.sdlm, <exp>/training.toml
//! calibration.toml
//! <exp>/curves.toml
//! manifest.toml, <exp>/curves.csv, <exp>/chart.svg, <exp>/summary.toml
//! stages/<stage>.toml                  (stamps used to skip finished work)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{calibrate, verify_pfa, CalibrationResult, PfaEstimate};
use crate::dataset::{
    file_sha256, generate, manifest_path, Dataset, DatasetRecord, DatasetSpec, Label, NoiseSet,
    NoiseTrial, RecordFilter, Split, Synthesizer,
};
use crate::detectors::{energy_stat, fisher_stat, mf_stat, DetectorKind, MatchedTemplate};
use crate::error::{Error, Result};
use crate::learned::kernels::build_kernel_bank;
use crate::learned::ridge::{CvReport, RidgeAccumulator, RidgeConfig};
use crate::learned::{persist, LearnedDetector};
use crate::seeds::mix;
use crate::waveforms::SignalKind;

use super::config::{ExperimentConfig, RunConfig};
use super::eval::{evaluate, monotonicity_violations, snr_at_pd, EvalCurve};
use super::report::{chart_title, svg_chart, to_csv};
use super::write_atomic;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

const TRAIN_CHUNK: usize = 1024;
const CALIBRATION_TAG: u64 = 0xCA11_B4A7;
const HOLDOUT_TAG: u64 = 0x401D_0u64;

/// Pipeline stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Gen,
    Train,
    Calibrate,
    Eval,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Train => "train",
            Stage::Calibrate => "calibrate",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

/// Stamp left by a finished stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_hash: String,
    /// Output path (relative to the run directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock seconds of the run that produced the outputs.
    pub elapsed_s: f64,
}

/// One calibrated threshold of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub experiment: String,
    pub label: String,
    pub detector: DetectorKind,
    /// Signal kind the curve is restricted to, for per-kind reporting.
    pub kind: Option<SignalKind>,
    pub calibration: CalibrationResult,
    pub holdout: PfaEstimate,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub calibration_trials: usize,
    pub holdout_trials: usize,
    #[serde(rename = "entry")]
    pub entries: Vec<CalibrationEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub experiment: String,
    pub rows: usize,
    pub num_features: usize,
    pub lambda: f64,
    pub cv: CvReport,
    #[serde(with = "crate::seeds::wide")]
    pub training_fingerprint: u64,
}

/// Curves of one experiment plus the noise-only exceedance rate measured on
/// the validation set's own noise-only records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub experiment: String,
    pub signals: Vec<SignalKind>,
    #[serde(rename = "curve")]
    pub curves: Vec<EvalCurve>,
    pub validation_pfa: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub experiment: String,
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_sha256: String,
    #[serde(with = "crate::seeds::wide")]
    pub seed: u64,
    pub datasets: Vec<ArtifactHash>,
    pub models: Vec<ArtifactHash>,
    pub calibration: Vec<CalibrationEntry>,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorSummary {
    pub label: String,
    /// SNR (dB) at P_d = 0.5, absent when the curve never crosses it.
    pub snr_at_pd_50: Option<f64>,
    pub gamma: f64,
    pub calibration_pfa: f64,
    pub holdout_pfa: f64,
    pub holdout_ci: [f64; 2],
    pub validation_pfa: f64,
    pub monotonicity_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub title: String,
    #[serde(rename = "detector")]
    pub detectors: Vec<DetectorSummary>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_of<T: Serialize + ?Sized>(value: &T) -> String {
    #[derive(Serialize)]
    struct Wrap<'a, T: ?Sized> {
        v: &'a T,
    }
    sha256_hex(toml::to_string(&Wrap { v: value }).expect("stage inputs serialize").as_bytes())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

fn fingerprint(checksum: &str) -> u64 {
    u64::from_str_radix(&checksum[..16], 16).unwrap_or(0)
}

/// Score column of the noise-only pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Column {
    Energy,
    Fisher,
    Mf(SignalKind),
    Learned(usize),
}

pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    synth: Synthesizer,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let synth = Synthesizer::new(config.model()).map_err(|e| Error::Config(e.to_string()))?;
        let out = config.run.out.clone();
        Ok(Self { config, out, synth })
    }

    pub fn exp_dir(&self, exp: &ExperimentConfig) -> PathBuf {
        self.out.join(&exp.name)
    }

    pub fn train_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("train.sdlb")
    }

    pub fn valid_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("valid.sdlb")
    }

    pub fn model_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("model.sdlm")
    }

    pub fn curves_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("curves.toml")
    }

    pub fn csv_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("curves.csv")
    }

    pub fn svg_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("chart.svg")
    }

    pub fn summary_path(&self, exp: &ExperimentConfig) -> PathBuf {
        self.exp_dir(exp).join("summary.toml")
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.out.join("calibration.toml")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join("manifest.toml")
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.out.join("stages").join(format!("{}.toml", stage.replace(':', "-")))
    }

    fn uses_learned(&self, exp: &ExperimentConfig) -> bool {
        self.config.detectors_for(exp).contains(&DetectorKind::Learned)
    }

    pub fn dataset_spec(&self, exp: &ExperimentConfig, split: Split) -> DatasetSpec {
        let name_hash = u64::from_le_bytes(Sha256::digest(exp.name.as_bytes())[..8].try_into().expect("8 bytes"));
        let per_bin = match split {
            Split::Train => self.config.train_per_bin(exp),
            _ => self.config.eval_per_bin(exp),
        };
        DatasetSpec {
            kinds: exp.signals.clone(),
            snr_grid: self.config.run.snr_grid.clone(),
            per_bin,
            master_seed: mix(&[self.config.run.seed, name_hash, split.tag()]),
            split,
            model: self.config.model(),
        }
    }

    fn all_kinds(&self) -> Vec<SignalKind> {
        let mut k: Vec<SignalKind> = self
            .config
            .experiments
            .iter()
            .flat_map(|e| e.signals.iter().copied())
            .collect();
        k.sort();
        k.dedup();
        k
    }

    fn noise_set(&self, split: Split) -> NoiseSet {
        let (count, tag) = match split {
            Split::Holdout => (self.config.run.holdout_trials, HOLDOUT_TAG),
            _ => (self.config.run.calibration_trials, CALIBRATION_TAG),
        };
        let with_templates = self
            .config
            .experiments
            .iter()
            .any(|e| self.config.detectors_for(e).contains(&DetectorKind::MatchedFilter));
        NoiseSet {
            kinds: self.all_kinds(),
            snr_grid: self.config.run.snr_grid.clone(),
            count,
            master_seed: mix(&[self.config.run.seed, tag]),
            split,
            with_templates,
        }
    }

    /// Runs `body` unless a stamp shows identical inputs and intact outputs.
    /// `hashed` outputs are checksummed into the stamp; `extra` outputs are
    /// only removed when the stage reruns.
    fn stage<F>(&self, name: &str, input_hash: String, hashed: &[PathBuf], extra: &[PathBuf], body: F) -> Result<StageRecord>
    where
        F: FnOnce() -> Result<()>,
    {
        let wrap = |e: Error| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let stamp_path = self.stamp_path(name);
        if stamp_path.exists() {
            let old: StageRecord = read_toml(&stamp_path).map_err(wrap)?;
            if old.input_hash == input_hash && self.outputs_match(&old, hashed) && extra.iter().all(|p| p.exists()) {
                info!("{name}: up to date, skipped");
                return Ok(old);
            }
        }
        for p in hashed.iter().chain(extra) {
            if p.exists() {
                fs::remove_file(p).map_err(|e| wrap(Error::io(format!("removing stale {}", p.display()), e)))?;
            }
        }
        info!("{name}: running");
        let start = Instant::now();
        body().map_err(wrap)?;
        let elapsed_s = start.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for p in hashed {
            outputs.insert(self.relative(p), file_sha256(p).map_err(wrap)?);
        }
        let record = StageRecord {
            stage: name.to_string(),
            input_hash,
            outputs,
            elapsed_s,
        };
        write_toml(&stamp_path, &record).map_err(wrap)?;
        info!("{name}: done in {elapsed_s:.1} s");
        Ok(record)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.out)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    }

    fn outputs_match(&self, old: &StageRecord, hashed: &[PathBuf]) -> bool {
        hashed.len() == old.outputs.len()
            && hashed.iter().all(|p| {
                old.outputs
                    .get(&self.relative(p))
                    .is_some_and(|h| file_sha256(p).ok().as_deref() == Some(h.as_str()))
            })
    }

    /// Runs every stage up to and including `until`, returning the stamps.
    pub fn run_until(&self, until: Stage) -> Result<Vec<StageRecord>> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(format!("creating {}", self.out.display()), e))?;
        let mut done = Vec::new();
        let result = self.run_stages(until, &mut done);
        if let Err(e) = result {
            let state = RunState {
                failed: e.to_string(),
                completed: done,
            };
            let _ = write_toml(&self.out.join("manifest.failed.toml"), &state);
            return Err(e);
        }
        let _ = fs::remove_file(self.out.join("manifest.failed.toml"));
        Ok(done)
    }

    pub fn run(&self) -> Result<RunManifest> {
        self.run_until(Stage::Report)?;
        read_toml(&self.manifest_path())
    }

    fn run_stages(&self, until: Stage, done: &mut Vec<StageRecord>) -> Result<()> {
        for exp in &self.config.experiments {
            done.push(self.gen(exp)?);
        }
        if until == Stage::Gen {
            return Ok(());
        }
        for exp in &self.config.experiments {
            if self.uses_learned(exp) {
                done.push(self.train(exp)?);
            }
        }
        if until == Stage::Train {
            return Ok(());
        }
        done.push(self.calibrate()?);
        if until == Stage::Calibrate {
            return Ok(());
        }
        for exp in &self.config.experiments {
            done.push(self.eval(exp)?);
        }
        if until == Stage::Eval {
            return Ok(());
        }
        done.push(self.report(done)?);
        Ok(())
    }

    fn gen(&self, exp: &ExperimentConfig) -> Result<StageRecord> {
        let mut specs = vec![(self.valid_path(exp), self.dataset_spec(exp, Split::Validation))];
        if self.uses_learned(exp) {
            specs.insert(0, (self.train_path(exp), self.dataset_spec(exp, Split::Train)));
        }
        let spec_list: Vec<&DatasetSpec> = specs.iter().map(|(_, s)| s).collect();
        let hashed: Vec<PathBuf> = specs.iter().map(|(p, _)| manifest_path(p)).collect();
        let extra: Vec<PathBuf> = specs.iter().map(|(p, _)| p.clone()).collect();
        self.stage(&format!("gen:{}", exp.name), hash_of(&("gen", spec_list)), &hashed, &extra, || {
            for (path, spec) in &specs {
                let s = generate(spec, path)?;
                info!("  {} records -> {}", s.records, path.display());
            }
            Ok(())
        })
    }

    fn train(&self, exp: &ExperimentConfig) -> Result<StageRecord> {
        let train_path = self.train_path(exp);
        let data_manifest = fs::read_to_string(manifest_path(&train_path))
            .map_err(|e| Error::io(format!("reading manifest of {}", train_path.display()), e))?;
        let input = hash_of(&("train", sha256_hex(data_manifest.as_bytes()), &self.config.learned));
        let model_path = self.model_path(exp);
        let report_path = self.exp_dir(exp).join("training.toml");
        self.stage(
            &format!("train:{}", exp.name),
            input,
            &[model_path.clone(), report_path.clone()],
            &[],
            || {
                let data = Dataset::open(&train_path)?;
                let (det, report) = self.fit_learned(exp, &data)?;
                persist::save(&det, &model_path)?;
                write_toml(&report_path, &report)
            },
        )
    }

    /// Fits biases and ridge weights on a training dataset.
    pub fn fit_learned(&self, exp: &ExperimentConfig, data: &Dataset) -> Result<(LearnedDetector, TrainingReport)> {
        let l = &self.config.learned;
        let fp = fingerprint(&data.manifest.checksum);
        let mut bank = build_kernel_bank(data.spec().n_s(), l.num_features, l.seed)?;
        bank.fit_biases(data.len(), fp, |i| {
            Ok(data.read(&[i])?.pop().expect("one record").iq_norm)
        })?;
        let mut acc = RidgeAccumulator::new(bank.num_features, l.folds)?;
        data.for_each_chunk(&RecordFilter::default(), TRAIN_CHUNK, |recs| {
            let rows: Vec<Vec<f64>> = recs
                .par_iter()
                .map(|r| bank.transform(&r.iq_norm))
                .collect::<Result<_>>()?;
            let labels: Vec<bool> = recs.iter().map(|r| r.label.is_signal()).collect();
            acc.push_block(&rows, &labels)
        })?;
        let rows = acc.rows();
        let (model, cv) = acc.finish(&RidgeConfig {
            lambdas: l.lambdas.clone(),
            folds: l.folds,
        })?;
        let report = TrainingReport {
            experiment: exp.name.clone(),
            rows,
            num_features: bank.num_features,
            lambda: model.lambda,
            cv,
            training_fingerprint: fp,
        };
        Ok((
            LearnedDetector {
                bank,
                model,
                training_fingerprint: fp,
            },
            report,
        ))
    }

    fn load_models(&self) -> Result<Vec<Option<LearnedDetector>>> {
        self.config
            .experiments
            .iter()
            .map(|e| {
                if self.uses_learned(e) {
                    persist::load(&self.model_path(e)).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect()
    }

    /// Calibration entries each experiment needs, with the pool column
    /// that calibrates them.
    fn plan(&self) -> Vec<(usize, String, DetectorKind, Option<SignalKind>, Column)> {
        let mut plan = Vec::new();
        for (ei, exp) in self.config.experiments.iter().enumerate() {
            let multi = exp.is_multi_kind();
            for d in self.config.detectors_for(exp) {
                let per_kind: Vec<Option<SignalKind>> = if multi && d != DetectorKind::Energy {
                    exp.signals.iter().map(|&k| Some(k)).collect()
                } else {
                    vec![None]
                };
                for kind in per_kind {
                    let column = match d {
                        DetectorKind::Energy => Column::Energy,
                        DetectorKind::Fisher => Column::Fisher,
                        DetectorKind::MatchedFilter => Column::Mf(kind.unwrap_or(exp.signals[0])),
                        DetectorKind::Learned => Column::Learned(ei),
                    };
                    plan.push((ei, super::eval::curve_label(d, kind), d, kind, column));
                }
            }
        }
        plan
    }

    fn score_pool(
        &self,
        pool: &NoiseSet,
        columns: &[Column],
        models: &[Option<LearnedDetector>],
    ) -> Result<Vec<Vec<f64>>> {
        let learned: Vec<usize> = columns
            .iter()
            .filter_map(|c| match *c {
                Column::Learned(e) => Some(e),
                _ => None,
            })
            .collect();
        let detectors: Vec<&LearnedDetector> = learned
            .iter()
            .map(|&e| models[e].as_ref().expect("model loaded"))
            .collect();
        let rows = pool.map(&self.synth, |trial: &NoiseTrial| {
            let rec = &trial.record;
            let learned_scores = LearnedDetector::score_many(&detectors, &rec.iq_norm)?;
            columns
                .iter()
                .map(|c| match *c {
                    Column::Energy => energy_stat(&rec.iq_raw, rec.sigma()),
                    Column::Fisher => fisher_stat(&rec.iq_raw),
                    Column::Mf(kind) => {
                        let i = pool.kinds.iter().position(|&k| k == kind).expect("pool covers kind");
                        let h = MatchedTemplate::new(trial.templates[i].clone())?;
                        mf_stat(&rec.iq_raw, &h, rec.sigma())
                    }
                    Column::Learned(e) => {
                        Ok(learned_scores[learned.iter().position(|&l| l == e).expect("learned column")])
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        Ok((0..columns.len())
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect())
    }

    fn calibrate(&self) -> Result<StageRecord> {
        let plan = self.plan();
        let mut columns: Vec<Column> = Vec::new();
        for (.., c) in &plan {
            if !columns.contains(c) {
                columns.push(*c);
            }
        }
        let model_hashes: Vec<String> = self
            .config
            .experiments
            .iter()
            .map(|e| {
                if self.uses_learned(e) {
                    file_sha256(&self.model_path(e))
                } else {
                    Ok(String::new())
                }
            })
            .collect::<Result<_>>()?;
        let rosters: Vec<(String, Vec<SignalKind>, Vec<DetectorKind>)> = self
            .config
            .experiments
            .iter()
            .map(|e| (e.name.clone(), e.signals.clone(), self.config.detectors_for(e)))
            .collect();
        let r = &self.config.run;
        let input = hash_of(&(
            "calibrate",
            (r.seed, r.calibration_trials, r.holdout_trials, r.target_pfa, r.tolerance),
            &r.snr_grid,
            &self.config.model(),
            rosters,
            model_hashes,
        ));
        let path = self.calibration_path();
        self.stage("calibrate", input, &[path.clone()], &[], || {
            let models = self.load_models()?;
            let calib = self.score_pool(&self.noise_set(Split::Calibration), &columns, &models)?;
            let hold = self.score_pool(&self.noise_set(Split::Holdout), &columns, &models)?;
            let mut entries = Vec::new();
            for (ei, label, detector, kind, column) in &plan {
                let ci = columns.iter().position(|c| c == column).expect("column planned");
                let calibration = calibrate(*detector, &calib[ci], r.target_pfa, r.tolerance)?;
                let holdout = verify_pfa(calibration.gamma, &hold[ci]);
                entries.push(CalibrationEntry {
                    experiment: self.config.experiments[*ei].name.clone(),
                    label: label.clone(),
                    detector: *detector,
                    kind: *kind,
                    calibration,
                    holdout,
                });
            }
            write_toml(
                &path,
                &CalibrationFile {
                    calibration_trials: r.calibration_trials,
                    holdout_trials: r.holdout_trials,
                    entries,
                },
            )
        })
    }

    fn eval(&self, exp: &ExperimentConfig) -> Result<StageRecord> {
        let valid = self.valid_path(exp);
        let data_manifest = fs::read_to_string(manifest_path(&valid))
            .map_err(|e| Error::io(format!("reading manifest of {}", valid.display()), e))?;
        let model_hash = if self.uses_learned(exp) {
            file_sha256(&self.model_path(exp))?
        } else {
            String::new()
        };
        let input = hash_of(&(
            "eval",
            sha256_hex(data_manifest.as_bytes()),
            file_sha256(&self.calibration_path())?,
            model_hash,
        ));
        let out = self.curves_path(exp);
        self.stage(&format!("eval:{}", exp.name), input, &[out.clone()], &[], || {
            let file = self.evaluate_experiment(exp)?;
            write_toml(&out, &file)
        })
    }

    /// Scores the validation set against the calibrated thresholds.
    pub fn evaluate_experiment(&self, exp: &ExperimentConfig) -> Result<CurveFile> {
        let train_spec = self.dataset_spec(exp, Split::Train);
        let data = Dataset::open(&self.valid_path(exp))?;
        check_spec_disjoint(&train_spec, data.spec())?;
        let calib: CalibrationFile = read_toml(&self.calibration_path())?;
        let entries: Vec<&CalibrationEntry> = calib.entries.iter().filter(|e| e.experiment == exp.name).collect();
        let roster = self.config.detectors_for(exp);
        let model = if roster.contains(&DetectorKind::Learned) {
            Some(persist::load(&self.model_path(exp))?)
        } else {
            None
        };

        // per record: (snr, label, kind, scores by detector)
        let mut scored: Vec<(i8, Label, SignalKind, Vec<f64>)> = Vec::with_capacity(data.len());
        let spec = data.spec().clone();
        for &snr in &spec.snr_grid {
            let filter = RecordFilter {
                bins: Some(vec![snr]),
                ..Default::default()
            };
            let recs = data.load(&filter)?;
            let per_bin = spec.per_bin;
            let rows: Vec<Vec<f64>> = recs
                .par_iter()
                .enumerate()
                .map(|(i, rec)| {
                    let partner = &recs[if i < per_bin { i + per_bin } else { i }];
                    score_record(&roster, rec, &partner.template, model.as_ref())
                })
                .collect::<Result<_>>()?;
            for (rec, row) in recs.iter().zip(rows) {
                scored.push((rec.snr_db, rec.label, rec.kind, row));
            }
        }

        let mut curves = Vec::new();
        let mut validation_pfa = BTreeMap::new();
        for entry in &entries {
            let di = roster.iter().position(|d| *d == entry.detector).expect("detector in roster");
            let keep = |k: SignalKind| entry.kind.is_none_or(|want| want == k);
            let h1: Vec<(i8, f64)> = scored
                .iter()
                .filter(|(_, l, k, _)| l.is_signal() && keep(*k))
                .map(|(s, _, _, row)| (*s, row[di]))
                .collect();
            let h0: Vec<f64> = scored
                .iter()
                .filter(|(_, l, k, _)| !l.is_signal() && keep(*k))
                .map(|(.., row)| row[di])
                .collect();
            validation_pfa.insert(entry.label.clone(), verify_pfa(entry.calibration.gamma, &h0).pfa);
            curves.push(evaluate(
                entry.detector,
                entry.kind,
                &entry.calibration,
                entry.holdout,
                &spec.snr_grid,
                &h1,
            )?);
        }
        Ok(CurveFile {
            experiment: exp.name.clone(),
            signals: exp.signals.clone(),
            curves,
            validation_pfa,
        })
    }

    fn report(&self, done: &[StageRecord]) -> Result<StageRecord> {
        let curve_hashes: Vec<String> = self
            .config
            .experiments
            .iter()
            .map(|e| file_sha256(&self.curves_path(e)))
            .collect::<Result<_>>()?;
        let input = hash_of(&("report", curve_hashes, hash_of(done), TOOL_VERSION));
        let mut hashed = vec![self.manifest_path()];
        for e in &self.config.experiments {
            hashed.extend([self.csv_path(e), self.svg_path(e), self.summary_path(e)]);
        }
        self.stage("report", input, &hashed, &[], || {
            let manifest = self.build_manifest(done)?;
            write_toml(&self.manifest_path(), &manifest)?;
            for e in &self.config.experiments {
                let file: CurveFile = read_toml(&self.curves_path(e))?;
                let title = chart_title(&e.signals);
                write_atomic(&self.csv_path(e), to_csv(&file.curves).as_bytes())?;
                write_atomic(&self.svg_path(e), svg_chart(&title, &file.curves).as_bytes())?;
                write_toml(&self.summary_path(e), &summarize(&file, title))?;
            }
            Ok(())
        })
    }

    fn build_manifest(&self, done: &[StageRecord]) -> Result<RunManifest> {
        let mut datasets = Vec::new();
        let mut models = Vec::new();
        for e in &self.config.experiments {
            let mut paths = vec![("validation", self.valid_path(e))];
            if self.uses_learned(e) {
                paths.insert(0, ("train", self.train_path(e)));
                models.push(ArtifactHash {
                    experiment: e.name.clone(),
                    role: "model".into(),
                    path: self.relative(&self.model_path(e)),
                    sha256: file_sha256(&self.model_path(e))?,
                });
            }
            for (role, p) in paths {
                let m: crate::dataset::DatasetManifest = read_toml(&manifest_path(&p))?;
                datasets.push(ArtifactHash {
                    experiment: e.name.clone(),
                    role: role.into(),
                    path: self.relative(&p),
                    sha256: m.checksum,
                });
            }
        }
        let calib: CalibrationFile = read_toml(&self.calibration_path())?;
        Ok(RunManifest {
            tool_version: TOOL_VERSION.into(),
            config_sha256: sha256_hex(self.config.to_toml().as_bytes()),
            seed: self.config.run.seed,
            datasets,
            models,
            calibration: calib.entries,
            stages: done.to_vec(),
        })
    }

    pub fn load_curves(&self, exp: &ExperimentConfig) -> Result<CurveFile> {
        read_toml(&self.curves_path(exp))
    }

    pub fn load_calibration(&self) -> Result<CalibrationFile> {
        read_toml(&self.calibration_path())
    }

    pub fn load_stamp(&self, stage: &str) -> Result<StageRecord> {
        read_toml(&self.stamp_path(stage))
    }
}

#[derive(Serialize)]
struct RunState {
    failed: String,
    completed: Vec<StageRecord>,
}

/// Scores one record with every detector of the roster, in roster order.
/// `template` is the genie template paired with the record.
pub fn score_record(
    roster: &[DetectorKind],
    rec: &DatasetRecord,
    template: &[Complex64],
    model: Option<&LearnedDetector>,
) -> Result<Vec<f64>> {
    roster
        .iter()
        .map(|d| match d {
            DetectorKind::Energy => energy_stat(&rec.iq_raw, rec.sigma()),
            DetectorKind::Fisher => fisher_stat(&rec.iq_raw),
            DetectorKind::MatchedFilter => mf_stat(&rec.iq_raw, &MatchedTemplate::new(template.to_vec())?, rec.sigma()),
            DetectorKind::Learned => model
                .ok_or_else(|| Error::InvalidParameter("learned detector has no model".into()))?
                .score(&rec.iq_norm),
        })
        .collect()
}

/// Fails if the two specs would share any sequence seed.
pub fn check_spec_disjoint(a: &DatasetSpec, b: &DatasetSpec) -> Result<()> {
    let seeds = |s: &DatasetSpec| -> Vec<u64> {
        (0..s.record_count())
            .map(|i| {
                let (snr, l, idx) = s.locate(i);
                s.seq_seed(snr, l, idx)
            })
            .collect()
    };
    let seen: HashSet<u64> = seeds(a).into_iter().collect();
    if let Some(s) = seeds(b).into_iter().find(|s| seen.contains(s)) {
        return Err(Error::Leakage(format!(
            "{} and {} specs share sequence seed {s:#018x}",
            a.split.name(),
            b.split.name()
        )));
    }
    Ok(())
}

pub fn summarize(file: &CurveFile, title: String) -> ExperimentSummary {
    ExperimentSummary {
        experiment: file.experiment.clone(),
        title,
        detectors: file
            .curves
            .iter()
            .map(|c| DetectorSummary {
                label: c.label.clone(),
                snr_at_pd_50: snr_at_pd(c, 0.5).ok(),
                gamma: c.calibration.gamma,
                calibration_pfa: c.calibration.achieved_pfa,
                holdout_pfa: c.pfa_check.pfa,
                holdout_ci: [c.pfa_check.ci_lo, c.pfa_check.ci_hi],
                validation_pfa: file.validation_pfa.get(&c.label).copied().unwrap_or(f64::NAN),
                monotonicity_violations: monotonicity_violations(c).len(),
            })
            .collect(),
    }
}
