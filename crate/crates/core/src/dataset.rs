//! Reproducible labelled datasets: record synthesis, the `SDLB` binary
//! record file and its key-value manifest.
//!
//! File layout (little-endian). Header: magic `SDLB`, u16 version, u16
//! signal-kind code, u32 N_s, u32 record count, u64 master seed, 32-byte
//! spec hash. Each record: u8 label, i8 SNR (dB), u64 sequence seed,
//! f32 carrier estimate, f32 phase, f32 timing offset, then N_s interleaved
//! f32 I/Q pairs for the raw baseband, the max-normalized baseband and the
//! genie template (zero-filled for noise-only records).
//!
//! Records are stored bin-major, noise-only before signal-present within a
//! bin, and by index within a class.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frontend::{dcv, design_butterworth, noise_only, noise_sigma, normalize_ml, FilterDesign, FrontEndParams};
use crate::seeds::{mix, rng_from_seed};
use crate::waveforms::{
    gen_ofdm, gen_qpsk, gen_sine, random_qpsk, CommonParams, OfdmParams, PassbandSequence,
    QpskParams, SignalKind,
};

pub const DATASET_MAGIC: &[u8; 4] = b"SDLB";
pub const DATASET_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 4 + 8 + 32;
const RECORD_PREFIX_LEN: usize = 1 + 1 + 8 + 4 + 4 + 4;
const CHUNK: usize = 512;

pub fn record_len(n_s: usize) -> usize {
    RECORD_PREFIX_LEN + 3 * n_s * 8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NoiseOnly,
    SignalPresent,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::NoiseOnly => 0,
            Label::SignalPresent => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Label::NoiseOnly),
            1 => Some(Label::SignalPresent),
            _ => None,
        }
    }

    pub fn is_signal(self) -> bool {
        self == Label::SignalPresent
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Calibration,
    Holdout,
}

impl Split {
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7261_696E,
            Split::Validation => 0x7661_6C69,
            Split::Calibration => 0x6361_6C69,
            Split::Holdout => 0x686F_6C64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Calibration => "calibration",
            Split::Holdout => "holdout",
        }
    }
}

/// Header code for a set of signal kinds: the kind's own code for a single
/// kind, otherwise `0x8000 | bitmask`.
pub fn kind_set_code(kinds: &[SignalKind]) -> u16 {
    match kinds {
        [single] => single.code(),
        many => 0x8000 | many.iter().fold(0u16, |m, k| m | (1 << k.code())),
    }
}

pub fn kinds_from_code(code: u16) -> Option<Vec<SignalKind>> {
    if code & 0x8000 == 0 {
        return SignalKind::from_code(code).map(|k| vec![k]);
    }
    let kinds: Vec<SignalKind> = SignalKind::ALL
        .iter()
        .copied()
        .filter(|k| code & (1 << k.code()) != 0)
        .collect();
    (!kinds.is_empty() && code & 0x7FF8 == 0).then_some(kinds)
}

/// Waveform and front-end parameters shared by every record of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub f_s: f64,
    pub f_true: f64,
    pub qpsk_symbol_rate: f64,
    pub qpsk_rolloff: f64,
    pub ofdm_carriers: usize,
    pub ofdm_spacing: f64,
    pub frontend: FrontEndParams,
}

impl Default for SignalModel {
    fn default() -> Self {
        let common = CommonParams::default();
        let qpsk = QpskParams::default();
        let ofdm = OfdmParams::default();
        Self {
            f_s: common.f_s,
            f_true: common.f_true,
            qpsk_symbol_rate: qpsk.f_sym,
            qpsk_rolloff: qpsk.rolloff,
            ofdm_carriers: ofdm.n_carriers,
            ofdm_spacing: ofdm.scs,
            frontend: FrontEndParams::default(),
        }
    }
}

impl SignalModel {
    pub fn validate(&self) -> Result<()> {
        self.frontend.validate(self.f_s)?;
        let common = self.common(0.0);
        common.validate()?;
        let qpsk = QpskParams {
            f_sym: self.qpsk_symbol_rate,
            rolloff: self.qpsk_rolloff,
            timing_offset: 0.0,
        };
        qpsk.validate()?;
        if qpsk.f_sym * (1.0 + qpsk.rolloff) >= self.frontend.lpf_bandwidth {
            return Err(Error::InvalidParameter(format!(
                "QPSK occupied band {} Hz does not survive the {} Hz front end",
                qpsk.f_sym * (1.0 + qpsk.rolloff),
                self.frontend.lpf_bandwidth
            )));
        }
        let ofdm = OfdmParams {
            n_carriers: self.ofdm_carriers,
            scs: self.ofdm_spacing,
            ..Default::default()
        };
        ofdm.validate()?;
        if ofdm.aggregate_symbol_rate() >= 2.0 * self.frontend.lpf_bandwidth {
            return Err(Error::InvalidParameter(
                "OFDM band does not fit the front end".into(),
            ));
        }
        Ok(())
    }

    fn common(&self, phase: f64) -> CommonParams {
        CommonParams {
            f_s: self.f_s,
            f_true: self.f_true,
            n_pass: self.frontend.n_pass(),
            phase,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kinds: Vec<SignalKind>,
    /// SNR bins in dB, strictly increasing.
    pub snr_grid: Vec<i8>,
    /// Sequences per bin per class.
    pub per_bin: usize,
    #[serde(with = "crate::seeds::wide")]
    pub master_seed: u64,
    pub split: Split,
    pub model: SignalModel,
}

impl DatasetSpec {
    pub fn new(kinds: Vec<SignalKind>, per_bin: usize, master_seed: u64, split: Split) -> Self {
        Self {
            kinds,
            snr_grid: (-30..=5).collect(),
            per_bin,
            master_seed,
            split,
            model: SignalModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::InvalidParameter("dataset needs at least one signal kind".into()));
        }
        let mut sorted = self.kinds.clone();
        sorted.sort();
        sorted.dedup();
        if sorted != self.kinds {
            return Err(Error::InvalidParameter(
                "signal kinds must be listed once, in canonical order".into(),
            ));
        }
        if self.snr_grid.is_empty() || self.snr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "SNR grid must be nonempty and strictly increasing".into(),
            ));
        }
        if self.per_bin == 0 {
            return Err(Error::InvalidParameter("per-bin count must be positive".into()));
        }
        if self.record_count() > u32::MAX as usize {
            return Err(Error::InvalidParameter("too many records for the file format".into()));
        }
        self.model.validate()
    }

    pub fn n_s(&self) -> usize {
        self.model.frontend.n_s
    }

    pub fn record_count(&self) -> usize {
        self.snr_grid.len() * 2 * self.per_bin
    }

    /// SHA-256 of the canonical TOML rendering of the spec.
    pub fn hash(&self) -> [u8; 32] {
        let text = toml::to_string(self).expect("dataset spec serializes");
        Sha256::digest(text.as_bytes()).into()
    }

    /// Signal kind attributed to a record index within its (bin, class) group.
    pub fn kind_for_index(&self, index: usize) -> SignalKind {
        self.kinds[index % self.kinds.len()]
    }

    pub fn seq_seed(&self, snr_db: i8, label: Label, index: usize) -> u64 {
        sequence_seed(self.master_seed, self.split, snr_db, label, index)
    }

    /// Position of record `i` in storage order: (bin, label, index).
    pub fn locate(&self, i: usize) -> (i8, Label, usize) {
        let bin = i / (2 * self.per_bin);
        let label = if (i / self.per_bin) % 2 == 0 {
            Label::NoiseOnly
        } else {
            Label::SignalPresent
        };
        (self.snr_grid[bin], label, i % self.per_bin)
    }
}

pub fn sequence_seed(master_seed: u64, split: Split, snr_db: i8, label: Label, index: usize) -> u64 {
    mix(&[
        master_seed,
        split.tag(),
        snr_db as i64 as u64,
        label.code() as u64,
        index as u64,
    ])
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub label: Label,
    pub snr_db: i8,
    pub kind: SignalKind,
    pub seq_seed: u64,
    pub f_c: f32,
    pub phase: f32,
    pub timing_offset: f32,
    pub iq_raw: Vec<Complex64>,
    pub iq_norm: Vec<Complex64>,
    /// Genie template; zero-filled for noise-only records.
    pub template: Vec<Complex64>,
}

impl DatasetRecord {
    /// Passband noise standard deviation of the record's bin.
    pub fn sigma(&self) -> f64 {
        noise_sigma(self.snr_db as f64)
    }

    pub fn has_template(&self) -> bool {
        self.template.iter().any(|c| c.re != 0.0 || c.im != 0.0)
    }
}

fn quantize(v: &[Complex64]) -> Vec<Complex64> {
    v.iter()
        .map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
        .collect()
}

/// Draws one signal of the given kind: random carrier phase, timing offset
/// and symbols, power-normalized over the passband window.
fn draw_signal<R: Rng + ?Sized>(
    model: &SignalModel,
    kind: SignalKind,
    rng: &mut R,
) -> Result<(PassbandSequence, f64, f64)> {
    let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let common = model.common(phase);
    match kind {
        SignalKind::Sine => Ok((gen_sine(&common)?.normalize_power()?, phase, 0.0)),
        SignalKind::Qpsk => {
            let mut qpsk = QpskParams {
                f_sym: model.qpsk_symbol_rate,
                rolloff: model.qpsk_rolloff,
                timing_offset: 0.0,
            };
            qpsk.timing_offset = rng.random_range(0.0..qpsk.symbol_period());
            let symbols = random_qpsk(rng, qpsk.symbols_needed(&common));
            Ok((gen_qpsk(&common, &qpsk, &symbols)?, phase, qpsk.timing_offset))
        }
        SignalKind::Ofdm => {
            let mut ofdm = OfdmParams {
                n_carriers: model.ofdm_carriers,
                scs: model.ofdm_spacing,
                ..Default::default()
            };
            ofdm.timing_offset = rng.random_range(0.0..ofdm.symbol_duration());
            let data: Vec<Vec<Complex64>> = (0..ofdm.symbols_needed(&common))
                .map(|_| random_qpsk(rng, ofdm.n_carriers))
                .collect();
            Ok((gen_ofdm(&common, &ofdm, &data)?, phase, ofdm.timing_offset))
        }
    }
}

/// Turns parameters and a sequence seed into a record.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub model: SignalModel,
    filter: FilterDesign,
}

impl Synthesizer {
    pub fn new(model: SignalModel) -> Result<Self> {
        model.validate()?;
        let filter = design_butterworth(
            model.frontend.lpf_order,
            model.frontend.lpf_bandwidth,
            model.f_s,
        )?;
        Ok(Self { model, filter })
    }

    pub fn filter(&self) -> &FilterDesign {
        &self.filter
    }

    /// Synthesizes one record from its sequence seed. The seed drives, in
    /// order: the carrier estimate, the signal draw (signal-present only) and
    /// the passband noise.
    pub fn synthesize(
        &self,
        kind: SignalKind,
        label: Label,
        snr_db: i8,
        seq_seed: u64,
    ) -> Result<DatasetRecord> {
        let mut rng = rng_from_seed(seq_seed);
        let fe = &self.model.frontend;
        let f_c = fe.draw_carrier(&mut rng);
        let signal = if label.is_signal() {
            Some(draw_signal(&self.model, kind, &mut rng)?)
        } else {
            None
        };
        let mut received = noise_only(fe.n_pass(), snr_db as f64, &mut rng);
        let (template, phase, timing) = match &signal {
            Some((x, phase, timing)) => {
                received.iter_mut().zip(&x.samples).for_each(|(r, s)| *r += s);
                let h = dcv(&x.samples, f_c, &self.filter, fe.n_s)?;
                (quantize(&h), *phase, *timing)
            }
            None => (vec![Complex64::new(0.0, 0.0); fe.n_s], 0.0, 0.0),
        };
        let iq = dcv(&received, f_c, &self.filter, fe.n_s)?;
        let iq_norm = normalize_ml(&iq)?;
        Ok(DatasetRecord {
            label,
            snr_db,
            kind,
            seq_seed,
            f_c: f_c as f32,
            phase: phase as f32,
            timing_offset: timing as f32,
            iq_raw: quantize(&iq),
            iq_norm: quantize(&iq_norm),
            template,
        })
    }

    /// Noiseless downconverted template of a fresh draw of `kind`.
    pub fn template(&self, kind: SignalKind, f_c: f64, seed: u64) -> Result<Vec<Complex64>> {
        let mut rng = rng_from_seed(seed);
        let (x, _, _) = draw_signal(&self.model, kind, &mut rng)?;
        Ok(quantize(&dcv(&x.samples, f_c, &self.filter, self.model.frontend.n_s)?))
    }

    /// Record `i` of a dataset spec, in storage order.
    pub fn synthesize_indexed(&self, spec: &DatasetSpec, i: usize) -> Result<DatasetRecord> {
        let (snr, label, index) = spec.locate(i);
        self.synthesize(spec.kind_for_index(index), label, snr, spec.seq_seed(snr, label, index))
    }
}

/// In-memory noise-only set for threshold calibration or held-out P_FA
/// checks. Record `j` uses SNR bin `grid[j % len]`. With templates on, each
/// record is paired with an independent template of every listed kind, drawn
/// at the record's carrier estimate.
#[derive(Clone, Debug)]
pub struct NoiseSet {
    pub kinds: Vec<SignalKind>,
    pub snr_grid: Vec<i8>,
    pub count: usize,
    pub master_seed: u64,
    pub split: Split,
    pub with_templates: bool,
}

/// A noise-only record with its paired templates (aligned with
/// [`NoiseSet::kinds`], empty when templates are off).
#[derive(Clone, Debug)]
pub struct NoiseTrial {
    pub record: DatasetRecord,
    pub templates: Vec<Vec<Complex64>>,
}

impl NoiseSet {
    pub fn trial(&self, synth: &Synthesizer, j: usize) -> Result<NoiseTrial> {
        let snr = self.snr_grid[j % self.snr_grid.len()];
        let kind = self.kinds[j % self.kinds.len()];
        let seed = sequence_seed(self.master_seed, self.split, snr, Label::NoiseOnly, j);
        let record = synth.synthesize(kind, Label::NoiseOnly, snr, seed)?;
        let templates = if self.with_templates {
            self.kinds
                .iter()
                .map(|&k| synth.template(k, record.f_c as f64, mix(&[seed, 0x7E3D, k.code() as u64])))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(NoiseTrial { record, templates })
    }

    /// Maps every trial through `f` in parallel, preserving order, without
    /// holding more than one chunk of trials in memory.
    pub fn map<T, F>(&self, synth: &Synthesizer, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&NoiseTrial) -> Result<T> + Sync,
    {
        let mut out = Vec::with_capacity(self.count);
        for start in (0..self.count).step_by(CHUNK * 4) {
            let end = (start + CHUNK * 4).min(self.count);
            let chunk: Vec<T> = (start..end)
                .into_par_iter()
                .map(|j| f(&self.trial(synth, j)?))
                .collect::<Result<_>>()?;
            out.extend(chunk);
        }
        Ok(out)
    }
}

fn encode_record(rec: &DatasetRecord, out: &mut Vec<u8>) {
    out.push(rec.label.code());
    out.push(rec.snr_db as u8);
    out.extend_from_slice(&rec.seq_seed.to_le_bytes());
    out.extend_from_slice(&rec.f_c.to_le_bytes());
    out.extend_from_slice(&rec.phase.to_le_bytes());
    out.extend_from_slice(&rec.timing_offset.to_le_bytes());
    for arr in [&rec.iq_raw, &rec.iq_norm, &rec.template] {
        for c in arr.iter() {
            out.extend_from_slice(&(c.re as f32).to_le_bytes());
            out.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
}

fn decode_record(buf: &[u8], n_s: usize, kind: SignalKind, path: &Path) -> Result<DatasetRecord> {
    let label = Label::from_code(buf[0]).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: format!("bad label byte {}", buf[0]),
    })?;
    let f32_at = |o: usize| f32::from_le_bytes(buf[o..o + 4].try_into().expect("4 bytes"));
    let iq_at = |base: usize| -> Vec<Complex64> {
        (0..n_s)
            .map(|k| {
                let o = base + 8 * k;
                Complex64::new(f32_at(o) as f64, f32_at(o + 4) as f64)
            })
            .collect()
    };
    let base = RECORD_PREFIX_LEN;
    Ok(DatasetRecord {
        label,
        snr_db: buf[1] as i8,
        kind,
        seq_seed: u64::from_le_bytes(buf[2..10].try_into().expect("8 bytes")),
        f_c: f32_at(10),
        phase: f32_at(14),
        timing_offset: f32_at(18),
        iq_raw: iq_at(base),
        iq_norm: iq_at(base + 8 * n_s),
        template: iq_at(base + 16 * n_s),
    })
}

/// Sidecar manifest (TOML key-value text).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u16,
    pub kind_code: u16,
    pub n_s: u32,
    pub records: u32,
    #[serde(with = "crate::seeds::wide")]
    pub master_seed: u64,
    pub split: Split,
    pub spec_hash: String,
    pub noise_only_records: usize,
    pub signal_present_records: usize,
    /// SHA-256 of the whole record file.
    pub checksum: String,
    pub spec: DatasetSpec,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut s = data_path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub manifest_path: PathBuf,
    pub records: usize,
    pub checksum: String,
}

fn header_bytes(spec: &DatasetSpec) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN);
    h.extend_from_slice(DATASET_MAGIC);
    h.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    h.extend_from_slice(&kind_set_code(&spec.kinds).to_le_bytes());
    h.extend_from_slice(&(spec.n_s() as u32).to_le_bytes());
    h.extend_from_slice(&(spec.record_count() as u32).to_le_bytes());
    h.extend_from_slice(&spec.master_seed.to_le_bytes());
    h.extend_from_slice(&spec.hash());
    h
}

/// Synthesizes every record of `spec` and writes the record file plus its
/// manifest. Refuses to overwrite an existing file.
pub fn generate(spec: &DatasetSpec, path: &Path) -> Result<GenerateSummary> {
    spec.validate()?;
    let mpath = manifest_path(path);
    if path.exists() || mpath.exists() {
        return Err(Error::DuplicateOutput(path.to_path_buf()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let synth = Synthesizer::new(spec.model.clone())?;
    let tmp = partial_path(path);
    let file = File::create(&tmp).map_err(|e| Error::io(format!("creating {}", tmp.display()), e))?;
    let mut writer = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let write_err = |e| Error::io(format!("writing {}", tmp.display()), e);

    let header = header_bytes(spec);
    hasher.update(&header);
    writer.write_all(&header).map_err(write_err)?;

    let total = spec.record_count();
    let rlen = record_len(spec.n_s());
    let mut counts = [0usize; 2];
    for start in (0..total).step_by(CHUNK) {
        let end = (start + CHUNK).min(total);
        let encoded: Vec<Vec<u8>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let rec = synth.synthesize_indexed(spec, i)?;
                let mut buf = Vec::with_capacity(rlen);
                encode_record(&rec, &mut buf);
                Ok(buf)
            })
            .collect::<Result<_>>()?;
        for (offset, buf) in encoded.iter().enumerate() {
            counts[spec.locate(start + offset).1.code() as usize] += 1;
            hasher.update(buf);
            writer.write_all(buf).map_err(write_err)?;
        }
    }
    writer.flush().map_err(write_err)?;
    drop(writer);
    let checksum = hex::encode(hasher.finalize());

    let manifest = DatasetManifest {
        format: "SDLB".into(),
        version: DATASET_VERSION,
        kind_code: kind_set_code(&spec.kinds),
        n_s: spec.n_s() as u32,
        records: total as u32,
        master_seed: spec.master_seed,
        split: spec.split,
        spec_hash: hex::encode(spec.hash()),
        noise_only_records: counts[0],
        signal_present_records: counts[1],
        checksum: checksum.clone(),
        spec: spec.clone(),
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Config(format!("serializing manifest: {e}")))?;
    crate::harness::write_atomic(&mpath, text.as_bytes())?;
    fs::rename(&tmp, path).map_err(|e| Error::io(format!("finalizing {}", path.display()), e))?;
    Ok(GenerateSummary {
        path: path.to_path_buf(),
        manifest_path: mpath,
        records: total,
        checksum,
    })
}

/// Record filter; `None` fields match everything.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecordFilter {
    pub bins: Option<Vec<i8>>,
    pub labels: Option<Vec<Label>>,
    pub kinds: Option<Vec<SignalKind>>,
}

impl RecordFilter {
    pub fn matches(&self, snr_db: i8, label: Label, kind: SignalKind) -> bool {
        self.bins.as_ref().is_none_or(|b| b.contains(&snr_db))
            && self.labels.as_ref().is_none_or(|l| l.contains(&label))
            && self.kinds.as_ref().is_none_or(|k| k.contains(&kind))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Verified, read-only view of a record file.
#[derive(Debug)]
pub struct Dataset {
    pub path: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Opens a record file, checking magic, version, header/manifest
    /// agreement and the content checksum.
    pub fn open(path: &Path) -> Result<Self> {
        let fmt_err = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut file =
            File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut header = vec![0u8; HEADER_LEN];
        file.read_exact(&mut header)
            .map_err(|_| fmt_err("file shorter than its header".into()))?;
        if &header[..4] != DATASET_MAGIC {
            return Err(fmt_err("missing SDLB magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let mpath = manifest_path(path);
        let text = fs::read_to_string(&mpath)
            .map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
        let manifest: DatasetManifest = toml::from_str(&text)
            .map_err(|e| fmt_err(format!("unreadable manifest: {e}")))?;
        if manifest.version != DATASET_VERSION {
            return Err(Error::Version {
                path: mpath,
                found: manifest.version,
                expected: DATASET_VERSION,
            });
        }
        let actual = file_sha256(path)?;
        if actual != manifest.checksum {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: manifest.checksum.clone(),
                actual,
            });
        }
        if header != header_bytes(&manifest.spec) {
            return Err(fmt_err("header disagrees with manifest spec".into()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.manifest.spec
    }

    pub fn len(&self) -> usize {
        self.manifest.records as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Storage indices of the records selected by `filter`.
    pub fn select(&self, filter: &RecordFilter) -> Vec<usize> {
        let spec = self.spec();
        (0..self.len())
            .filter(|&i| {
                let (snr, label, index) = spec.locate(i);
                filter.matches(snr, label, spec.kind_for_index(index))
            })
            .collect()
    }

    /// Reads records by storage index (ascending order is fastest).
    pub fn read(&self, indices: &[usize]) -> Result<Vec<DatasetRecord>> {
        let spec = self.spec();
        let n_s = spec.n_s();
        let rlen = record_len(n_s);
        let file = File::open(&self.path)
            .map_err(|e| Error::io(format!("opening {}", self.path.display()), e))?;
        let mut reader = BufReader::with_capacity(1 << 20, file);
        let mut buf = vec![0u8; rlen];
        let mut out = Vec::with_capacity(indices.len());
        let mut cursor: Option<usize> = None;
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Format {
                    path: self.path.clone(),
                    reason: format!("record {i} out of range"),
                });
            }
            if cursor != Some(i) {
                let offset = (HEADER_LEN + i * rlen) as u64;
                reader
                    .seek(SeekFrom::Start(offset))
                    .map_err(|e| Error::io("seeking record", e))?;
            }
            reader
                .read_exact(&mut buf)
                .map_err(|e| Error::io(format!("reading {}", self.path.display()), e))?;
            cursor = Some(i + 1);
            let kind = spec.kind_for_index(spec.locate(i).2);
            out.push(decode_record(&buf, n_s, kind, &self.path)?);
        }
        Ok(out)
    }

    /// Streams the selected records in stored order, `chunk` at a time.
    pub fn for_each_chunk<F>(&self, filter: &RecordFilter, chunk: usize, mut f: F) -> Result<()>
    where
        F: FnMut(Vec<DatasetRecord>) -> Result<()>,
    {
        let selected = self.select(filter);
        for part in selected.chunks(chunk.max(1)) {
            f(self.read(part)?)?;
        }
        Ok(())
    }

    /// All selected records in stored order.
    pub fn load(&self, filter: &RecordFilter) -> Result<Vec<DatasetRecord>> {
        self.read(&self.select(filter))
    }

    /// Sequence seeds of every record, for leakage checks.
    pub fn seeds(&self) -> Vec<u64> {
        let spec = self.spec();
        (0..self.len())
            .map(|i| {
                let (snr, label, index) = spec.locate(i);
                spec.seq_seed(snr, label, index)
            })
            .collect()
    }
}

/// Fails if two datasets share any sequence seed.
pub fn check_disjoint(a: &Dataset, b: &Dataset) -> Result<()> {
    let seen: std::collections::HashSet<u64> = a.seeds().into_iter().collect();
    if let Some(s) = b.seeds().into_iter().find(|s| seen.contains(s)) {
        return Err(Error::Leakage(format!(
            "{} and {} share sequence seed {s:#018x}",
            a.path.display(),
            b.path.display()
        )));
    }
    Ok(())
}

/// Converts stored single-precision I/Q back to the in-memory type.
pub fn to_complex32(v: &[Complex64]) -> Vec<Complex32> {
    v.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::{mf_stat, MatchedTemplate};

    fn small_spec(kinds: Vec<SignalKind>, seed: u64, split: Split) -> DatasetSpec {
        DatasetSpec {
            snr_grid: vec![-10, 0, 5],
            ..DatasetSpec::new(kinds, 4, seed, split)
        }
    }

    #[test]
    fn default_grid_counts() {
        let spec = DatasetSpec::new(vec![SignalKind::Sine], 1000, 1, Split::Train);
        assert_eq!(spec.snr_grid.len(), 36);
        assert_eq!(spec.record_count(), 72_000);
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in SignalKind::ALL {
            assert_eq!(kinds_from_code(kind_set_code(&[k])), Some(vec![k]));
        }
        let all = SignalKind::ALL.to_vec();
        assert_eq!(kinds_from_code(kind_set_code(&all)), Some(all));
        assert_eq!(kinds_from_code(7), None);
    }

    #[test]
    fn locate_matches_storage_order() {
        let spec = small_spec(vec![SignalKind::Qpsk], 1, Split::Train);
        assert_eq!(spec.locate(0), (-10, Label::NoiseOnly, 0));
        assert_eq!(spec.locate(4), (-10, Label::SignalPresent, 0));
        assert_eq!(spec.locate(9), (0, Label::NoiseOnly, 1));
        assert_eq!(spec.locate(23), (5, Label::SignalPresent, 3));
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(vec![SignalKind::Sine], 1, Split::Train);
        spec.snr_grid = vec![0, 0];
        assert!(spec.validate().is_err());
        spec.snr_grid = vec![];
        assert!(spec.validate().is_err());
        let mut spec = small_spec(vec![SignalKind::Ofdm, SignalKind::Sine], 1, Split::Train);
        assert!(spec.validate().is_err());
        spec.kinds = vec![SignalKind::Sine, SignalKind::Ofdm];
        assert!(spec.validate().is_ok());
        spec.model.qpsk_rolloff = 0.7;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn record_invariants() {
        let spec = small_spec(vec![SignalKind::Sine, SignalKind::Qpsk, SignalKind::Ofdm], 3, Split::Train);
        let synth = Synthesizer::new(spec.model.clone()).unwrap();
        for i in 0..spec.record_count() {
            let r = synth.synthesize_indexed(&spec, i).unwrap();
            assert_eq!(r.iq_raw.len(), 500);
            let peak = r.iq_norm.iter().map(|c| c.norm()).fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-6);
            assert!((74e3..=76e3).contains(&(r.f_c as f64)));
            assert_eq!(r.has_template(), r.label.is_signal());
            assert!(r.iq_raw.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let spec = small_spec(vec![SignalKind::Ofdm], 5, Split::Validation);
        let synth = Synthesizer::new(spec.model.clone()).unwrap();
        let rec = synth.synthesize_indexed(&spec, 7).unwrap();
        let mut buf = Vec::new();
        encode_record(&rec, &mut buf);
        assert_eq!(buf.len(), record_len(500));
        let back = decode_record(&buf, 500, SignalKind::Ofdm, Path::new("mem")).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn template_correlates_with_received_at_high_snr() {
        let spec = DatasetSpec {
            snr_grid: vec![5],
            ..DatasetSpec::new(vec![SignalKind::Qpsk], 50, 9, Split::Validation)
        };
        let synth = Synthesizer::new(spec.model.clone()).unwrap();
        for i in 50..100 {
            let r = synth.synthesize_indexed(&spec, i).unwrap();
            let h = MatchedTemplate::new(r.template.clone()).unwrap();
            assert!(mf_stat(&r.iq_raw, &h, r.sigma()).unwrap() > 5.0);
        }
    }

    #[test]
    fn train_and_validation_seeds_are_disjoint() {
        let a = DatasetSpec::new(vec![SignalKind::Sine], 50, 1, Split::Train);
        let b = DatasetSpec::new(vec![SignalKind::Sine], 50, 1, Split::Validation);
        let seeds = |s: &DatasetSpec| -> std::collections::HashSet<u64> {
            (0..s.record_count())
                .map(|i| {
                    let (snr, l, idx) = s.locate(i);
                    s.seq_seed(snr, l, idx)
                })
                .collect()
        };
        let (sa, sb) = (seeds(&a), seeds(&b));
        assert_eq!(sa.len(), a.record_count());
        assert!(sa.is_disjoint(&sb));
    }
}
