use std::fs;
use std::path::Path;

use sigdetect::dataset::{
    generate, manifest_path, Dataset, DatasetSpec, Label, RecordFilter, Split, DATASET_VERSION,
};
use sigdetect::waveforms::SignalKind;
use sigdetect::Error;

fn small_spec(kinds: Vec<SignalKind>) -> DatasetSpec {
    let mut spec = DatasetSpec::new(kinds, 4, 99, Split::Validation);
    spec.snr_grid = vec![-12, -3, 4];
    spec
}

fn write(dir: &Path, name: &str, spec: &DatasetSpec) -> std::path::PathBuf {
    let path = dir.join(name);
    generate(spec, &path).unwrap();
    path
}

#[test]
fn generate_then_open_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(vec![SignalKind::Qpsk]);
    let path = write(dir.path(), "v.sdlb", &spec);
    let data = Dataset::open(&path).unwrap();
    assert_eq!(data.len(), 24);
    assert_eq!(data.spec(), &spec);
    let records = data.read(&(0..data.len()).collect::<Vec<_>>()).unwrap();
    for (i, r) in records.iter().enumerate() {
        let (snr, label, idx) = spec.locate(i);
        assert_eq!((r.snr_db, r.label), (snr, label));
        assert_eq!(r.seq_seed, spec.seq_seed(snr, label, idx));
        assert_eq!(r.has_template(), label == Label::SignalPresent);
        let peak = r.iq_norm.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-6);
    }
}

#[test]
fn existing_output_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(vec![SignalKind::Sine]);
    let path = write(dir.path(), "d.sdlb", &spec);
    let before = fs::read(&path).unwrap();
    assert!(matches!(generate(&spec, &path), Err(Error::DuplicateOutput(_))));
    assert_eq!(fs::read(&path).unwrap(), before);
}

#[test]
fn truncated_file_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "t.sdlb", &small_spec(vec![SignalKind::Sine]));
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    let err = Dataset::open(&path).unwrap_err();
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn flipped_payload_byte_fails_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "f.sdlb", &small_spec(vec![SignalKind::Ofdm]));
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(Dataset::open(&path), Err(Error::Checksum { .. })));
}

#[test]
fn version_mismatch_is_rejected_before_anything_else() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "x.sdlb", &small_spec(vec![SignalKind::Sine]));
    let mut bytes = fs::read(&path).unwrap();
    bytes[4..6].copy_from_slice(&(DATASET_VERSION + 1).to_le_bytes());
    fs::write(&path, &bytes).unwrap();
    let err = Dataset::open(&path).unwrap_err();
    assert!(
        matches!(err, Error::Version { found, .. } if found == DATASET_VERSION + 1),
        "{err}"
    );
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn missing_manifest_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "m.sdlb", &small_spec(vec![SignalKind::Sine]));
    fs::remove_file(manifest_path(&path)).unwrap();
    assert!(Dataset::open(&path).is_err());
}

#[test]
fn single_bin_filter_selects_one_bin() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(SignalKind::ALL.to_vec());
    let path = write(dir.path(), "u.sdlb", &spec);
    let data = Dataset::open(&path).unwrap();
    let filter = RecordFilter {
        bins: Some(vec![-3]),
        ..Default::default()
    };
    let picked = data.read(&data.select(&filter)).unwrap();
    assert_eq!(picked.len(), 2 * spec.per_bin);
    assert!(picked.iter().all(|r| r.snr_db == -3));

    let qpsk_h1 = RecordFilter {
        bins: Some(vec![4]),
        labels: Some(vec![Label::SignalPresent]),
        kinds: Some(vec![SignalKind::Qpsk]),
    };
    let picked = data.read(&data.select(&qpsk_h1)).unwrap();
    assert!(!picked.is_empty());
    assert!(picked
        .iter()
        .all(|r| r.kind == SignalKind::Qpsk && r.label == Label::SignalPresent && r.snr_db == 4));

    let mut seen = 0;
    data.for_each_chunk(&filter, 3, |chunk| {
        assert!(chunk.len() <= 3);
        seen += chunk.len();
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, 2 * spec.per_bin);
}

#[test]
fn thread_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(SignalKind::ALL.to_vec());
    let build = |threads: usize, name: &str| {
        let path = dir.path().join(name);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate(&spec, &path))
            .unwrap();
        (fs::read(&path).unwrap(), fs::read(manifest_path(&path)).unwrap())
    };
    let a = build(1, "a.sdlb");
    assert_eq!(a, build(3, "b.sdlb"));
    assert_eq!(a, build(1, "c.sdlb"));
}

#[test]
fn train_and_validation_specs_are_disjoint() {
    let mut train = small_spec(vec![SignalKind::Sine]);
    train.split = Split::Train;
    train.master_seed = 7;
    let valid = small_spec(vec![SignalKind::Sine]);
    sigdetect::harness::pipeline::check_spec_disjoint(&train, &valid).unwrap();
    assert!(matches!(
        sigdetect::harness::pipeline::check_spec_disjoint(&valid, &valid),
        Err(Error::Leakage(_))
    ));
}
