use std::fs;

use npcseg::config::PipelineConfig;
use npcseg::nifti::read_file;
use npcseg::phantom::{generate, PhantomSpec};
use npcseg::pipeline::{crop_dir, evaluate_dirs, phantom_dir, preprocess_dir, restore_dir};
use npcseg::Error;

fn spec() -> PhantomSpec {
    PhantomSpec::head_neck([40, 40, 24], [0.9, 0.9, 2.5], 0.0, 3)
}

#[test]
fn phantom_files_match_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    phantom_dir(tmp.path(), &spec(), 2, &cfg).unwrap();
    let mut s = spec();
    s.seed += 1;
    let ph = generate(&s).unwrap();
    let labels = read_file(&tmp.path().join("phantom_001_label.nii.gz")).unwrap().into_labels().unwrap();
    assert_eq!(labels.data(), ph.labels.data());
    // spacing is stored as f32, so geometry agrees within registration tolerance
    labels.geometry().check_matches(ph.labels.geometry()).unwrap();
    let ct = read_file(&tmp.path().join("phantom_001_contrast.nii.gz")).unwrap().into_intensity();
    assert_eq!(ct.data(), ph.contrast_ct.data());
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    let cfg1 = PipelineConfig::default();
    let cfg3 = PipelineConfig {
        workers: 3,
        ..Default::default()
    };
    let mut noisy = spec();
    noisy.noise_sigma = 15.0;
    phantom_dir(&raw, &noisy, 3, &cfg1).unwrap();
    for (cfg, out) in [(&cfg1, "a"), (&cfg3, "b")] {
        assert!(preprocess_dir(&raw, &tmp.path().join(out), cfg).unwrap().is_success());
    }
    for id in ["phantom_000", "phantom_001", "phantom_002"] {
        let name = format!("{id}_plain.nii.gz");
        assert_eq!(
            fs::read(tmp.path().join("a").join(&name)).unwrap(),
            fs::read(tmp.path().join("b").join(&name)).unwrap()
        );
    }
}

#[test]
fn restore_without_record_fails_only_that_case() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let raw = tmp.path().join("raw");
    let crop = tmp.path().join("crop");
    phantom_dir(&raw, &spec(), 2, &cfg).unwrap();
    crop_dir(&raw, &raw, &crop, &cfg).unwrap();
    fs::remove_file(crop.join("phantom_001.crop.json")).unwrap();
    let s = restore_dir(&crop, &crop, &tmp.path().join("out"), &cfg).unwrap();
    assert_eq!(s.succeeded, vec!["phantom_000".to_string()]);
    assert_eq!(s.failed.len(), 1);
    assert!(s.failed[0].1.contains("crop record"));
}

#[test]
fn evaluate_rejects_mismatched_case_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    phantom_dir(&a, &spec(), 2, &cfg).unwrap();
    phantom_dir(&b, &spec(), 1, &cfg).unwrap();
    let err = evaluate_dirs(&a, &b, &tmp.path().join("r"), &cfg).unwrap_err();
    assert!(matches!(err, Error::Parameter(ref m) if m.contains("phantom_001")), "{err}");
}
