use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ssvep::core::dataset::{Dataset, StimulusTable};
use ssvep::datastore::save_dataset;

fn ssvep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssvep"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("SSVEP_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p.to_string_lossy().into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"synth": {"subjects": 2, "trials_per_class": 1, "snr_db": 10}}"#;

#[test]
fn synth_is_reproducible_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    assert!(ssvep(a.path(), &["synth", "--config", &cfg, "--seed", "3"]).status.success());
    assert!(ssvep(b.path(), &["synth", "--config", &cfg, "--seed", "3"]).status.success());
    assert!(ssvep(c.path(), &["synth", "--config", &cfg, "--seed", "4"]).status.success());
    let read = |d: &Path| fs::read(d.join("synth.ssvepds")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
    assert!(a.path().join("manifest.json").exists());
    assert!(a.path().join("config.resolved.json").exists());
}

#[test]
fn evaluate_needs_two_subjects() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"synth": {"subjects": 1, "trials_per_class": 1}}"#);
    assert!(ssvep(d.path(), &["synth", "--config", &cfg]).status.success());
    let out = ssvep(d.path(), &["evaluate", &path(d.path(), "synth.ssvepds"), "--methods", "cca"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_input_is_rejected_without_output() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    assert!(ssvep(d.path(), &["synth", "--config", &cfg]).status.success());
    let synth = d.path().join("synth.ssvepds");
    let mut bytes = fs::read(&synth).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    fs::write(&synth, bytes).unwrap();
    let out = ssvep(d.path(), &["preprocess", &path(d.path(), "synth.ssvepds")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
    assert!(!d.path().join("preprocessed.ssvepds").exists());

    let out = ssvep(d.path(), &["validate", &path(d.path(), "synth.ssvepds")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_dataset_warns_and_succeeds() {
    let d = tempfile::tempdir().unwrap();
    let ds = Dataset {
        trials: Vec::new(),
        channel_names: vec!["Oz".into()],
        stimulus: StimulusTable::twelve_class(),
        provenance: "empty".into(),
    };
    save_dataset(&ds, &d.path().join("empty.ssvepds")).unwrap();
    let out = ssvep(d.path(), &["preprocess", &path(d.path(), "empty.ssvepds")]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert!(d.path().join("preprocessed.ssvepds").exists());
}

#[test]
fn cca_evaluation_at_high_snr() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), r#"{"synth": {"subjects": 3, "trials_per_class": 2, "snr_db": 10}}"#);
    assert!(ssvep(d.path(), &["synth", "--config", &cfg]).status.success());
    assert!(ssvep(d.path(), &["preprocess", &path(d.path(), "synth.ssvepds"), "--config", &cfg])
        .status
        .success());
    let pre = path(d.path(), "preprocessed.ssvepds");
    assert!(ssvep(d.path(), &["validate", &pre]).status.success());
    let out = ssvep(d.path(), &["evaluate", &pre, "--methods", "cca", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("report_cca.json")).unwrap()).unwrap();
    let mean = report["mean_accuracy"].as_f64().unwrap();
    assert!(mean >= 0.95, "{mean}");
    assert_eq!(report["folds"].as_array().unwrap().len(), 3);
    assert!(d.path().join("comparison.csv").exists());

    let out = ssvep(d.path(), &["compare", &path(d.path(), "report_cca.json")]);
    assert!(out.status.success());

    let out = ssvep(d.path(), &["evaluate", &pre, "--methods", "svm"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_analysis_steps_a_quarter_turn() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(
        d.path(),
        r#"{"synth": {"subjects": 2, "trials_per_class": 1, "snr_db": 200, "harmonic_gain": 0}}"#,
    );
    assert!(ssvep(d.path(), &["synth", "--config", &cfg]).status.success());
    assert!(ssvep(d.path(), &["preprocess", &path(d.path(), "synth.ssvepds")]).status.success());
    let out = ssvep(d.path(), &["analyze", &path(d.path(), "preprocessed.ssvepds"), "--what", "phase"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut rdr = csv::Reader::from_path(d.path().join("phase_amp.csv")).unwrap();
    let mut phases = std::collections::BTreeMap::new();
    for rec in rdr.records() {
        let r = rec.unwrap();
        let (f, ch, seg): (f64, usize, usize) = (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap());
        if ch == 0 && (f == 12.25 || f == 9.25) {
            phases.insert((f.to_bits(), seg), r[5].parse::<f64>().unwrap());
        }
    }
    let step = |f: f64, seg: usize| (phases[&(f.to_bits(), seg + 1)] - phases[&(f.to_bits(), seg)]).rem_euclid(360.0);
    for seg in 0..3 {
        assert!((step(12.25, seg) - 90.0).abs() <= 1.0, "12.25 Hz segment {seg}: {}", step(12.25, seg));
    }
    // 9.25 Hz sits next to the 9 Hz band edge, where filtfilt edge transients
    // bend the outer segments by a few degrees; the interior step is exact.
    assert!((step(9.25, 1) - 90.0).abs() <= 1e-3, "{}", step(9.25, 1));
}

#[test]
fn data_dir_resolves_inputs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL);
    assert!(ssvep(d.path(), &["synth", "--config", &cfg]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ssvep"))
        .args(["validate", "synth.ssvepds"])
        .env("SSVEP_DATA_DIR", d.path())
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_arguments_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(ssvep(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(ssvep(d.path(), &["validate", &path(d.path(), "missing.ssvepds")]).status.code(), Some(2));
    let cfg = write_config(d.path(), r#"{"synth": {"subjectz": 2}}"#);
    assert_eq!(ssvep(d.path(), &["synth", "--config", &cfg]).status.code(), Some(2));
}
