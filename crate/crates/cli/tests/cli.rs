use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pitchcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pitchcal")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth(dir: &Path, count: usize, extra: &[&str]) {
    let n = count.to_string();
    let mut args = vec!["synth", "--output", p(dir), "--count", &n];
    args.extend_from_slice(extra);
    let out = pitchcal(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn noiseless_batch_calibrates_every_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 100, &[]);
    let out = pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&rec.join("summary.json"));
    assert_eq!(summary["frames"], 100);
    assert_eq!(summary["calibrated"], 100);
    let rec0 = read_json(&rec.join("0000.json"));
    assert_eq!(rec0["status"], "calibrated");
    assert_eq!(rec0["refined"], true);
}

#[test]
fn synth_layout() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), 3, &["--sigma", "1", "--seed", "9"]);
    for id in ["0000", "0001", "0002"] {
        assert!(tmp.path().join("frames").join(format!("{id}.json")).is_file());
        assert!(tmp.path().join("gt").join(format!("{id}.json")).is_file());
        assert!(tmp.path().join("gt").join(format!("{id}.calib.json")).is_file());
    }
}

#[test]
fn sparse_frame_fails_without_stopping_the_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 2, &[]);
    let sparse = r#"{"frame_id": "sparse", "width": 1920, "height": 1080, "keypoints": [
        {"id": "Kp:1", "u": 100, "v": 100}, {"id": "Kp:2", "u": 300, "v": 120}, {"id": "Kp:3", "u": 500, "v": 700}]}"#;
    std::fs::write(syn.join("frames/sparse.json"), sparse).unwrap();
    let out = pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&rec.join("sparse.json"))["status"], "failed");
    let summary = read_json(&rec.join("summary.json"));
    assert_eq!(summary["calibrated"], 2);
    assert_eq!(summary["failures"][0]["frame_id"], "sparse");
}

#[test]
fn no_pnl_marks_records_unrefined() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 3, &[]);
    let out = pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec), "--no-pnl"]);
    assert!(out.status.success());
    for id in ["0000", "0001", "0002"] {
        assert_eq!(read_json(&rec.join(format!("{id}.json")))["refined"], false);
    }
}

#[test]
fn ground_truth_as_prediction_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec, rep) = (tmp.path().join("syn"), tmp.path().join("rec"), tmp.path().join("rep"));
    synth(&syn, 5, &[]);
    std::fs::create_dir_all(&rec).unwrap();
    for id in ["0000", "0001", "0002", "0003", "0004"] {
        std::fs::copy(syn.join(format!("gt/{id}.calib.json")), rec.join(format!("{id}.json"))).unwrap();
    }
    let out = pitchcal(&["evaluate", "--input", p(&rec), "--gt", p(&syn.join("gt")), "--output", p(&rep)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &read_json(&rep.join("report.json"))["report"];
    assert_eq!(report["final_score"], 1.0);
    assert_eq!(report["completeness"], 1.0);
    assert!(rep.join("report.txt").is_file());
}

#[test]
fn report_keeps_final_score_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec, rep) = (tmp.path().join("syn"), tmp.path().join("rec"), tmp.path().join("rep"));
    synth(&syn, 12, &["--sigma", "2", "--dropout", "0.3", "--outlier-rate", "0.1"]);
    assert!(pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec)]).status.success());
    let out = pitchcal(&["evaluate", "--input", p(&rec), "--gt", p(&syn.join("gt")), "--output", p(&rep)]);
    assert!(out.status.success());
    let r = &read_json(&rep.join("report.json"))["report"];
    let (cr, jac5, fs) = (r["completeness"].as_f64().unwrap(), r["jac5"].as_f64().unwrap(), r["final_score"].as_f64().unwrap());
    assert_eq!(fs, cr * jac5);
}

#[test]
fn missing_ground_truth_names_the_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 3, &[]);
    assert!(pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec)]).status.success());
    std::fs::remove_file(syn.join("gt/0001.json")).unwrap();
    let out = pitchcal(&["evaluate", "--input", p(&rec), "--gt", p(&syn.join("gt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0001"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let syn = tmp.path().join("syn");
    synth(&syn, 6, &["--sigma", "2", "--outlier-rate", "0.1", "--seed", "4"]);
    let run = |name: &str| {
        let rec = tmp.path().join(name);
        let rep = tmp.path().join(format!("{name}-rep"));
        assert!(pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec), "--jobs", "2"]).status.success());
        assert!(pitchcal(&["evaluate", "--input", p(&rec), "--gt", p(&syn.join("gt")), "--output", p(&rep)])
            .status
            .success());
        (std::fs::read(rec.join("0003.json")).unwrap(), std::fs::read(rep.join("report.json")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn refine_existing_records() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec, out_dir) = (tmp.path().join("syn"), tmp.path().join("rec"), tmp.path().join("ref"));
    synth(&syn, 3, &["--sigma", "1"]);
    assert!(pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec), "--no-pnl"]).status.success());
    let out = pitchcal(&["refine", "--input", p(&syn), "--records", p(&rec), "--output", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&out_dir.join("0000.json"));
    assert_eq!(r["status"], "calibrated");
    assert!(r["residuals"]["pnl_cost_final"].as_f64().unwrap() <= r["residuals"]["pnl_cost_initial"].as_f64().unwrap());
}

#[test]
fn sweep_alpha_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let out = pitchcal(&["sweep-alpha", "--count", "4", "--sigma", "1", "--alphas", "0.3,0.6", "--output", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(&out_dir.join("sweep.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0]["alpha"].is_null());
    assert_eq!(rows[2]["alpha"], 0.6);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no-pnl"));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 2, &[]);
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, format!(r#"{{"input": "{}", "output": "nowhere", "pipeline": {{"pnl": false}}}}"#, p(&syn)))
        .unwrap();
    let out = pitchcal(&["calibrate", "--config", p(&cfg), "--output", p(&rec)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&rec.join("0000.json"))["refined"], false);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(pitchcal(&["calibrate", "--output", p(tmp.path())]).status.code(), Some(1));
    assert_eq!(pitchcal(&["calibrate", "--bogus"]).status.code(), Some(1));
    assert_eq!(pitchcal(&["calibrate", "--input", p(&missing), "--output", "x", "--gammas", "-1"]).status.code(), Some(1));
    assert_eq!(pitchcal(&["calibrate", "--input", p(&missing), "--output", "x", "--template", "90x45m"]).status.code(), Some(1));
    assert_eq!(pitchcal(&["calibrate", "--input", p(&missing), "--output", p(tmp.path())]).status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(pitchcal(&["calibrate", "--config", p(&bad)]).status.code(), Some(1));
}

#[test]
fn yard_template_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (syn, rec) = (tmp.path().join("syn"), tmp.path().join("rec"));
    synth(&syn, 2, &["--template", "115x74yd"]);
    let out = pitchcal(&["calibrate", "--input", p(&syn), "--output", p(&rec), "--template", "115x74yd"]);
    assert!(out.status.success());
    assert_eq!(read_json(&rec.join("summary.json"))["calibrated"], 2);
}
