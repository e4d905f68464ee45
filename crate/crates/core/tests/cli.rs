mod common;

use std::fs;

use common::{cli_session, run_stbf};

#[test]
fn every_command_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (files_a, out_a) = cli_session(a.path(), 1);
    let (files_b, out_b) = cli_session(b.path(), 2);
    assert_eq!(files_a.len(), files_b.len());
    for (x, y) in files_a.iter().zip(&files_b) {
        assert_eq!(x.0, y.0);
        assert!(x.1 == y.1, "{} differs", x.0.display());
    }
    assert_eq!(out_a, out_b);
    assert!(files_a.iter().any(|(p, _)| p.ends_with("results/sweep.csv")));
}

#[test]
fn sweep_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run_stbf(d, &["synth", "--out", "s", "--size", "32", "--seed", "2"]).status.success());
    let cfg_path = d.join("s/experiment.json");
    let mut cfg: serde_json::Value = serde_json::from_slice(&fs::read(&cfg_path).unwrap()).unwrap();
    cfg["sigma_t_grid"] = serde_json::json!([0.0, 0.2]);
    cfg["mode"] = serde_json::json!("transfer");
    cfg["svm"]["sample_per_class"] = serde_json::json!(40);
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = run_stbf(d, &["sweep", "--config", "s/experiment.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("s/results/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sigma_t,image,mode,overall,kappa,acc_class_1,acc_class_2,acc_class_3,acc_class_4");
    assert_eq!(lines.len(), 1 + 3 * 3);
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["original", "original", "original", "0", "0", "0", "0.2", "0.2", "0.2"]);
    assert!(d.join("s/results/map_st0.2_img2_transfer.ppm").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run_stbf(d, &["synth", "--out", "s", "--size", "32"]).status.success());
    let code = |args: &[&str]| run_stbf(d, args).status.code().unwrap();

    assert_eq!(code(&["--help"]), 0);
    // malformed invocation or inputs
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["filter", "--manifest", "s/stack.json", "--out", "f/o.json", "--window", "4"]), 1);
    assert_eq!(code(&["filter", "--manifest", "s/stack.json", "--out", "f/o.json", "--sigma-t", "-1"]), 1);
    assert_eq!(code(&["eval", "--truth", "s/missing.json", "--pred", "s/mask0.json"]), 1);
    assert_eq!(code(&["synth", "--out", "t", "--size", "8"]), 1);
    fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&["sweep", "--config", "bad.json"]), 1);
    assert_eq!(code(&["train", "--image", "s/date0.json", "--mask", "s/mask0.json", "--out", "m.json", "--C", "0"]), 1);

    // the output location cannot be created: a runtime failure
    fs::write(d.join("blocker"), "").unwrap();
    assert_eq!(code(&["filter", "--manifest", "s/stack.json", "--out", "blocker/o.json"]), 2);
    assert_eq!(code(&["train", "--image", "s/date0.json", "--mask", "s/mask0.json", "--out", "blocker/m.json", "--sample-per-class", "20"]), 2);
}

#[test]
fn classify_and_eval_agree_with_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run_stbf(d, &["synth", "--out", "s", "--size", "32", "--seed", "4"]).status.success());
    assert!(run_stbf(d, &["train", "--image", "s/date0.json", "--mask", "s/mask0.json", "--out", "m.json", "--sample-per-class", "50", "--seed", "1"]).status.success());
    assert!(run_stbf(d, &["classify", "--model", "m.json", "--image", "s/date1.json", "--out", "p.json"]).status.success());
    let out = run_stbf(d, &["eval", "--truth", "s/mask1.json", "--pred", "p.json"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();

    let model = stbf::svm::SvmModel::from_json(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    let image = stbf::raster::read_raster(d.join("s/date1.json")).unwrap();
    let truth = stbf::raster::read_mask(d.join("s/mask1.json")).unwrap();
    let pred = stbf::svm::classify_raster(&model, &image).unwrap();
    let cm = stbf::eval::confusion_matrix(&truth, &pred, 4).unwrap();
    assert_eq!(report["overall"].as_f64().unwrap(), stbf::eval::overall_accuracy(&cm));
    assert_eq!(report["kappa"].as_f64().unwrap(), stbf::eval::cohen_kappa(&cm));
}
