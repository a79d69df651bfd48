use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use coco_cli::commands::{files, RunManifest};
use coco_cli::{exit_code, VerifyFailed};
use coco_core::Method;

const BASE: &str = r#"
seeds = [0, 1]
[knowledge]
program = "digit-sum"
k = 2
base = 10
[data.generate]
n_records = 1500
[data.generate.predictor]
concepts = [{ temperature = 1.0, logit_noise = 1.0 }, { temperature = 1.0, logit_noise = 1.0 }]
"#;

fn coco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coco")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(coco(&["--help"]).status.code(), Some(0));
    assert_eq!(coco(&["--version"]).status.code(), Some(0));
    assert_eq!(coco(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(coco(&["run"]).status.code(), Some(1));
}

#[test]
fn missing_or_invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(coco(&["gen", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let cfg = write_config(dir.path(), &format!("calibration_fraction = 1.5\n{BASE}"));
    let out = coco(&["gen", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("calibration_fraction"), "{}", stderr(&out));

    let cfg = write_config(dir.path(), BASE);
    let out = coco(&["gen", "--config", &cfg, "--budget-labels", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("budgets"), "{}", stderr(&out));
}

#[test]
fn malformed_records_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("in.jsonl"), "{\"id\": \"a\", \"concept_probs\": 3}\n").unwrap();
    let body = BASE.replace(
        "[data.generate]\nn_records = 1500\n[data.generate.predictor]\nconcepts = [{ temperature = 1.0, logit_noise = 1.0 }, { temperature = 1.0, logit_noise = 1.0 }]\n",
        "[data]\ninput = \"in.jsonl\"\n",
    );
    assert!(body.contains("input"));
    let cfg = write_config(dir.path(), &body);
    let out = coco(&["gen", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn predict_before_gen_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = coco(&["calibrate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn exit_codes_for_cap_and_verification() {
    let cap = anyhow::Error::new(coco_core::Error::CapExceeded { requested: 10, cap: 1 });
    assert_eq!(exit_code(&cap), 3);
    assert_eq!(exit_code(&anyhow::Error::new(VerifyFailed(2))), 4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("cap = 50\n{BASE}"));
    let out = coco(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn step_by_step_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    for step in ["gen", "calibrate", "predict", "evaluate"] {
        let out = coco(&[step, "--config", &cfg]);
        assert!(out.status.success(), "{step}: {}", stderr(&out));
    }
    let out = coco(&["predict", "--config", &cfg, "--method", "rpb"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(coco(&["evaluate", "--config", &cfg, "--method", "rpb"]).status.success());

    let out_dir = dir.path().join("out");
    for seed in [0, 1] {
        let seed_dir = out_dir.join(format!("seed-{seed}"));
        let lines = fs::read_to_string(seed_dir.join(files::RECORDS)).unwrap().lines().count();
        assert_eq!(lines, 1500);
        let preds = fs::read_to_string(seed_dir.join(files::predictions(Method::Coco))).unwrap();
        assert_eq!(preds.lines().count(), 1200);
        assert!(seed_dir.join(files::report(Method::Rpb)).exists());
    }
    let manifest = RunManifest::load(&out_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.seeds.len(), 2);
    assert!(manifest.seeds[&0].reports.contains_key("coco"));
    assert!(manifest.seeds[&0].digests.contains_key(files::RECORDS));

    let report_dir = dir.path().join("summary");
    let out = coco(&["report", out_dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.starts_with("Method"));
    assert!(table.contains("coco") && table.contains("rpb"));

    let mut csv = csv::Reader::from_path(report_dir.join("report.csv")).unwrap();
    let headers = csv.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = csv.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for row in &rows {
        assert_eq!(&row[col("seeds")], "2");
        let cov: f64 = row[col("label_coverage_mean")].parse().unwrap();
        assert!((0.8..=1.0).contains(&cov), "{cov}");
    }
    let coco_row = rows.iter().find(|r| &r[col("method")] == "coco").unwrap();
    assert_eq!(&coco_row[col("concept_consistency_mean")], "1");
}

#[test]
fn budget_command_writes_selection() {
    let dir = tempfile::tempdir().unwrap();
    let body = BASE.replace(
        "temperature = 1.0, logit_noise = 1.0",
        "temperature = 0.2, logit_noise = 0.3",
    );
    let body = format!("method = \"coco-star\"\n{body}[budgets]\nlabels = 2\nconcepts = 5\niterations = 10\n");
    let cfg = write_config(dir.path(), &body);
    assert!(coco(&["gen", "--config", &cfg, "--seed", "0"]).status.success());
    let out = coco(&["budget", "--config", &cfg, "--seed", "0"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("mean alpha"));
    assert!(dir.path().join("out/seed-0").join(files::BUDGET).exists());
}

#[test]
fn verify_passes_on_small_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}[verify]\ninstances = 50\nmax_total_size = 64\n"));
    let out = coco(&["verify", "--config", &cfg, "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    assert!(dir.path().join("out/verify.json").exists());
}
