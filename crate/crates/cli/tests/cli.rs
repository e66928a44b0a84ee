use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lgsa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(["--run-dir", dir.to_str().unwrap()])
        .args(args)
        .env_remove("LGSA_REMOTE_URL")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec!["--n", "300"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn experiment_writes_one_cell_per_condition_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", "--seeds", "1,2,3", "--male-fraction", "0.8"];
    args.extend(small(&[]));
    let o = lgsa(dir.path(), &args);
    assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 9);
    let text = fs::read_to_string(dir.path().join("reports/report.txt")).unwrap();
    for col in ["Model", "Overall", "Acc male", "Acc female", "Bias Gap"] {
        assert!(text.contains(col), "missing column {col}");
    }
    assert!(dir.path().join("reports/plot_bias_gap.csv").exists());
    // without --check a failing check does not change the exit code
    assert_eq!(code(&o), 0);
}

#[test]
fn stage_by_stage_run_and_qc_is_pure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&lgsa(d, &["synth", "--n", "200", "--seed", "7"])), 0);
    assert_eq!(code(&lgsa(d, &["diagnose"])), 0);
    assert_eq!(code(&lgsa(d, &["generate", "--condition", "lgsa"])), 0);
    assert_eq!(code(&lgsa(d, &["qc", "--condition", "lgsa"])), 0);
    let first = fs::read(d.join("qc_log/lgsa.jsonl")).unwrap();
    assert_eq!(code(&lgsa(d, &["qc", "--condition", "lgsa"])), 0);
    assert_eq!(first, fs::read(d.join("qc_log/lgsa.jsonl")).unwrap());

    for stage in ["assemble", "train"] {
        assert_eq!(code(&lgsa(d, &[stage, "--condition", "lgsa"])), 0, "{stage}");
    }
    let o = lgsa(d, &["eval", "--condition", "lgsa"]);
    assert_eq!(code(&o), 0);
    let eval: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(eval["metrics"]["bias_gap"].is_number());

    assert_eq!(code(&lgsa(d, &["adjudicate", "sample", "--rate", "0.1"])), 0);
    let queue = fs::read_to_string(d.join("review/queue.jsonl")).unwrap();
    let first_id = serde_json::from_str::<serde_json::Value>(queue.lines().next().unwrap()).unwrap()["candidate_id"]
        .as_str()
        .unwrap()
        .to_string();
    let ratings = d.join("ratings.jsonl");
    fs::write(
        &ratings,
        format!(
            "{{\"item_id\":\"{first_id}\",\"rater_id\":\"a\",\"label_fidelity\":\"violated\",\"fluency\":3,\"stereotype_flag\":false,\"timestamp\":1}}\n"
        ),
    )
    .unwrap();
    let o = lgsa(d, &["adjudicate", "export", "--import", ratings.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["agreement"].is_null());
    assert_eq!(report["calibration"]["decision"], "regenerate");
}

#[test]
fn missing_upstream_artifact_names_the_prior_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = lgsa(dir.path(), &["qc", "--condition", "swap"]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("synth"), "{err}");
    let o = lgsa(dir.path(), &["report"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment"));
}

#[test]
fn invalid_values_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lgsa(dir.path(), &["synth", "--male-fraction", "2"])), 1);
    assert_eq!(code(&lgsa(dir.path(), &["qc", "--condition", "nope"])), 1);
    assert_eq!(code(&lgsa(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&lgsa(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_values_apply_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("from-config");
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!("run_dir = {:?}\n[synth]\nn = 120\nmale_fraction = 0.75\n", run.to_str().unwrap()),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(["--config", cfg.to_str().unwrap(), "synth"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(run.join("corpus/corpus.jsonl")).unwrap().lines().count(), 120);

    let o = Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(["--config", cfg.to_str().unwrap(), "synth", "--n", "80"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(run.join("corpus/corpus.jsonl")).unwrap().lines().count(), 80);

    fs::write(&cfg, "[synth]\nbogus = 1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(["--config", cfg.to_str().unwrap(), "synth"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn shipped_example_config_parses() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lgsa"))
        .args(["--config", cfg.to_str().unwrap(), "--run-dir", dir.path().to_str().unwrap(), "synth", "--n", "40"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_check_fires_on_a_no_op_backend() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", "--seeds", "1,2,3", "--backend", "echo"];
    args.extend(small(&[]));
    assert_eq!(code(&lgsa(dir.path(), &args)), 0);
    let before = fs::read(dir.path().join("reports/report.txt")).unwrap();
    let o = lgsa(dir.path(), &["report", "--check"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lgsa_reduces_gap"));
    // report re-renders the same bytes
    assert_eq!(before, fs::read(dir.path().join("reports/report.txt")).unwrap());
    assert_eq!(code(&lgsa(dir.path(), &["report"])), 0);
}

#[test]
fn copied_run_directory_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a");
    let mut args = vec!["experiment", "--seeds", "1,2"];
    args.extend(small(&[]));
    assert_eq!(code(&lgsa(&src, &args)), 0);
    let dst = dir.path().join("b/reports");
    fs::create_dir_all(&dst).unwrap();
    fs::copy(src.join("reports/report.json"), dst.join("report.json")).unwrap();
    let a = lgsa(&src, &["report"]);
    let b = lgsa(&dir.path().join("b"), &["report"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        fs::read(src.join("reports/cells.csv")).unwrap(),
        fs::read(dst.join("cells.csv")).unwrap()
    );
}
