//! End-to-end tests of the command-line interface: full dataset ->
//! train -> probe flows and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_streamsel"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("streamsel-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_train_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "train",
        "--data",
        data,
        "--out",
        out,
        "--buffer-size",
        "8",
        "--stc",
        "8",
        "--emissions",
        "320",
        "--set",
        "model.encoder_hidden=16",
        "--set",
        "model.repr_dim=8",
        "--set",
        "model.proj_hidden=8",
        "--set",
        "model.proj_dim=4",
        "--set",
        "eval.checkpoints=1",
        "--set",
        "eval.probe_epochs=10",
    ]
}

#[test]
fn gen_data_train_probe_flow() {
    let dir = tmp_dir("flow");
    let data = dir.join("data.ssds");
    let run_dir = dir.join("run");

    let out = run(&[
        "gen-data",
        "--classes",
        "4",
        "--dim",
        "8",
        "--per-class",
        "60",
        "--separation",
        "2.5",
        "--seed",
        "5",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(data.exists());

    let out = run(&small_train_args(
        data.to_str().unwrap(),
        run_dir.to_str().unwrap(),
    ));
    assert_code(&out, 0);
    for file in [
        "metrics.csv",
        "checkpoints.csv",
        "timing.csv",
        "config.json",
        "checkpoint.ssel",
    ] {
        assert!(run_dir.join(file).exists(), "{file} missing");
    }

    let out = run(&[
        "probe",
        "--checkpoint",
        run_dir.join("checkpoint.ssel").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--label-fraction",
        "1.0",
        "--probe-epochs",
        "10",
        "--seed",
        "3",
    ]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("probe accuracy"), "{stdout}");

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn convert_reads_csv() {
    let dir = tmp_dir("convert");
    let csv = dir.join("data.csv");
    std::fs::write(&csv, "0,1.0,2.0\n1,3.0,4.0\n0,0.5,0.25\n").unwrap();
    let out_path = dir.join("data.ssds");
    let out = run(&[
        "convert",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    assert!(out_path.exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_errors_exit_1() {
    let dir = tmp_dir("cfg-err");
    // Unknown policy.
    let out = run(&[
        "train",
        "--policy",
        "nonsense",
        "--out",
        dir.join("x").to_str().unwrap(),
    ]);
    assert_code(&out, 1);

    // Invalid config value.
    let out = run(&[
        "train",
        "--set",
        "eval.label_fraction=1.5",
        "--out",
        dir.join("y").to_str().unwrap(),
    ]);
    assert_code(&out, 1);

    // Unknown config key.
    let out = run(&[
        "train",
        "--set",
        "bogus.key=1",
        "--out",
        dir.join("z").to_str().unwrap(),
    ]);
    assert_code(&out, 1);

    // Unknown CLI flag.
    let out = run(&["train", "--bogus-flag", "1"]);
    assert_code(&out, 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tmp_dir("rt-err");
    // Missing dataset file.
    let out = run(&[
        "train",
        "--data",
        dir.join("missing.ssds").to_str().unwrap(),
        "--out",
        dir.join("run").to_str().unwrap(),
    ]);
    assert_code(&out, 2);

    // Corrupt checkpoint.
    let bad = dir.join("bad.ssel");
    std::fs::write(&bad, b"XXXX").unwrap();
    let out = run(&["probe", "--checkpoint", bad.to_str().unwrap()]);
    assert_code(&out, 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_feeds_train() {
    let dir = tmp_dir("cfg-file");
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "\
# small run
policy.kind = fifo
data.classes = 3
data.dim = 6
data.per_class = 50
data.separation = 2.0
model.encoder_hidden = 12
model.repr_dim = 6
model.proj_hidden = 6
model.proj_dim = 4
train.buffer_capacity = 4
train.segment_size = 4
train.total_emissions = 80
stream.stc = 5
eval.checkpoints = 1
eval.probe_epochs = 5
",
    )
    .unwrap();
    let run_dir = dir.join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let sidecar = std::fs::read_to_string(run_dir.join("config.json")).unwrap();
    assert!(sidecar.contains("\"policy\": \"fifo\""), "{sidecar}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gradient_check_reports_and_passes() {
    let out = run(&["gradient-check", "--batches", "6"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS: autodiff gradient"), "{stdout}");
    assert!(
        stdout.contains("PASS: closed-form reconciliation"),
        "{stdout}"
    );
    assert!(
        stdout.contains("confirmed by finite differences"),
        "{stdout}"
    );
}

#[test]
fn compare_writes_tables() {
    let dir = tmp_dir("compare");
    let data = dir.join("data.ssds");
    let out = run(&[
        "gen-data",
        "--classes",
        "3",
        "--dim",
        "6",
        "--per-class",
        "40",
        "--separation",
        "2.0",
        "--seed",
        "4",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_code(&out, 0);

    let out = run(&[
        "compare",
        "--policies",
        "contrast,fifo",
        "--seeds",
        "1,2",
        "--set",
        "train.buffer_capacity=4",
        "--set",
        "train.segment_size=4",
        "--set",
        "train.total_emissions=64",
        "--set",
        "stream.stc=4",
        "--set",
        "model.encoder_hidden=12",
        "--set",
        "model.repr_dim=6",
        "--set",
        "model.proj_hidden=6",
        "--set",
        "model.proj_dim=4",
        "--set",
        "eval.probe_epochs=5",
        "--set",
        &format!("data.path={}", data.display()),
        "--out",
        dir.join("tables").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let csv = std::fs::read_to_string(dir.join("tables").join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(Path::new(&dir.join("tables").join("compare_summary.csv")).exists());
    std::fs::remove_dir_all(&dir).ok();
}
