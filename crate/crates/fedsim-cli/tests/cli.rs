//! End-to-end tests against the built `fedsim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fedsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to launch fedsim")
}

const SMALL_RUN: &str = "data.num_classes = 3\ndata.input_dim = 8\ndata.per_class = 40\n\
    clients.count = 4\nclients.sampling_ratio = 0.5\nrun.rounds = 5\nrun.seed = 42\n";

#[test]
fn run_writes_deterministic_metrics() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), SMALL_RUN).unwrap();

    let a = fedsim(&["run", "--config", "run.cfg", "--out", "a"], dir.path());
    assert!(a.status.success(), "stderr: {}", String::from_utf8_lossy(&a.stderr));
    let b = fedsim(&["run", "--config", "run.cfg", "--out", "b"], dir.path());
    assert!(b.status.success());

    let csv_a = fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let csv_b = fs::read(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "reruns must be byte-identical");

    let text = String::from_utf8(csv_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,sim_seconds,train_loss,eval_acc,bytes_up,bytes_down,participants"
    );
    assert_eq!(lines.count(), 5, "one data row per round");
}

#[test]
fn seed_flag_matches_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), SMALL_RUN).unwrap();
    fs::write(
        dir.path().join("run7.cfg"),
        SMALL_RUN.replace("run.seed = 42", "run.seed = 7"),
    )
    .unwrap();

    let flag = fedsim(
        &["run", "--config", "run.cfg", "--seed", "7", "--out", "flag"],
        dir.path(),
    );
    assert!(flag.status.success());
    let file = fedsim(&["run", "--config", "run7.cfg", "--out", "file"], dir.path());
    assert!(file.status.success());
    let base = fedsim(&["run", "--config", "run.cfg", "--out", "base"], dir.path());
    assert!(base.status.success());

    let flag_csv = fs::read(dir.path().join("flag/metrics.csv")).unwrap();
    let file_csv = fs::read(dir.path().join("file/metrics.csv")).unwrap();
    let base_csv = fs::read(dir.path().join("base/metrics.csv")).unwrap();
    assert_eq!(flag_csv, file_csv, "--seed must equal run.seed in the file");
    assert_ne!(flag_csv, base_csv, "changing the seed must change the run");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.cfg"),
        format!("{SMALL_RUN}server.momentum = 0.9\n"),
    )
    .unwrap();
    let out = fedsim(&["run", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("server.momentum"),
        "stderr must name the offending key: {stderr}"
    );
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("diverge.cfg"),
        format!("{SMALL_RUN}client.lr = 1e308\ndata.spread = 10\n"),
    )
    .unwrap();
    let out = fedsim(&["run", "--config", "diverge.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("divergence"), "stderr: {stderr}");
}

#[test]
fn gen_data_roundtrips_into_a_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("gen.cfg"),
        "num_classes = 3\ninput_dim = 6\nper_class = 30\nseed = 9\n",
    )
    .unwrap();
    let gen = fedsim(
        &["gen-data", "--spec", "gen.cfg", "--out", "data.csv"],
        dir.path(),
    );
    assert!(gen.status.success(), "stderr: {}", String::from_utf8_lossy(&gen.stderr));
    assert!(dir.path().join("data.csv").exists());

    fs::write(
        dir.path().join("csvrun.cfg"),
        "data.source = csv\ndata.path = data.csv\ndata.num_classes = 3\n\
         clients.count = 3\nrun.rounds = 3\n",
    )
    .unwrap();
    let run = fedsim(&["run", "--config", "csvrun.cfg", "--out", "o"], dir.path());
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn inspect_prints_resolved_config_and_payload() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        format!("{SMALL_RUN}compress.kind = quantize\ncompress.bits = 4\n"),
    )
    .unwrap();
    let out = fedsim(&["inspect", "--config", "run.cfg"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("server.rule = fedavg"), "{stdout}");
    assert!(stdout.contains("compress.bits = 4"), "{stdout}");
    assert!(stdout.contains("dense download:"), "{stdout}");
    assert!(stdout.contains("upload (quantize):"), "{stdout}");
}

#[test]
fn compare_tabulates_each_variant() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), SMALL_RUN).unwrap();
    fs::write(
        dir.path().join("sweep.txt"),
        "avg server.rule=fedavg\nadam server.rule=fedadam\nbroken compress.bits=99\n",
    )
    .unwrap();
    let out = fedsim(
        &["compare", "--config", "run.cfg", "--sweep", "sweep.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("target loss: 0.5"), "{stdout}");
    assert!(stdout.contains("avg"), "{stdout}");
    assert!(stdout.contains("adam"), "{stdout}");
    assert!(stdout.contains("failed:"), "{stdout}");
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedsim(&["run", "--config", "nope.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
