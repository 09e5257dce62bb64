use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "dataset=bars",
    "n_train=16",
    "n_test=8",
    "n_rotations=2",
    "channels=2,2,3",
    "stencil=3",
    "siren_hidden=8",
    "head_hidden=4",
    "epochs=2",
    "batch_size=8",
    "bn_recalibration=8",
    "n_steps=3",
    "layerwise_images=2",
];

fn liegconv(args: &[&str], out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_liegconv"));
    cmd.args(args).arg("--out").arg(out).env("LIEGCONV_THREADS", "1");
    cmd.output().unwrap()
}

fn with_tiny<'a>(command: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![command];
    for kv in TINY.iter().chain(extra) {
        args.push("--set");
        args.push(kv);
    }
    args
}

fn body(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn unknown_keys_and_bad_values_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "no_such_key=1"],
        vec!["train", "--set", "channels=4,4"],
        vec!["eval", "--set", "checkpoint=/nonexistent/model.ckpt"],
    ] {
        let out = liegconv(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = liegconv(&["train", "--set", "no_such_key=1"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn config_files_are_read_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# bench settings\nn_h = 4\nbench_factorizations = separable\nrepeats = 1\nbench_size = 8\n").unwrap();
    let out = liegconv(&["bench", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(csv.starts_with("# liegconv bench\n"));
    assert!(csv.contains("# n_h=4\n"));
}

#[test]
fn bench_reports_matching_mac_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "bench", "--set", "n_h=8", "--set", "bench_size=8", "--set", "repeats=1", "--set", "bench_batch=1",
    ];
    let out = liegconv(&args, dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("measured MACs match closed form: true"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = liegconv(&["selftest"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn same_seed_gives_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let out = liegconv(&with_tiny("train", &[]), dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // The headers differ only in the echoed output directory.
    let metrics = |d: &tempfile::TempDir| body(&d.path().join("metrics.csv"));
    assert_eq!(metrics(&a), metrics(&b));
}

#[test]
fn train_then_analyse_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = liegconv(&with_tiny("train", &[]), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("model.ckpt").exists());

    for command in ["eval", "equivariance", "redundancy"] {
        let out = liegconv(&[command], dir.path());
        assert!(out.status.success(), "{command}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let eval = body(&dir.path().join("eval.csv"));
    assert!(eval.starts_with("n_test,accuracy,error\n8,"));
    assert_eq!(body(&dir.path().join("equivariance.csv")).lines().count(), 4);
    assert_eq!(body(&dir.path().join("layerwise.csv")).lines().count(), 4);
    let redundancy = body(&dir.path().join("redundancy.csv"));
    assert!(redundancy.starts_with("layer,kernel_id,ratio,phase"));
    assert_eq!(body(&dir.path().join("kh_variance.csv")).lines().count(), 5);
}
