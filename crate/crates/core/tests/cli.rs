//! End-to-end runs of the `perfgen` binary.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
dataset_size = 20000
max_steps = 60
eval_interval = 20
[al]
test_budget = 40
candidates_per_iteration = 80
steps_per_iteration = 20
";

fn perfgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfgen"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(perfgen(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(perfgen(&[]).status.code(), Some(1));
    assert_eq!(perfgen(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(perfgen(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "batch_size = 63\n");
    let out = perfgen(&["simulate", "--config", &cfg, "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
    let cfg = write(dir.path(), "unknown.toml", "no_such_key = 1\n");
    assert_eq!(
        perfgen(&["simulate", "--config", &cfg, "--out", s(dir.path())])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn simulate_writes_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let out = perfgen(&["simulate", "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    for epoch in ["48437", "15625", "7812", "1562"] {
        assert!(ds.contains(epoch), "{ds}");
    }
    assert!(dir.path().join("clusters.csv").exists());
}

#[test]
fn train_generate_compare_and_update() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let run = dir.path().join("run");
    let out = perfgen(&["train-active", "--config", &cfg, "--seed", "4", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("model.ckpt");
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics
        .starts_with("# perfgen-metrics v1\nstep,disc_loss,gen_loss,accuracy,acc_mean,acc_std,fjd,labeled,executed\n"));

    let out = perfgen(&[
        "generate",
        "--checkpoint",
        s(&ckpt),
        "--requirement",
        "1",
        "--size",
        "100",
    ]);
    assert!(out.status.success());
    let suite = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = suite.lines().collect();
    assert_eq!(lines.len(), 101);
    assert_eq!(lines[0], "CID,RID,IID,UID");

    let out = perfgen(&[
        "generate",
        "--checkpoint",
        s(&ckpt),
        "--size",
        "50",
        "--unique",
        "--config",
        &cfg,
        "--out",
        s(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let suite = std::fs::read_to_string(dir.path().join("suite.csv")).unwrap();
    assert!(suite.starts_with("CID,RID,IID,UID,positive\n"));
    assert_eq!(suite.lines().count(), 51);

    assert_eq!(
        perfgen(&[
            "generate",
            "--checkpoint",
            s(&ckpt),
            "--requirement",
            "7",
            "--size",
            "5"
        ])
        .status
        .code(),
        Some(1)
    );

    let out = perfgen(&["baseline", "--size", "30"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 31);

    let out = perfgen(&[
        "compare",
        "--config",
        &cfg,
        "--checkpoint",
        s(&ckpt),
        "--active-checkpoint",
        s(&ckpt),
    ]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("size,pcgan_positives"));

    // Unchanged system: exit 0 and the checkpoint file is not rewritten.
    let before = std::fs::read(&ckpt).unwrap();
    let out = perfgen(&["update", "--config", &cfg, "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);

    // Every cluster removed: any positive in the history now mismatches.
    let all: Vec<String> = (0..20).map(|i| i.to_string()).collect();
    let changed = write(
        dir.path(),
        "changed.toml",
        &format!("{TINY}[sut]\nkind = \"benchmark\"\nremove = [{}]\n", all.join(", ")),
    );
    let out = perfgen(&[
        "update",
        "--config",
        &changed,
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&run),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_ne!(std::fs::read(&ckpt).unwrap(), before);
    assert!(run.join("metrics.csv").exists());
}

#[test]
fn missing_checkpoint_exits_1() {
    let out = perfgen(&["generate", "--checkpoint", "/nonexistent/model.ckpt", "--size", "3"]);
    assert_eq!(out.status.code(), Some(1));
}
