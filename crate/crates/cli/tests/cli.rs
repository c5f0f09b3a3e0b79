use std::fs;
use std::process::Command;

fn compfs() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_compfs"));
    cmd.env("COMPFS_THREADS", "1");
    cmd
}

#[test]
fn score_prints_rates() {
    let dir = tempfile::tempdir().unwrap();
    let found = dir.path().join("found.txt");
    let truth = dir.path().join("truth.txt");
    fs::write(&found, "1,2,3\n").unwrap();
    fs::write(&truth, "1,2\n3,4\n").unwrap();
    let out = compfs().arg("score").arg(&found).arg(&truth).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("TPR 75.0"), "{text}");
    assert!(text.contains("FDR 0.0"), "{text}");
    // (2/3 + 1/4) / 2
    assert!(text.contains("G_sim 0.458"), "{text}");
}

#[test]
fn oracle_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = compfs()
        .args(["run", "--preset", "syn1/oracle", "--repeats", "1", "--n-train", "300", "--n-test", "50"])
        .args(["--epochs", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("{1} {2}") || text.contains("{1,2}"), "{text}");
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let bad_task = compfs().args(["run", "--task", "syn9", "--model", "compfs"]).output().unwrap();
    assert_eq!(bad_task.status.code(), Some(2));
    let bad_config = compfs().args(["run", "--preset", "nope/compfs5"]).output().unwrap();
    assert_eq!(bad_config.status.code(), Some(2));
    let clap_error = compfs().args(["run", "--repeats", "many"]).output().unwrap();
    assert_eq!(clap_error.status.code(), Some(2));
}

#[test]
fn missing_groups_file_is_a_failure() {
    let out = compfs().args(["score", "/nonexistent/a", "/nonexistent/b"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
