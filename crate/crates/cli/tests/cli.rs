use std::path::Path;
use std::process::Command;

fn weakspot(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_weakspot"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "weakspot {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn benchmark_audit_enhance_report() {
    let dir = tempfile::tempdir().unwrap();
    let printed = weakspot(&["benchmark", "--out", "bench"], dir.path());
    assert!(printed.trim().ends_with("pipeline.json"));

    let cfg = "bench/pipeline.json";
    let audit = weakspot(&["audit", "--config", cfg], dir.path());
    assert!(audit.contains("baseline accuracy"));
    assert!(audit.contains("doctor -> nurse"));
    let enhance = weakspot(&["enhance", "--config", cfg, "--offline"], dir.path());
    assert!(enhance.contains("procured"));

    let summary = weakspot(&["report", "--config", cfg], dir.path());
    assert!(summary.contains("== audit ==") && summary.contains("== enhance =="));
    let json: serde_json::Value =
        serde_json::from_str(&weakspot(&["report", "--config", cfg, "--json"], dir.path())).unwrap();
    let on_disk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench/out/audit.json")).unwrap()).unwrap();
    assert_eq!(json["audit"], on_disk);
}

#[test]
fn out_and_seed_flags_redirect_runs() {
    let dir = tempfile::tempdir().unwrap();
    weakspot(&["benchmark", "--out", "bench", "--seed", "3"], dir.path());
    let cfg = "bench/pipeline.json";
    weakspot(&["audit", "--config", cfg, "--out", "run-a"], dir.path());
    weakspot(&["audit", "--config", cfg, "--out", "run-b"], dir.path());
    let read = |d: &str| std::fs::read(dir.path().join(d).join("audit.json")).unwrap();
    assert_eq!(read("run-a"), read("run-b"));
    assert!(!dir.path().join("bench/out").exists());
}

#[test]
fn report_without_audit_fails() {
    let dir = tempfile::tempdir().unwrap();
    weakspot(&["benchmark", "--out", "bench"], dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_weakspot"))
        .args(["report", "--config", "bench/pipeline.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `weakspot audit` first"));
}
