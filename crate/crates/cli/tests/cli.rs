use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydrolim"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn code(cmd: &mut Command) -> i32 {
    cmd.output().unwrap().status.code().unwrap()
}

#[test]
fn small_riemann_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let models = configs().join("models/tasep.json");
    let cfg = write(
        tmp.path(),
        "small.json",
        &format!(
            r#"{{"model_file": "{}", "initial": {{"riemann": {{"lambda": 1.0, "rho": 0.0}}}},
               "scales": [50, 100], "times": [1.0], "seeds": [1, 2], "speeds": [0.0], "threshold": 0.2}}"#,
            models.display()
        ),
    );
    let out = tmp.path().join("out");
    let status = bin()
        .args(["riemann", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--cell-filter", "N=100"])
        .status()
        .unwrap();
    assert!(status.success());
    let cells = std::fs::read_to_string(out.join("cells.csv")).unwrap();
    // header plus the two seeds at N = 100
    assert_eq!(cells.lines().count(), 3, "{cells}");
    assert!(cells.lines().skip(1).all(|l| l.starts_with("100,")));
    assert!(out.join("currents.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let missing = tmp.path().join("nope.json");
    assert_eq!(code(bin().args(["riemann", "--config"]).arg(&missing).arg("--out").arg(&out)), 2);

    let garbage = write(tmp.path(), "garbage.json", "{ not json");
    assert_eq!(code(bin().args(["flux", "--config"]).arg(&garbage).arg("--out").arg(&out)), 2);

    let unknown = write(
        tmp.path(),
        "unknown.json",
        r#"{"model": {"model": "misanthrope", "kernel": {"table": [[1, 1.0]]}, "rate_table": {"k_exclusion": 1.0}},
            "initial": {"riemann": {"lambda": 1.0, "rho": 0.0}}, "scales": [10], "times": [1.0], "seeds": [1], "colour": 1}"#,
    );
    assert_eq!(code(bin().args(["riemann", "--config"]).arg(&unknown).arg("--out").arg(&out)), 2);

    let riemann = configs().join("riemann_tasep.json");
    assert_eq!(
        code(bin().args(["riemann", "--config"]).arg(&riemann).arg("--out").arg(&out).args(["--cell-filter", "N=7"])),
        2
    );
    assert_eq!(
        code(bin().args(["riemann", "--config"]).arg(&riemann).arg("--out").arg(&out).args(["--cell-filter", "x=1"])),
        2
    );
    // nothing was written for rejected configs
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(bin().args(["simulate"])), 2);
    assert_eq!(code(bin().args(["frobnicate"])), 2);
}
