//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, and byte reproducibility.

use std::path::Path;
use std::process::Command;

fn mecsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mecsim"))
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("mecsim-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn validate_presets() {
    for preset in ["tiny", "desk", "full", "single-queue"] {
        let out = mecsim()
            .args(["validate", "--config", &format!("preset:{preset}")])
            .output()
            .unwrap();
        assert!(out.status.success(), "{preset}: {out:?}");
        assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok:"));
    }
}

#[test]
fn validate_rejects_bad_config() {
    let dir = tempdir("badcfg");
    let path = dir.join("bad.json");
    // UE listed inside a wired edge must be rejected.
    let text = mecsim()
        .args(["preset", "tiny"])
        .output()
        .unwrap()
        .stdout;
    let mut cfg: serde_json::Value = serde_json::from_slice(&text).unwrap();
    cfg["topology"]["wired_edges"] = serde_json::json!([["ue0", "s0"]]);
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = mecsim()
        .args(["validate", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("UE"), "diagnostic: {err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempdir("run");
    let run_into = |sub: &str| {
        let out_dir = dir.join(sub);
        let out = mecsim()
            .args([
                "run",
                "--config",
                "preset:tiny",
                "--slots",
                "3000",
                "--lambda",
                "20",
                "--v",
                "1",
                "--seed",
                "9",
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{out:?}");
        out_dir
    };
    let a = run_into("a");
    let b = run_into("b");
    for name in ["config.snapshot.json", "summary.json", "timeseries.csv"] {
        assert!(a.join(name).exists(), "{name} missing");
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} not byte-identical across repeats");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["controller"], "mecnc");
    assert!(summary["metrics"]["mean_cost"]["total"].as_f64().unwrap() > 0.0);
    let ts = std::fs::read_to_string(a.join("timeseries.csv")).unwrap();
    assert!(ts.starts_with("slot,cost_total"));
    assert_eq!(ts.lines().count(), 3001);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn trace_flag_writes_queue_dump() {
    let dir = tempdir("trace");
    let out = mecsim()
        .args([
            "run",
            "--config",
            "preset:tiny",
            "--slots",
            "1000",
            "--lambda",
            "5",
            "--out",
            dir.to_str().unwrap(),
            "--trace",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let q = std::fs::read_to_string(dir.join("queues.csv")).unwrap();
    assert!(q.starts_with("slot,node,commodity,backlog"));
    assert!(q.lines().count() > 1);
    let d = std::fs::read_to_string(dir.join("decisions.csv")).unwrap();
    assert!(d.starts_with("slot,kind,entity,commodity,planned,level_or_power"));
    assert!(d.lines().any(|l| l.contains(",proc,")));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn sweep_lambda_writes_report() {
    let dir = tempdir("sweep");
    let out = mecsim()
        .args([
            "sweep-lambda",
            "--config",
            "preset:tiny",
            "--grid",
            "80,120",
            "--seeds",
            "1",
            "--slots",
            "8000",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("lambda,seed,stable"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("sweep_summary.json")).unwrap())
            .unwrap();
    assert!(summary["stability"].as_array().unwrap().len() == 2);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn oracle_reports_feasibility_verdicts() {
    // Inside the region: feasible with a certificate.
    let out = mecsim()
        .args([
            "oracle",
            "--config",
            "preset:tiny",
            "--objective",
            "feasibility",
            "--lambda",
            "50",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["feasible"], true);

    // Far outside: infeasible, still exit 0 (a verdict, not an error).
    let out = mecsim()
        .args([
            "oracle",
            "--config",
            "preset:tiny",
            "--objective",
            "feasibility",
            "--lambda",
            "500",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["feasible"], false);
}

#[test]
fn missing_config_is_an_error() {
    let out = mecsim()
        .args(["validate", "--config", "/nonexistent/path.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn preset_output_is_loadable() {
    let dir = tempdir("preset");
    let text = mecsim().args(["preset", "desk"]).output().unwrap();
    assert!(text.status.success());
    let path = dir.join("desk.json");
    std::fs::write(&path, &text.stdout).unwrap();
    let out = mecsim()
        .args(["validate", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(Path::new(&path).exists());
    let _ = std::fs::remove_dir_all(&dir);
}
