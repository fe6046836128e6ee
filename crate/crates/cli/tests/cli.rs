use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ssbm-sim"))
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ssbm-sim-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = bin().arg("fig9").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown scenario"));
}

#[test]
fn stochastic_scenario_needs_a_seed() {
    let out = bin().args(["fdm", "--channels", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_override_is_a_usage_error() {
    let out = bin()
        .args(["plan", "--set", "drive.nonsense=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ideal_theta_sweep_passes_its_checks() {
    let dir = scratch("theta");
    let out = run(&["theta-sweep", "--profile", "ideal", "--check"], &dir);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("theta_sweep.csv")).unwrap();
    assert!(csv.starts_with("theta_rad,n,power_db\n"));
    let m = manifest(&dir);
    assert_eq!(m["scenario"], "theta-sweep");
    assert_eq!(m["profile"], "ideal");
    let names: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    for f in [
        "config.toml",
        "theta_sweep.csv",
        "metrics.json",
        "summary.txt",
    ] {
        assert!(names.contains(&f), "{names:?}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["modulation_gain_db"], -3.01);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.lines().all(|l| l.starts_with("[theta-sweep] ")),
        "{stderr}"
    );
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (scratch("rerun-a"), scratch("rerun-b"));
    let args = ["plan", "--channels", "6", "--set", "planner.kappa_hz=3e6"];
    assert_eq!(run(&args, &a).status.code(), Some(0));
    assert_eq!(run(&args, &b).status.code(), Some(0));
    let ma = manifest(&a);
    assert_eq!(ma, manifest(&b));
    for f in ma["files"].as_array().unwrap() {
        let name = f["path"].as_str().unwrap();
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["channels"].as_array().unwrap().len(), 6);
    assert_eq!(plan["channels"][0]["kappa_hz"], 3e6);

    let c = scratch("rerun-c");
    assert_eq!(run(&["plan", "--channels", "5"], &c).status.code(), Some(0));
    assert_ne!(ma["config_sha256"], manifest(&c)["config_sha256"]);
    for d in [a, b, c] {
        std::fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn failed_check_exits_with_one() {
    let dir = scratch("compression");
    let out = run(&["figS5", "--check"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("FAIL compression"), "{summary}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn profile_file_layers_on_a_builtin() {
    let dir = scratch("file");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("p.toml");
    std::fs::write(&cfg, "base = \"ideal\"\n\n[drive]\nif_hz = 5e6\n").unwrap();
    let out_dir = dir.join("out");
    let out = run(
        &["if-limits", "--profile", cfg.to_str().unwrap(), "--check"],
        &out_dir,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let toml = std::fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(toml.contains("if_hz = 5000000.0"), "{toml}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn written_config_reproduces_the_run() {
    let a = scratch("replay-a");
    assert_eq!(
        run(
            &["if-limits", "--profile", "ideal", "--if-freq-hz", "7e6"],
            &a
        )
        .status
        .code(),
        Some(0)
    );
    let b = scratch("replay-b");
    let cfg = a.join("config.toml");
    assert_eq!(
        run(&["if-limits", "--profile", cfg.to_str().unwrap()], &b)
            .status
            .code(),
        Some(0)
    );
    for f in [
        "config.toml",
        "if_limits.csv",
        "bias_3mhz.csv",
        "bias_60mhz.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    for d in [a, b] {
        std::fs::remove_dir_all(d).unwrap();
    }
}
