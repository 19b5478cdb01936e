use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
name = "cli-small"

[model]
omega0 = 1.0
period = 2.0
coupling = 0.6

[[reservoirs]]
beta = 0.5
envelope = { kind = "cosine", mean = 1.0, amplitude = 0.6 }
radial = { kind = "power_gaussian", power = 2, scale = 2.0 }

[[reservoirs]]
beta = 2.0
envelope = { kind = "constant", value = 0.8 }
radial = { kind = "power_gaussian", power = 2, scale = 1.5 }

[discretization]
modes = 16
u_max = 6.0

[run]
cycles = 8
"#;

fn qcycle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcycle")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let oa = qcycle(&["run", "--config", &cfg, "--out", s(&a), "--seedless"]);
    let ob = qcycle(&["--workers", "1", "run", "--config", &cfg, "--out", s(&b)]);
    assert!(matches!(oa.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&oa.stderr));
    assert_eq!(oa.status.code(), ob.status.code());
    for f in ["trajectory.csv", "ledger.json", "report.json", "state.snap"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_continues_from_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    qcycle(&["run", "--config", &cfg, "--out", s(&a)]);
    let b = dir.path().join("b");
    let snap = a.join("state.snap");
    let o = qcycle(&["run", "--config", &cfg, "--out", s(&b), "--resume", s(&snap), "--cycles", "6"]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(b.join("report.json")).unwrap();
    assert!(report.contains("\"start_cycle\": 8"), "{report}");
}

#[test]
fn malformed_config_fails_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("beta = 2.0", "beta = -2.0"));
    let o = qcycle(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reservoirs[1].beta"));

    let cfg = write_config(dir.path(), &CONFIG.replace("modes = 16", "nodes = 16"));
    let o = qcycle(&["run", "--config", &cfg, "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nodes"));
}

#[test]
fn sweep_writes_one_manifest_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{CONFIG}\n[sweep]\ng = [1e-3, 2e-3, 4e-3]\n"));
    let out = dir.path().join("sweep");
    let o = qcycle(&["--workers", "2", "sweep", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.code().is_some_and(|c| c != 1), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 4);
    for (k, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{k},")));
    }
    let plots = dir.path().join("plots");
    let o = qcycle(&["plots", "--input", s(&out.join("manifest.csv")), "--out", s(&plots)]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(plots.join("eta_vs_g.csv")).unwrap().lines().count(), 4);

    // no axes: a single point
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("single");
    qcycle(&["sweep", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(out.join("manifest.csv")).unwrap().lines().count(), 2);
}

#[test]
fn resonances_table_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let o = qcycle(&["resonances", "--config", &cfg, "--k-min", "-1", "--k-max", "1"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("convention,k,j,re_e,im_e,lamb_shift,width,g"));
    assert_eq!(text.lines().count(), 1 + 3 * 4);
    let out = dir.path().join("res");
    let o = qcycle(&["resonances", "--config", &cfg, "--convention", "standard", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("resonances.json").exists());
}

#[test]
fn plots_from_missing_input_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = qcycle(&["plots", "--input", s(&dir.path().join("nope")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}
