//! End-to-end checks of the binary: subcommands, exit codes, and output
//! files.

use std::path::Path;
use std::process::Command;

fn rcbf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rcbf"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL_SWEEP: &str = r#"
[experiment]
name = cli_small
seed = 3

[system]
kind = scalar

[alpha]
kind = linear
c = 1.0

[filter]
kind = rcbf
gamma1 = 0.2
gamma2 = 0.2

[nominal]
kind = zero

[estimate]
kind = exact

[disturbance]
kind = worst_case
dbar = 0.1

[sim]
dt = 0.001
horizon = 0.5
escape_radius = 10.0
record_stride = 10
x0 = 0.5

[sweep]
variable = disturbance_dbar
values = 0.05, 0.1

[output]
dir = PLACEHOLDER
prefix = cli_small
"#;

#[test]
fn sweep_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        &SMALL_SWEEP.replace("PLACEHOLDER", &out.display().to_string()),
    );
    let output = rcbf().args(["sweep", &cfg]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary = std::fs::read_to_string(out.join("cli_small_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3, "header + one row per sweep value");
    assert!(summary.lines().nth(1).unwrap().contains("completed"));
    assert!(out.join("cli_small_rcbf_0p05.csv").exists());
    assert!(out.join("cli_small_rcbf_0p1.csv").exists());
    let svg = std::fs::read_to_string(out.join("cli_small_h.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn simulate_respects_overrides_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        &SMALL_SWEEP.replace("PLACEHOLDER", "unused"),
    );
    for out in [&out1, &out2] {
        let output = rcbf()
            .args([
                "simulate",
                &cfg,
                "--out-dir",
                &out.display().to_string(),
                "--horizon",
                "0.2",
                "--quiet",
            ])
            .output()
            .unwrap();
        assert!(output.status.success());
        assert!(output.stdout.is_empty(), "--quiet must silence the report");
    }
    let a = std::fs::read(out1.join("cli_small_rcbf.csv")).unwrap();
    let b = std::fs::read(out2.join("cli_small_rcbf.csv")).unwrap();
    assert_eq!(a, b, "identical configs must produce identical files");
}

#[test]
fn bundled_configs_certify() {
    let output = rcbf().args(["certify", "scalar_fig3"]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("violations         : 0"));
    assert!(stdout.contains("admissible uniform delta"));
}

#[test]
fn config_errors_exit_2() {
    let out = rcbf().args(["sweep", "no_such_config"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = write_cfg(dir.path(), "bad.cfg", "[system]\nkind = scalar\nbogus = 1\n");
    let out = rcbf().args(["simulate", &bad]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn infeasible_abort_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "infeasible.cfg",
        r#"
[system]
kind = scalar

[filter]
kind = mrcbf
delta = 0.05
l_lfh = 3.59
l_lgh = 4.0
l_alphah = 2.0

[sim]
x0 = 1.0
horizon = 1.0
"#,
    );
    let out = rcbf()
        .args(["simulate", &cfg, "--out-dir", &dir.path().join("o").display().to_string()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn io_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        &SMALL_SWEEP.replace("PLACEHOLDER", "unused"),
    );
    let out = rcbf()
        .args(["simulate", &cfg, "--out-dir", "/proc/definitely/not/writable"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn compare_requires_second_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        &SMALL_SWEEP.replace("PLACEHOLDER", &dir.path().join("o").display().to_string()),
    );
    let out = rcbf().args(["compare", &cfg]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thresholds_on_bundled_config() {
    let output = rcbf().args(["thresholds", "actuation_thm1"]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("eps1"));
    assert!(stdout.contains("eps2"));
}
