//! Binary-level checks of the command-line surface.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specstop"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("specstop_cli_tests").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("Usage"), "stderr: {text}");
}

#[test]
fn version_flag_prints_build_identifier() {
    let out = bin().arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("specstop"), "stdout: {text}");
}

#[test]
fn rates_well_posed_branch_prints_one_over_n() {
    let out = bin()
        .args([
            "rates", "--q", "1", "--p", "3", "--nu", "1", "--rho", "1", "--n", "100",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().next().unwrap(), "n,q,p,nu,rho,branch,rate");
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("100,1,3,1,1,one_over_n,"), "row: {row}");
    assert!(row.ends_with(",0.01"), "row: {row}");
}

#[test]
fn rates_accepts_a_grid_of_n() {
    let out = bin()
        .args([
            "rates", "--q", "2", "--p", "2", "--nu", "1", "--rho", "1", "--n", "100", "--n", "1000",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("power_law"));
}

#[test]
fn problem_export_writes_schema() {
    let dir = temp_dir("problem");
    let path = dir.join("diag.csv");
    let out = bin()
        .args([
            "problem",
            "--kind",
            "diagonal",
            "--m",
            "5",
            "--export",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "j,sigma,xhat,yhat");
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn run_writes_both_csvs_and_respects_unknown_key_errors() {
    let dir = temp_dir("run");
    let config = dir.join("exp.cfg");
    std::fs::write(
        &config,
        "problem = diagonal\nm = 15\nnoise = gaussian_profile\nn_list = 20, 40\nreplications = 3\nrules = plain; oracle\nmaster_seed = 7\n",
    )
    .unwrap();
    let out = bin()
        .args([
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.join("risk_table.csv")).unwrap();
    assert!(summary.starts_with("rule,n,R,median_err"));
    // plain + oracle_exact + oracle_empirical over two n values.
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
    let raw = std::fs::read_to_string(dir.join("risk_table_raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 1 + 3 * 2 * 3);

    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "problem = diagonal\nbogus = 1\n").unwrap();
    let out = bin()
        .args(["run", "--config", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn selfcheck_exits_zero_and_prints_pass_lines() {
    let out = bin().arg("selfcheck").output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 5);
    assert!(!text.contains("FAIL"));
}
