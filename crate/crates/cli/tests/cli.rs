//! End-to-end checks of the command-line surface: subcommands, exit
//! codes, CSV shape, and byte-determinism across worker counts.

use std::path::PathBuf;
use std::process::Command;

fn ebin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ebin"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

#[test]
fn strata_check_paper_passes_for_reference_dims() {
    for n in ["4", "5", "6"] {
        let out = ebin().args(["strata", "--n", n, "--check-paper"]).output().unwrap();
        assert!(out.status.success(), "n = {n}: {out:?}");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("match"), "{text}");
    }
}

#[test]
fn strata_csv_rows_match_face_count() {
    let out = ebin().args(["strata", "--n", "5", "--csv"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    // Header plus the 11 faces of codim <= 5.
    assert_eq!(rows.len(), 12, "{text}");
    assert!(rows[0].starts_with("n,m,codim"));
    assert!(rows.iter().any(|r| r.contains("(2,1,1,1)") && r.contains(",6,")));
}

#[test]
fn strata_rejects_out_of_range_dimension() {
    let out = ebin().args(["strata", "--n", "12"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_normal_form_passes_and_unknown_suite_is_config_error() {
    let out = ebin().args(["verify", "--suite", "normal-form", "--seed", "9"]).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    let out = ebin().args(["verify", "--suite", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_flat_scenario_is_zero_and_horizon_exits_three() {
    let out = ebin()
        .args(["trace", "--scenario"])
        .arg(fixture("flat-t2.scn"))
        .args(["--method", "oracle"])
        .output()
        .unwrap();
    // The fixture runs into the overflow horizon at t = 20.
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "region,t,sup_R,inf_R,mean_R"
    );
    for line in lines {
        let sup: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(sup.abs() < 1e-9, "{line}");
    }
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("horizon"), "{err}");
}

#[test]
fn trace_bytes_identical_across_worker_counts() {
    let run = |workers: &str| {
        let out = ebin()
            .args(["--workers", workers, "trace", "--scenario"])
            .arg(fixture("small-rotation-t3.scn"))
            .args(["--method", "diagonal"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{out:?}");
        out.stdout
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a, b);
}

#[test]
fn trace_compare_oracle_adds_columns() {
    let out = ebin()
        .args(["trace", "--scenario"])
        .arg(fixture("small-rotation-t3.scn"))
        .args(["--method", "diagonal", "--compare-oracle"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("region,t,sup_R,inf_R,mean_R,oracle_sup_R,oracle_inf_R,oracle_mean_R"));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("max |sup_R - oracle_sup_R|"), "{err}");
}

#[test]
fn cluster_reports_margins() {
    let out = ebin()
        .args(["cluster", "--scenario"])
        .arg(fixture("small-rotation-t3.scn"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("clustering m = (1,1,1)"), "{text}");
    assert!(text.contains("off-block residual"), "{text}");
}

#[test]
fn generic_flags_degenerate_hits() {
    let out = ebin()
        .args(["generic", "--scenario"])
        .arg(fixture("degenerate-n2.scn"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("DEGENERATE"), "{text}");
}

#[test]
fn perturb_repairs_degenerate_scenario() {
    let out = ebin()
        .args(["perturb", "--scenario"])
        .arg(fixture("degenerate-n2.scn"))
        .args(["--magnitude", "0.35", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("accepted"), "{text}");
}

#[test]
fn asymp_emits_fit_row() {
    let out = ebin()
        .args(["asymp", "--scenario"])
        .arg(fixture("small-rotation-t3.scn"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let row: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(row["c2"].as_f64().unwrap() > 0.0);
    assert!((row["predicted_rate"].as_f64().unwrap() - 2.4).abs() < 1e-9);
    assert!(text.contains("verdict: member"), "{text}");
}

#[test]
fn verify_json_file_matches_stdout_payload() {
    let dir = std::env::temp_dir().join("ebin-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let out = ebin()
        .args(["verify", "--suite", "whitney-a", "--seed", "3", "--json"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains(&body));
    let _ = scenario("rotation-t3.scn");
}
