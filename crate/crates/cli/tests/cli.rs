use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn enertrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enertrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    enertrade(&args)
}

#[test]
fn run_writes_stable_reports_and_a_summary_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(dir.path(), &["--scenario", "tiny2x2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out);
    assert_eq!(line.lines().count(), 1);
    assert!(line.contains("n_T=") && line.contains("welfare=") && line.contains("blocks="), "{line}");
    for name in ["trades.csv", "summary.json", "ledger.jsonl"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "tiny2x2");
    for l in fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap().lines() {
        serde_json::from_str::<serde_json::Value>(l).unwrap();
    }
}

#[test]
fn same_invocation_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flags = ["--scenario", "case33", "--omega", "2", "--seed", "7"];
    assert_eq!(code(&run_into(a.path(), &flags)), 0);
    assert_eq!(code(&run_into(b.path(), &flags)), 0);
    for name in ["trades.csv", "summary.json", "ledger.jsonl"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn overrides_reach_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(
        dir.path(),
        &["--scenario", "tiny2x2", "--omega", "1", "--groups", "2", "--seed", "4", "--ad-mode", "off"],
    );
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["omega"], 1.0);
    assert_eq!(summary["groups"], 2);
    assert_eq!(summary["seed"], 4);
    assert_eq!(summary["ad_mode"], false);
}

#[test]
fn sweep_emits_one_csv_row_per_omega() {
    let out = enertrade(&["sweep", "--scenario", "tiny2x2", "--omega", "0,0.5,1,2", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    let csv = stdout(&out);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "omega,n_t,welfare,p2p_energy_kwh,service_charges");
    assert_eq!(rows.len(), 5);
    let n_t: Vec<usize> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(n_t.windows(2).all(|w| w[0] >= w[1]), "{n_t:?}");
}

#[test]
fn compare_and_ablate_have_two_columns() {
    let out = enertrade(&["compare", "--scenario", "tiny2x2", "--format", "csv"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("quantity,p2p,grid_only\n"));
    let out = enertrade(&["ablate", "--scenario", "tiny2x2", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["without"]["groups"], 1);
}

#[test]
fn verify_col_passes_on_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = enertrade(&["verify-col", "--scenario", "tiny2x2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("col.json")).unwrap()).unwrap();
    assert_eq!(v["advertisements"], v["verified"]);
    assert_eq!(v["audit"]["attacks"].as_array().unwrap().len(), 3);
}

#[test]
fn bad_flags_exit_two() {
    for args in [
        &["run", "--bogus"][..],
        &["run", "--format", "xml"],
        &["run", "--scenario", "tiny2x2", "--omega", "1,2"],
        &["sweep", "--scenario", "tiny2x2", "--omega", "2,1"],
        &["run", "--scenario", "tiny2x2", "--groups", "0"],
        &["run", "--scenario", "tiny2x2", "--ad-mode", "maybe"],
        &["launch"],
    ] {
        let out = enertrade(args);
        assert_eq!(code(&out), 2, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn invalid_scenarios_exit_three_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"name\": \"x\",\n  \"topology\": \"case33\",\n  \"agents\": [\n    {\"id\": 1, \"rol\": 2}\n  ]\n}\n")
        .unwrap();
    let out = enertrade(&["run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));
    assert_eq!(code(&enertrade(&["run", "--scenario", "case34"])), 3);
}

#[test]
fn iteration_cap_exits_four_with_partial_reports() {
    let dir = tempfile::tempdir().unwrap();
    let bundled = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/scenarios/tiny2x2.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(bundled).unwrap()).unwrap();
    doc["max_iter"] = 3.into();
    let path = dir.path().join("capped.json");
    fs::write(&path, doc.to_string()).unwrap();
    let reports = dir.path().join("out");
    let out = enertrade(&["run", "--scenario", path.to_str().unwrap(), "--out", reports.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("did not converge"));
    assert!(reports.join("summary.json").is_file());
}
