use cns_core::harness::{report, run, verify_all, write_suite, Pipeline, Scenario};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

fn listed(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn quick(name: &str) -> Scenario {
    let mut sc = Scenario::builtin(name).unwrap();
    sc.resolution = 16;
    sc.solver.horizon = 0.05;
    sc
}

#[test]
fn builtin_scenarios_roundtrip_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    for name in Scenario::builtin_names() {
        let sc = Scenario::builtin(name).unwrap();
        let path = tmp.path().join(format!("{name}.cfg"));
        fs::write(&path, sc.to_config()).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), sc);
    }
    assert!(Scenario::builtin("vortex").is_err());
    assert!(Scenario::load(&tmp.path().join("missing.cfg")).is_err());
}

#[test]
fn quiescent_run_writes_complete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = quick("quiescent");
    sc.pipelines.push(Pipeline::Estimates);
    sc.estimate_trials = 2;
    let m = run(&sc, tmp.path()).unwrap();
    assert!(m.success(), "{}", m.to_text());
    let dir = tmp.path().join("quiescent");
    assert_eq!(m.output_dir, dir);
    let files: BTreeSet<String> = m.files.iter().cloned().collect();
    assert_eq!(files.len(), m.files.len());
    assert_eq!(files, listed(&dir));
    for f in ["scenario.cfg", "convergence.csv", "lagrangian.chk", "equivalence.csv", "estimates.csv", "manifest.txt"] {
        assert!(files.contains(f), "{f}");
    }
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert_eq!(text, m.to_text());
    assert!(text.lines().last() == Some("status = pass"));
    let (header, rows) = csv_rows(&dir.join("convergence.csv"));
    assert_eq!(header, ["iter", "ep_diff", "ratio", "smallness", "mass_drift", "momentum_drift", "energy_drift"]);
    assert!(!rows.is_empty());
    let (header, rows) = csv_rows(&dir.join("equivalence.csv"));
    assert_eq!(header, ["time", "field", "max_diff", "besov_diff", "resolution"]);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() <= 1e-12));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = quick("smallwave");
    let snapshot = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let m = run(&sc, root).unwrap();
        m.files.iter().filter(|f| *f != "manifest.txt").map(|f| (f.clone(), fs::read(m.output_dir.join(f)).unwrap())).collect()
    };
    let a = snapshot(&tmp.path().join("a"));
    let b = snapshot(&tmp.path().join("b"));
    assert_eq!(a, b);
    // a rerun into the same directory replaces it
    let c = snapshot(&tmp.path().join("a"));
    assert_eq!(a, c);
}

#[test]
fn report_lists_every_checkpoint_field() {
    let tmp = tempfile::tempdir().unwrap();
    let sc = quick("heat-mode");
    run(&sc, tmp.path()).unwrap();
    let out = report(&tmp.path().join("heat-mode")).unwrap();
    let path = tmp.path().join("report.csv");
    fs::write(&path, out).unwrap();
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, ["time", "field", "besov", "max"]);
    let fields: BTreeSet<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(fields, BTreeSet::from(["K", "rho", "u"]));
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));
    assert!(report(tmp.path()).is_err());
}

#[test]
fn invalid_scenario_is_rejected_before_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sc = quick("quiescent");
    sc.solver.dt = -1.0;
    assert!(run(&sc, tmp.path()).is_err());
    assert!(!tmp.path().join("quiescent").exists());
}

#[test]
fn verification_suite_passes_and_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let rep = verify_all(&[32], 5, 0).unwrap();
    assert!(rep.success(), "{}", rep.to_csv());
    let m = write_suite(&rep, tmp.path(), 0).unwrap();
    assert_eq!(m.files.iter().cloned().collect::<BTreeSet<_>>(), listed(tmp.path()));
    let (header, rows) = csv_rows(&tmp.path().join("estimates.csv"));
    assert_eq!(header, ["kind", "trial", "resolution", "lhs", "rhs", "ratio"]);
    assert!(!rows.is_empty());
}
