use std::path::Path;
use std::process::{Command, Output};

fn armapp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_armapp")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    let fit = dir.path().join("fit.json");
    let out = armapp(&[
        "simulate", "--mu", "0.1", "--mark-mean", "4", "--theta-scale", "0.1", "--eta", "0.5", "--n", "2000",
        "--burn-in", "0", "--seed", "4", "-o", path(&events),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = armapp(&["fit", path(&events), "--variant", "observed", "-o", path(&fit)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&fit).unwrap()).unwrap();
    let text = json.to_string();
    assert!(text.contains("\"variant\""), "{text}");
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    assert_eq!(armapp(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(armapp(&["simulate", "--eta", "1.2", "--gamma", "1", "--n", "10"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "# window_end=10\ntime\n1.0\nnot-a-number\n").unwrap();
    let out = armapp(&["fit", path(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn inarma_simulate_writes_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("counts.csv");
    let out = armapp(&[
        "inarma", "simulate", "--mu-tilde", "0.5", "--theta", "0.4,0.2", "--phi", "0.3", "--length", "50", "-o",
        path(&out_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("bin,N,eps"));
    assert_eq!(lines.count(), 50);
}

#[test]
fn study_writes_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    std::fs::write(
        &cfg,
        "variant = observed\nmarked = true\nmu = 0.1\nmark_mean = 4\ntheta_scale = 0.1\neta = 0.5\nphi_scale = 1\n\
         n = 300\nreplications = 3\nseed = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = armapp(&["study", path(&cfg), "--threads", "2", "--out-dir", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["raw.csv", "summary.csv", "runtime.csv"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let raw = std::fs::read_to_string(out_dir.join("raw.csv")).unwrap();
    assert!(raw.lines().any(|l| l == "# seed=2"), "{raw}");
}

#[test]
fn palm_table_has_requested_points() {
    let out = armapp(&[
        "palm", "--mu", "0.5", "--gamma", "1.5", "--theta-scale", "0.5", "--eta", "0.4", "--events", "5000", "--points",
        "12",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "lag,h_closed,h_bin,h_empirical,std_error,lower,upper");
    assert_eq!(rows.len(), 13);
}
